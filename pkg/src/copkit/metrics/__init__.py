from .accuracy import exact_accuracy, next_step_correct
from .agreement import annotation_matrix, fleiss_kappa, pairwise_tally
from .breakdown import DEFAULT_BUCKETS, breakdown_report, bucket_label, format_report, report_csv
from .judge import JudgePanel, llm_score, parse_judge_score
from .similarity import GreedyEmbeddingScorer, similarity_score, token_f1, tokenize

__all__ = [
    "DEFAULT_BUCKETS", "GreedyEmbeddingScorer", "JudgePanel", "annotation_matrix", "breakdown_report",
    "bucket_label", "exact_accuracy", "fleiss_kappa", "format_report", "llm_score", "next_step_correct",
    "pairwise_tally", "parse_judge_score", "report_csv", "similarity_score", "token_f1", "tokenize",
]
