"""Grouped metric tables (by domain, by step-length bucket)."""

from __future__ import annotations

import csv
import io
from typing import Mapping, Sequence

from ..errors import UnknownGroupKey

DEFAULT_BUCKETS = ((3, 5), (6, 9), (10, None))
GROUP_KEYS = ("domain", "step_length_bucket", "none")


def bucket_label(length: int, buckets=DEFAULT_BUCKETS) -> str:
    """Bucket of a step length. Lengths below the first bucket fall into it."""
    for i, (lo, hi) in enumerate(buckets):
        if hi is None:
            if length >= lo or i == 0:
                return f"{lo}+"
        elif length <= hi:
            return f"{lo}-{hi}"
    lo, hi = buckets[-1]
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def _group(record: Mapping, group_by: str, buckets) -> str:
    if group_by == "none":
        return "all"
    if group_by == "domain":
        return str(record["domain"])
    if group_by == "step_length_bucket":
        return bucket_label(int(record["step_length"]), buckets)
    raise UnknownGroupKey(f"unknown group_by {group_by!r}; expected one of {GROUP_KEYS}")


def breakdown_report(records: Sequence[Mapping], group_by: str, metric: str, buckets=DEFAULT_BUCKETS) -> dict:
    """Mean of ``record[metric]`` per group plus an ``overall`` row.

    Each record carries grouping metadata (``domain``, ``step_length``) and a
    numeric per-item value under ``metric``. The overall value is the mean over
    items, i.e. the size-weighted mean of the group values.
    """
    if group_by not in GROUP_KEYS:
        raise UnknownGroupKey(f"unknown group_by {group_by!r}; expected one of {GROUP_KEYS}")
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(_group(r, group_by, buckets), []).append(float(r[metric]))
    rows = [{"group": g, "n": len(v), metric: sum(v) / len(v)} for g, v in sorted(groups.items())]
    values = [x for v in groups.values() for x in v]
    overall = {"group": "overall", "n": len(values), metric: sum(values) / len(values) if values else 0.0}
    return {"group_by": group_by, "metric": metric, "rows": rows, "overall": overall}


def report_rows(report: dict) -> list[dict]:
    return [*report["rows"], report["overall"]]


def format_report(reports: Sequence[dict]) -> str:
    """Aligned-column text for reports sharing one ``group_by``."""
    if not reports:
        return ""
    metrics = [r["metric"] for r in reports]
    groups = [row["group"] for row in report_rows(reports[0])]
    table = [["group", "n", *metrics]]
    by_metric = [{row["group"]: row for row in report_rows(r)} for r in reports]
    for g in groups:
        first = by_metric[0][g]
        table.append([g, str(first["n"]), *(f"{bm[g][m]:.2f}" for bm, m in zip(by_metric, metrics))])
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
                     for row in table) + "\n"


def report_csv(reports: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group_by", "metric", "group", "n", "value"])
    for r in reports:
        for row in report_rows(r):
            writer.writerow([r["group_by"], r["metric"], row["group"], row["n"], f"{row[r['metric']]:.6f}"])
    return buf.getvalue()
