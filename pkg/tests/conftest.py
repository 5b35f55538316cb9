import pytest

from copkit.core import Procedure
from copkit.forge import ForgeConfig, forge_instances, generate_corpus


@pytest.fixture(scope="session")
def synth():
    return generate_corpus(n_procedures=60, seed=11)


@pytest.fixture(scope="session")
def instances(synth):
    insts, skipped = forge_instances(synth.procedures, synth.image_store, ForgeConfig(seed=11))
    assert not skipped
    return insts[:50]


@pytest.fixture
def four_steps():
    return Procedure.from_texts("p1", ["Open the hood.", "Remove the cap.", "Pour the coolant.", "Close the hood."])
