import numpy as np
import pytest

from protorec.ontology import parse_taxonomy

TOY_TAXONOMY = """\
taxonomy/v1
objects\tROOT:objects\tobject\tPortrayable things
animals\tROOT:animals\tanimal\tLiving creatures
furniture\tobjects\tfurniture\tMovable room articles
chair\tfurniture\tchair|seat\tA seat for one person
table\tfurniture\ttable\tFurniture with a flat top
dog\tanimals\tdog\tA domesticated canine
"""


@pytest.fixture
def toy_taxonomy():
    return parse_taxonomy(TOY_TAXONOMY)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
