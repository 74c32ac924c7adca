import math

import pytest

from protorec.ontology import (
    CycleDetected,
    OntologyError,
    OrphanParent,
    ParseError,
    UnknownSynset,
    closeness_message,
    load_default_taxonomy,
    load_taxonomy,
    parse_taxonomy,
)
from tests.conftest import TOY_TAXONOMY


def test_toy_fixture_loads(toy_taxonomy):
    assert len(toy_taxonomy) == 6
    assert toy_taxonomy.roots() == ["animals", "objects"]
    assert toy_taxonomy.get("chair").root_category == "objects"
    assert toy_taxonomy.get("dog").root_category == "animals"


def test_load_from_file(tmp_path):
    path = tmp_path / "tax.txt"
    path.write_text(TOY_TAXONOMY, encoding="utf-8")
    tax = load_taxonomy(path)
    assert "chair" in tax


def test_default_taxonomy_is_valid():
    tax = load_default_taxonomy()
    assert len(tax.roots()) == 4
    assert "chair.n.01" in tax
    # the merged objects root splits into man-made and natural at level 2
    assert tax.get("rock.n.01").root_category == "objects"
    assert tax.ancestor_at_depth("rock.n.01", 2) == "natural_object.n.01"
    assert tax.ancestor_at_depth("chair.n.01", 2) == "artifact.n.01"


def test_cycle_detected():
    text = "taxonomy/v1\na\tb\tx\tdef a\nb\ta\ty\tdef b\n"
    with pytest.raises(CycleDetected):
        parse_taxonomy(text)


def test_orphan_parent():
    text = "taxonomy/v1\na\tmissing\tx\tdef a\n"
    with pytest.raises(OrphanParent):
        parse_taxonomy(text)


@pytest.mark.parametrize(
    "text",
    [
        "a\tROOT:objects\tx\tdef\n",  # missing version header
        "taxonomy/v1\na\tROOT:objects\tx\n",  # wrong field count
        "taxonomy/v1\na\tROOT:vehicles\tx\tdef\n",  # unknown root category
        "taxonomy/v1\na\tROOT:objects\tx\tdef\na\tROOT:objects\ty\tdef\n",  # dup id
        "taxonomy/v1\na\tROOT:objects\t\tdef\n",  # no lemmas
    ],
)
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_taxonomy(text)


def test_lookup_lemma_basic(toy_taxonomy):
    assert toy_taxonomy.lookup_lemma("chair") == [("chair", "A seat for one person")]
    assert toy_taxonomy.lookup_lemma("unknown-word") == []


def test_lookup_lemma_homonym_sorted():
    # "mouse" names both the rodent and the pointing device in the shipped fixture.
    tax = load_default_taxonomy()
    hits = [sid for sid, _ in tax.lookup_lemma("mouse")]
    assert hits == sorted(hits)
    assert set(hits) == {"mouse.n.01", "computer_mouse.n.01"}


def test_lookup_lemma_only_returns_carriers(toy_taxonomy):
    for lemma in ("chair", "seat", "table", "dog", "object"):
        for sid, _ in toy_taxonomy.lookup_lemma(lemma):
            assert lemma in toy_taxonomy.get(sid).lemmas


def test_common_ancestor_same_synset(toy_taxonomy):
    assert toy_taxonomy.common_ancestor_depth("chair", "chair") == toy_taxonomy.depth("chair") == 3


def test_common_ancestor_different_roots_is_zero(toy_taxonomy):
    assert toy_taxonomy.common_ancestor_depth("dog", "chair") == 0


def test_common_ancestor_shared_furniture():
    # Fixture walk: chair -> furniture -> objects ; table -> furniture -> objects.
    # Shared prefix [objects, furniture] puts the meet at depth 2.
    tax = parse_taxonomy(
        "taxonomy/v1\n"
        "objects\tROOT:objects\tobject\tthings\n"
        "furniture\tobjects\tfurniture\troom articles\n"
        "chair\tfurniture\tchair\ta seat\n"
        "table\tfurniture\ttable\ta flat top\n"
    )
    assert tax.common_ancestor_depth("chair", "table") == 2


def test_common_ancestor_symmetry(toy_taxonomy):
    ids = toy_taxonomy.ids()
    for a in ids:
        for b in ids:
            assert toy_taxonomy.common_ancestor_depth(a, b) == toy_taxonomy.common_ancestor_depth(b, a)


def test_common_ancestor_with_own_ancestor(toy_taxonomy):
    assert toy_taxonomy.common_ancestor_depth("chair", "furniture") == 2
    assert toy_taxonomy.common_ancestor_depth("chair", "objects") == 1


def test_common_ancestor_unknown_synset(toy_taxonomy):
    with pytest.raises(UnknownSynset):
        toy_taxonomy.common_ancestor_depth("chair", "nope")


def test_closeness_totally_wrong():
    assert closeness_message(0, 3) == "totally_wrong"


def test_closeness_correct():
    for depth in (1, 2, 5):
        assert closeness_message(depth, depth) == "correct"


def test_closeness_depth3_of_4_is_very_close():
    # Band arithmetic: close band is [1, ceil(4/2)] = [1, 2], so 3 falls above it.
    assert closeness_message(3, 4) == "very_close"


def test_closeness_band_enumeration():
    for predicted in range(1, 8):
        for depth in range(0, predicted + 1):
            got = closeness_message(depth, predicted)
            if depth == 0:
                assert got == "totally_wrong"
            elif depth == predicted:
                assert got == "correct"
            elif depth <= math.ceil(predicted / 2):
                assert got == "close"
            else:
                assert got == "very_close"


def test_closeness_rejects_invalid_depths():
    with pytest.raises(OntologyError):
        closeness_message(3, 2)
    with pytest.raises(OntologyError):
        closeness_message(-1, 2)
