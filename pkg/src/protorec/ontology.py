"""Semantic class taxonomy: synsets with lemmas, definitions, and root
categories, plus the shared-ancestor arithmetic behind result messages.

The fixture format is one node per line, tab separated::

    taxonomy/v1
    chair.n.01<TAB>furniture.n.01<TAB>chair<TAB>A seat for one person...
    objects<TAB>ROOT:objects<TAB>object|thing<TAB>Portrayable things...

The second field is either the parent synset id or ``ROOT:<category>`` with
category one of animals, food_drinks, plants, objects.  Lines starting with
``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

ROOT_CATEGORIES = ("animals", "food_drinks", "plants", "objects")

_FORMAT_TAG = "taxonomy/v1"

CLOSENESS_MESSAGES = ("totally_wrong", "close", "very_close", "correct")


class OntologyError(ValueError):
    """Base class for taxonomy errors."""


class ParseError(OntologyError):
    """Fixture file is syntactically invalid."""


class CycleDetected(OntologyError):
    """A parent chain loops back on itself."""


class OrphanParent(OntologyError):
    """A node references a parent that does not exist."""


class UnknownSynset(OntologyError):
    """Synset id not present in the taxonomy."""


@dataclass(frozen=True)
class Synset:
    synset_id: str
    lemmas: tuple[str, ...]
    definition: str
    parent: str | None
    root_category: str


class Taxonomy:
    """Immutable rooted tree of synsets with a lemma inverted index."""

    def __init__(self, synsets: dict[str, Synset]) -> None:
        self._synsets = synsets
        self._lemma_index: dict[str, list[str]] = {}
        self._depths: dict[str, int] = {}
        for sid, syn in synsets.items():
            for lemma in syn.lemmas:
                self._lemma_index.setdefault(lemma, []).append(sid)
        for ids in self._lemma_index.values():
            ids.sort()
        for sid in synsets:
            self._depths[sid] = len(self._chain(sid))

    def _chain(self, synset_id: str) -> list[str]:
        """Ancestor chain root-first, including the node itself."""
        chain = []
        node: str | None = synset_id
        while node is not None:
            chain.append(node)
            node = self._synsets[node].parent
        chain.reverse()
        return chain

    def __contains__(self, synset_id: str) -> bool:
        return synset_id in self._synsets

    def __len__(self) -> int:
        return len(self._synsets)

    def get(self, synset_id: str) -> Synset:
        try:
            return self._synsets[synset_id]
        except KeyError:
            raise UnknownSynset(f"no synset {synset_id!r}") from None

    def ids(self) -> list[str]:
        return sorted(self._synsets)

    def roots(self) -> list[str]:
        return sorted(s.synset_id for s in self._synsets.values() if s.parent is None)

    def depth(self, synset_id: str) -> int:
        """Depth with roots at 1; the virtual super-root is depth 0."""
        self.get(synset_id)
        return self._depths[synset_id]

    def ancestor_at_depth(self, synset_id: str, depth: int) -> str:
        """Ancestor at the given depth, or the node itself if shallower."""
        chain = self._chain(self.get(synset_id).synset_id)
        if depth < 1:
            raise OntologyError("depth must be >= 1")
        return chain[depth - 1] if depth <= len(chain) else synset_id

    def lookup_lemma(self, lemma: str) -> list[tuple[str, str]]:
        """All (synset_id, definition) pairs carrying the lemma, id-sorted."""
        return [
            (sid, self._synsets[sid].definition)
            for sid in self._lemma_index.get(lemma, [])
        ]

    def common_ancestor_depth(self, s1: str, s2: str) -> int:
        """Depth of the deepest shared ancestor; 0 when root categories differ."""
        self.get(s1)
        self.get(s2)
        chain1 = self._chain(s1)
        chain2 = self._chain(s2)
        depth = 0
        for a, b in zip(chain1, chain2):
            if a != b:
                break
            depth += 1
        return depth


def closeness_message(depth: int, predicted_depth: int) -> str:
    """Band the shared-ancestor depth of a wrong guess into a message key."""
    if not 0 <= depth <= predicted_depth:
        raise OntologyError("need 0 <= depth <= predicted_depth")
    if depth == 0:
        return "totally_wrong"
    if depth == predicted_depth:
        return "correct"
    if depth <= math.ceil(predicted_depth / 2):
        return "close"
    return "very_close"


def _validate(synsets: dict[str, Synset]) -> None:
    for sid, syn in synsets.items():
        if syn.parent is not None and syn.parent not in synsets:
            raise OrphanParent(f"{sid} references missing parent {syn.parent!r}")
    for sid in synsets:
        seen = set()
        node: str | None = sid
        while node is not None:
            if node in seen:
                raise CycleDetected(f"parent cycle through {node!r}")
            seen.add(node)
            node = synsets[node].parent


def parse_taxonomy(text: str) -> Taxonomy:
    lines = [
        (n, line.strip())
        for n, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.strip().startswith("#")
    ]
    if not lines or lines[0][1] != _FORMAT_TAG:
        raise ParseError(f"first non-comment line must be {_FORMAT_TAG!r}")
    synsets: dict[str, Synset] = {}
    pending: list[tuple[int, str, str]] = []  # (lineno, id, parent_field)
    for lineno, line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"line {lineno}: expected 4 tab-separated fields")
        sid, parent_field, lemma_field, definition = parts
        if not sid:
            raise ParseError(f"line {lineno}: empty synset id")
        if sid in synsets:
            raise ParseError(f"line {lineno}: duplicate synset id {sid!r}")
        lemmas = tuple(l for l in lemma_field.split("|") if l)
        if not lemmas:
            raise ParseError(f"line {lineno}: synset {sid!r} has no lemmas")
        if parent_field.startswith("ROOT:"):
            category = parent_field[len("ROOT:") :]
            if category not in ROOT_CATEGORIES:
                raise ParseError(f"line {lineno}: unknown root category {category!r}")
            synsets[sid] = Synset(sid, lemmas, definition, None, category)
        else:
            if not parent_field:
                raise ParseError(f"line {lineno}: empty parent field")
            synsets[sid] = Synset(sid, lemmas, definition, parent_field, "")
            pending.append((lineno, sid, parent_field))

    _validate(synsets)

    # Fill in root categories now that the chains are known to terminate.
    def root_category(sid: str) -> str:
        node = synsets[sid]
        while node.parent is not None:
            node = synsets[node.parent]
        return node.root_category

    for _, sid, _ in pending:
        syn = synsets[sid]
        synsets[sid] = Synset(
            syn.synset_id, syn.lemmas, syn.definition, syn.parent, root_category(sid)
        )
    return Taxonomy(synsets)


def load_taxonomy(path: str | Path) -> Taxonomy:
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def default_taxonomy_path() -> Path:
    return Path(__file__).parent / "data" / "taxonomy_core.txt"


def load_default_taxonomy() -> Taxonomy:
    return load_taxonomy(default_taxonomy_path())
