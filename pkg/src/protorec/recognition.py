"""Query-time engine: retrieve neighbors, grade confidence, propose classes,
optionally rerank with feature-code histograms, and grow the store from user
validations.

``classify`` is read-only apart from registering a pending-validation token;
``validate``/``admin_flag``/``rebuild_index`` serialize through one writer
lock.  Unreliable prototypes stay in the vector index but are filtered out of
every answer, so flagging never forces a rebuild.
"""

from __future__ import annotations

import time
import uuid
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .ann import AnnIndex, RankedHit
from .ann import DEFAULT_LEAF_CAPACITY, DEFAULT_MAX_NODES, DEFAULT_N_TREES
from .features import RegionOfInterest
from .metadata import (
    DEFAULT_RERANK_GAP,
    FeatureCodeHistograms,
    rerank_with_feature_code,
)
from .ontology import Taxonomy, UnknownSynset
from .vectors import Descriptor, DimensionMismatch, distances_to

DEFAULT_K = 10
DEFAULT_TOKEN_TTL = 24 * 3600.0

DECISIONS = ("confirm", "pick_alternative", "pick_manual", "reject_unknown")


class RecognitionError(ValueError):
    """Base class for engine errors."""


class UnknownUser(RecognitionError):
    """Own-images scope names a user with no stored prototypes."""


class UnknownResponse(RecognitionError):
    """Validation token does not exist or has expired."""


class AlreadyValidated(RecognitionError):
    """Validation token was already consumed."""


class UnknownPrototype(RecognitionError):
    """No prototype with that id."""


@dataclass
class Prototype:
    id: int
    descriptor: Descriptor
    class_synset: str
    metadata: dict
    user_id: str
    timestamp: float
    roi: RegionOfInterest | None = None
    reliable: bool = True
    user_label: str | None = None


@dataclass(frozen=True)
class ConfidenceThresholds:
    """Distance bands: below ``certain`` is a sure answer, above ``unknown``
    means no sufficiently close prototype exists."""

    certain: float = 0.6
    unknown: float = 1.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.certain < self.unknown:
            raise RecognitionError("need 0 <= certain < unknown")


@dataclass(frozen=True)
class Outcome:
    kind: str  # "certain" | "level" | "unknown"
    level: int | None = None

    @property
    def key(self) -> str:
        """Message-catalog key for this outcome."""
        return f"level_{self.level}" if self.kind == "level" else self.kind

    def rank(self) -> int:
        """Monotone confidence order: lower is more confident."""
        if self.kind == "certain":
            return -1
        if self.kind == "level":
            assert self.level is not None
            return self.level
        return 10


CERTAIN = Outcome("certain")
UNKNOWN_OUTCOME = Outcome("unknown")


def confidence_level(d_min: float, thr: ConfidenceThresholds) -> Outcome:
    """Map the best match distance onto certain / level 0-9 / unknown."""
    if d_min < 0:
        raise RecognitionError("distance must be nonnegative")
    if d_min < thr.certain:
        return CERTAIN
    if d_min > thr.unknown:
        return UNKNOWN_OUTCOME
    span = thr.unknown - thr.certain
    level = int(10.0 * (d_min - thr.certain) / span)
    return Outcome("level", min(level, 9))


@dataclass(frozen=True)
class ProposedClass:
    class_synset: str
    distance: float
    user_label: str | None = None


@dataclass
class RecognitionResponse:
    response_id: str
    proposed: ProposedClass | None
    alternatives: list[str]
    outcome: Outcome
    hits: list[RankedHit]


@dataclass
class _Pending:
    descriptor: Descriptor
    metadata: dict
    user_id: str | None
    roi: RegionOfInterest | None
    proposed_class: str | None
    issued_at: float
    consumed: bool = field(default=False)


class RecognitionEngine:
    def __init__(
        self,
        taxonomy: Taxonomy,
        dim: int,
        metric: str = "euclidean",
        thresholds: ConfidenceThresholds | None = None,
        k: int = DEFAULT_K,
        rerank_gap: float = DEFAULT_RERANK_GAP,
        n_trees: int = DEFAULT_N_TREES,
        max_nodes: int = DEFAULT_MAX_NODES,
        leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
        seed: int = 0,
        log=None,
        token_ttl: float = DEFAULT_TOKEN_TTL,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.taxonomy = taxonomy
        self.thresholds = thresholds or ConfidenceThresholds()
        self.k = k
        self.rerank_gap = rerank_gap
        self.token_ttl = token_ttl
        self._clock = clock
        self._log = log
        self._index = AnnIndex(
            dim,
            metric,
            n_trees=n_trees,
            max_nodes=max_nodes,
            leaf_capacity=leaf_capacity,
            seed=seed,
        )
        self._prototypes: dict[int, Prototype] = {}
        self._pending: dict[str, _Pending] = {}
        self._code_counts: dict[str, Counter] = defaultdict(Counter)
        self._next_id = 1
        self._write_lock = self._index._write_lock

    # -- store state -------------------------------------------------------

    @property
    def dim(self) -> int:
        return self._index.dim

    @property
    def metric(self) -> str:
        return self._index.metric

    @property
    def prototype_count(self) -> int:
        return len(self._prototypes)

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def prototypes(self) -> list[Prototype]:
        return [self._prototypes[pid] for pid in sorted(self._prototypes)]

    def get_prototype(self, prototype_id: int) -> Prototype:
        try:
            return self._prototypes[prototype_id]
        except KeyError:
            raise UnknownPrototype(f"no prototype {prototype_id}") from None

    def user_prototypes(self, user_id: str) -> list[Prototype]:
        return [p for p in self.prototypes() if p.user_id == user_id]

    def feature_code_histograms(self) -> FeatureCodeHistograms:
        return {
            cls: {code: n / sum(counter.values()) for code, n in counter.items()}
            for cls, counter in self._code_counts.items()
            if sum(counter.values()) > 0
        }

    def _insert(self, proto: Prototype) -> None:
        if proto.class_synset not in self.taxonomy:
            raise UnknownSynset(f"no synset {proto.class_synset!r}")
        self._index.add(proto.id, proto.descriptor)
        self._prototypes[proto.id] = proto
        self._next_id = max(self._next_id, proto.id + 1)
        if proto.reliable:
            self._bump_code_counts(proto, +1)

    def _bump_code_counts(self, proto: Prototype, delta: int) -> None:
        code = proto.metadata.get("gis_feature_code")
        if code is not None:
            self._code_counts[proto.class_synset][str(code)] += delta
            if self._code_counts[proto.class_synset][str(code)] <= 0:
                del self._code_counts[proto.class_synset][str(code)]
            if not self._code_counts[proto.class_synset]:
                del self._code_counts[proto.class_synset]

    def load_state(self, prototypes: Mapping[int, Prototype], rebuild: bool = True) -> None:
        """Seed the engine from replayed or imported prototypes (not logged)."""
        with self._write_lock:
            for pid in sorted(prototypes):
                proto = prototypes[pid]
                if proto.class_synset not in self.taxonomy:
                    raise UnknownSynset(f"no synset {proto.class_synset!r}")
                self._index.add(proto.id, proto.descriptor)
                self._prototypes[proto.id] = proto
                self._next_id = max(self._next_id, proto.id + 1)
                if proto.reliable:
                    self._bump_code_counts(proto, +1)
        if rebuild and self._prototypes:
            self._index.rebuild()

    def seed_prototype(
        self,
        descriptor: Descriptor,
        class_synset: str,
        metadata: dict | None = None,
        user_id: str = "seed",
        roi: RegionOfInterest | None = None,
        user_label: str | None = None,
        timestamp: float | None = None,
    ) -> Prototype:
        """Directly insert a prototype (bulk loading / dataset import)."""
        with self._write_lock:
            if class_synset not in self.taxonomy:
                raise UnknownSynset(f"no synset {class_synset!r}")
            proto = Prototype(
                id=self._next_id,
                descriptor=descriptor,
                class_synset=class_synset,
                metadata=dict(metadata or {}),
                user_id=user_id,
                timestamp=self._clock() if timestamp is None else timestamp,
                roi=roi,
                user_label=user_label,
            )
            if self._log is not None:
                self._log.append_add(proto)
            self._insert(proto)
            return proto

    # -- querying -----------------------------------------------------------

    def _purge_expired(self) -> None:
        now = self._clock()
        stale = [
            rid
            for rid, pending in self._pending.items()
            if now - pending.issued_at > self.token_ttl
        ]
        for rid in stale:
            del self._pending[rid]

    def _register(
        self,
        q: Descriptor,
        qmeta: dict,
        user: str | None,
        roi: RegionOfInterest | None,
        proposed_class: str | None,
    ) -> str:
        rid = uuid.uuid4().hex
        self._pending[rid] = _Pending(
            descriptor=q,
            metadata=qmeta,
            user_id=user,
            roi=roi,
            proposed_class=proposed_class,
            issued_at=self._clock(),
        )
        return rid

    def unknown_response(
        self,
        q: Descriptor,
        qmeta: dict | None = None,
        user: str | None = None,
        roi: RegionOfInterest | None = None,
    ) -> RecognitionResponse:
        """Unknown-object answer with a token so the user can still label it."""
        rid = self._register(q, dict(qmeta or {}), user, roi, None)
        return RecognitionResponse(rid, None, [], UNKNOWN_OUTCOME, [])

    def _own_scope_hits(self, q: Descriptor, user: str, k: int) -> list[RankedHit]:
        mine = [p for p in self.user_prototypes(user) if p.reliable]
        if not mine:
            return []
        matrix = np.stack([p.descriptor.values for p in mine])
        ids = np.array([p.id for p in mine], dtype=np.int64)
        dists = distances_to(matrix, q.values, self.metric)
        order = np.lexsort((ids, dists))[:k]
        return [RankedHit(int(ids[i]), float(dists[i])) for i in order]

    def _all_scope_hits(self, q: Descriptor, k: int, max_nodes: int | None) -> list[RankedHit]:
        unreliable = sum(1 for p in self._prototypes.values() if not p.reliable)
        hits = self._index.search(q, k + unreliable, max_nodes=max_nodes)
        filtered = [h for h in hits if self._prototypes[h.prototype_id].reliable]
        return filtered[:k]

    def classify(
        self,
        q: Descriptor,
        qmeta: Mapping[str, object] | None = None,
        scope: str = "all",
        user: str | None = None,
        roi: RegionOfInterest | None = None,
        k: int | None = None,
        thresholds: ConfidenceThresholds | None = None,
        rerank: bool = False,
        max_nodes: int | None = -1,
    ) -> RecognitionResponse:
        """Answer a query against the scoped reliable prototypes."""
        if q.dim != self.dim:
            raise DimensionMismatch(f"expected dim {self.dim}, got {q.dim}")
        self._purge_expired()
        qmeta = dict(qmeta or {})
        k = k or self.k
        thr = thresholds or self.thresholds

        if scope == "own":
            if user is None:
                raise RecognitionError("own-images scope requires a user id")
            if not self.user_prototypes(user):
                raise UnknownUser(f"no prototypes for user {user!r}")
            hits = self._own_scope_hits(q, user, k)
        elif scope == "all":
            reliable_exists = any(p.reliable for p in self._prototypes.values())
            hits = (
                self._all_scope_hits(q, k, max_nodes) if reliable_exists else []
            )
        else:
            raise RecognitionError(f"unknown scope {scope!r}")

        if not hits:
            return self.unknown_response(q, qmeta, user, roi)

        outcome = confidence_level(hits[0].distance, thr)
        within = [h for h in hits if h.distance <= thr.unknown]
        ranked: list[tuple[str, float]] = []
        seen: set[str] = set()
        for hit in within:
            cls = self._prototypes[hit.prototype_id].class_synset
            if cls not in seen:
                seen.add(cls)
                ranked.append((cls, hit.distance))

        if rerank and ranked:
            code = qmeta.get("gis_feature_code")
            ranked = rerank_with_feature_code(
                ranked,
                str(code) if code is not None else None,
                self.feature_code_histograms(),
                self.rerank_gap,
            )

        alternatives = [cls for cls, _ in ranked]
        proposed = None
        if outcome.kind != "unknown" and ranked:
            best_class, best_distance = ranked[0]
            label = None
            for hit in within:
                proto = self._prototypes[hit.prototype_id]
                if proto.class_synset == best_class:
                    label = proto.user_label
                    break
            proposed = ProposedClass(best_class, best_distance, label)

        rid = self._register(
            q, qmeta, user, roi, proposed.class_synset if proposed else None
        )
        return RecognitionResponse(rid, proposed, alternatives, outcome, hits)

    # -- validation ---------------------------------------------------------

    def validate(
        self,
        response_id: str,
        decision: str,
        synset: str | None = None,
    ) -> Prototype | None:
        """Consume a pending token; store one prototype for class decisions."""
        if decision not in DECISIONS:
            raise RecognitionError(f"unknown decision {decision!r}")
        with self._write_lock:
            self._purge_expired()
            pending = self._pending.get(response_id)
            if pending is None:
                raise UnknownResponse(f"unknown or expired response {response_id!r}")
            if pending.consumed:
                raise AlreadyValidated(f"response {response_id!r} already validated")

            if decision == "reject_unknown":
                pending.consumed = True
                return None
            if decision == "confirm":
                if pending.proposed_class is None:
                    raise RecognitionError("nothing was proposed; cannot confirm")
                chosen = pending.proposed_class
            else:
                if synset is None:
                    raise RecognitionError(f"decision {decision!r} requires a synset")
                chosen = synset
            if chosen not in self.taxonomy:
                raise UnknownSynset(f"no synset {chosen!r}")

            proto = Prototype(
                id=self._next_id,
                descriptor=pending.descriptor,
                class_synset=chosen,
                metadata=pending.metadata,
                user_id=pending.user_id or "anonymous",
                timestamp=self._clock(),
                roi=pending.roi,
            )
            if self._log is not None:
                self._log.append_add(proto)
            self._insert(proto)
            pending.consumed = True
            return proto

    # -- administration -------------------------------------------------------

    def admin_flag(self, prototype_id: int, reliable: bool) -> Prototype:
        with self._write_lock:
            proto = self.get_prototype(prototype_id)
            if self._log is not None:
                self._log.append_flag(prototype_id, reliable)
            if proto.reliable != reliable:
                if proto.reliable:
                    self._bump_code_counts(proto, -1)
                proto.reliable = reliable
                if reliable:
                    self._bump_code_counts(proto, +1)
            return proto

    def set_label(self, prototype_id: int, user_label: str | None) -> Prototype:
        with self._write_lock:
            proto = self.get_prototype(prototype_id)
            if self._log is not None:
                self._log.append_label(prototype_id, user_label)
            proto.user_label = user_label
            return proto

    def rebuild_index(self, seed: int | None = None) -> int:
        """Fold overflow into a fresh forest; returns drained count."""
        if len(self._index) == 0:
            return 0
        return self._index.rebuild(seed=seed)

    def save_index_snapshot(self, path: str) -> None:
        self._index.save_snapshot(path)

    @property
    def overflow_size(self) -> int:
        return self._index.overflow_size

    def proposed_for(self, response_id: str) -> str | None:
        """Proposed class recorded with a pending token, if any."""
        pending = self._pending.get(response_id)
        return pending.proposed_class if pending else None
