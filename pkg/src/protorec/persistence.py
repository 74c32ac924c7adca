"""Durable storage: an append-only prototype log and dataset export/import.

Log file format (default name ``mirlog.v1``): a sequence of length-prefixed
frames, each ``<u32 payload length><u32 crc32 of payload><json payload>``.
Record kinds are ``add`` (full prototype), ``flag`` (reliability change), and
``label`` (user-label change).  Replaying the log from empty reproduces the
live store exactly; truncating at any frame boundary leaves a replayable
prefix, and a torn partial frame at the tail is ignored.
"""

from __future__ import annotations

import errno
import json
import os
import shutil
import struct
import tarfile
import zlib
from pathlib import Path
from typing import Iterator

import numpy as np

from .features import EmbeddingManifest, RegionOfInterest, write_embedding_file, read_embedding_file
from .recognition import Prototype
from .vectors import Descriptor

LOG_FILENAME = "mirlog.v1"

_FRAME = struct.Struct("<II")

RECORD_KINDS = ("add", "flag", "label")


class PersistenceError(ValueError):
    """Base class for storage errors."""


class SchemaViolation(PersistenceError):
    """Record does not validate against the log schema."""


class CorruptRecord(PersistenceError):
    """A complete record failed its CRC check."""

    def __init__(self, sequence: int, message: str) -> None:
        super().__init__(f"record {sequence}: {message}")
        self.sequence = sequence


class StorageFull(PersistenceError):
    """The underlying device rejected the write."""


class IoError(PersistenceError):
    """Filesystem-level export/import failure."""


def prototype_to_dict(proto: Prototype) -> dict:
    return {
        "id": proto.id,
        "values": [float(x) for x in proto.descriptor.values],
        "metric": proto.descriptor.metric,
        "normalized": proto.descriptor.normalized,
        "class_synset": proto.class_synset,
        "metadata": proto.metadata,
        "user_id": proto.user_id,
        "timestamp": proto.timestamp,
        "roi": [proto.roi.x, proto.roi.y, proto.roi.w, proto.roi.h] if proto.roi else None,
        "reliable": proto.reliable,
        "user_label": proto.user_label,
    }


def prototype_from_dict(data: dict) -> Prototype:
    roi = RegionOfInterest(*data["roi"]) if data.get("roi") else None
    descriptor = Descriptor(
        np.array(data["values"], dtype=np.float64),
        metric=data["metric"],
        normalized=data.get("normalized", False),
    )
    return Prototype(
        id=int(data["id"]),
        descriptor=descriptor,
        class_synset=data["class_synset"],
        metadata=dict(data.get("metadata") or {}),
        user_id=data["user_id"],
        timestamp=float(data["timestamp"]),
        roi=roi,
        reliable=bool(data.get("reliable", True)),
        user_label=data.get("user_label"),
    )


def _apply(state: dict[int, Prototype], record: dict, sequence: int) -> None:
    kind = record.get("op")
    if kind == "add":
        proto = prototype_from_dict(record["prototype"])
        if proto.id in state:
            raise SchemaViolation(f"record {sequence}: duplicate prototype {proto.id}")
        state[proto.id] = proto
    elif kind == "flag":
        pid = int(record["id"])
        if pid not in state:
            raise SchemaViolation(f"record {sequence}: flag for unknown id {pid}")
        state[pid].reliable = bool(record["reliable"])
    elif kind == "label":
        pid = int(record["id"])
        if pid not in state:
            raise SchemaViolation(f"record {sequence}: label for unknown id {pid}")
        state[pid].user_label = record.get("user_label")
    else:
        raise SchemaViolation(f"record {sequence}: unknown op {kind!r}")


class PrototypeLog:
    """Append-only, CRC-framed prototype journal.

    Appends are validated against the state accumulated so far, flushed and
    fsynced before the sequence number is returned.
    """

    def __init__(self, path: str | Path, sync: bool = True) -> None:
        self.path = Path(path)
        self.sync = sync
        self._state: dict[int, Prototype] = {}
        self._sequence = 0
        if self.path.exists():
            for sequence, record in _iter_records(self.path):
                _apply(self._state, record, sequence)
                self._sequence = sequence
        self._fh = open(self.path, "ab")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "PrototypeLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def last_sequence(self) -> int:
        return self._sequence

    def state(self) -> dict[int, Prototype]:
        """Copy of the state accumulated from all appended records."""
        return {
            pid: prototype_from_dict(prototype_to_dict(p))
            for pid, p in self._state.items()
        }

    def append(self, record: dict) -> int:
        """Validate, frame, and durably write one record; returns its sequence."""
        sequence = self._sequence + 1
        _apply(self._state, record, sequence)  # raises SchemaViolation if invalid
        payload = json.dumps(record, separators=(",", ":")).encode("utf-8")
        frame = _FRAME.pack(len(payload), zlib.crc32(payload) & 0xFFFFFFFF) + payload
        try:
            self._fh.write(frame)
            self._fh.flush()
            if self.sync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise StorageFull(str(exc)) from exc
            raise
        self._sequence = sequence
        return sequence

    def append_add(self, proto: Prototype) -> int:
        return self.append({"op": "add", "prototype": prototype_to_dict(proto)})

    def append_flag(self, prototype_id: int, reliable: bool) -> int:
        return self.append({"op": "flag", "id": prototype_id, "reliable": reliable})

    def append_label(self, prototype_id: int, user_label: str | None) -> int:
        return self.append({"op": "label", "id": prototype_id, "user_label": user_label})


def _iter_records(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    sequence = 0
    total = len(data)
    while pos < total:
        if total - pos < _FRAME.size:
            break  # torn tail write
        length, crc = _FRAME.unpack_from(data, pos)
        if total - pos - _FRAME.size < length:
            break  # torn tail write
        payload = data[pos + _FRAME.size : pos + _FRAME.size + length]
        sequence += 1
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise CorruptRecord(sequence, "payload checksum mismatch")
        try:
            record = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptRecord(sequence, f"payload not valid JSON: {exc}") from exc
        yield sequence, record
        pos += _FRAME.size + length


def replay(path: str | Path) -> dict[int, Prototype]:
    """Rebuild store state from the log; raises CorruptRecord on bad frames."""
    state: dict[int, Prototype] = {}
    for sequence, record in _iter_records(Path(path)):
        _apply(state, record, sequence)
    return state


# -- dataset export ----------------------------------------------------------

EXPORT_DESCRIPTORS = "descriptors.tsv"
EXPORT_METADATA = "metadata.jsonl"
EXPORT_TAXONOMY = "taxonomy.txt"
EXPORT_MANIFEST = "manifest.json"


def export_dataset(
    store: dict[int, Prototype],
    out_dir: str | Path,
    taxonomy_path: str | Path | None = None,
    reliable_only: bool = False,
    source_name: str = "export",
    tar: bool = False,
) -> Path:
    """Write the store as a directory tree; returns the directory (or tarball).

    Layout: ``descriptors.tsv`` (embedding exchange format), ``metadata.jsonl``
    (one full prototype record per line, minus the vector), ``taxonomy.txt``,
    and ``manifest.json`` with counts.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        protos = [store[pid] for pid in sorted(store)]
        if reliable_only:
            protos = [p for p in protos if p.reliable]

        classes = sorted({p.class_synset for p in protos})
        if protos:
            dims = {p.descriptor.dim for p in protos}
            metrics = {p.descriptor.metric for p in protos}
            if len(dims) != 1 or len(metrics) != 1:
                raise IoError("store holds mixed descriptor dims or metrics")
            manifest = EmbeddingManifest(source_name, dims.pop(), metrics.pop())
        else:
            manifest = EmbeddingManifest(source_name, 1, "euclidean")
        write_embedding_file(
            out / EXPORT_DESCRIPTORS,
            manifest,
            ((str(p.id), p.class_synset, p.descriptor.values) for p in protos),
        )

        with open(out / EXPORT_METADATA, "w", encoding="utf-8") as fh:
            for p in protos:
                record = prototype_to_dict(p)
                del record["values"]
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")

        if taxonomy_path is not None:
            shutil.copyfile(taxonomy_path, out / EXPORT_TAXONOMY)

        with open(out / EXPORT_MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "format": "protorec-export/v1",
                    "prototypes": len(protos),
                    "classes": len(classes),
                    "reliable": sum(1 for p in protos if p.reliable),
                    "unreliable": sum(1 for p in protos if not p.reliable),
                    "reliable_only": reliable_only,
                    "dim": manifest.dim if protos else None,
                    "metric": manifest.metric if protos else None,
                },
                fh,
                indent=2,
            )
    except OSError as exc:
        raise IoError(str(exc)) from exc

    if tar:
        tar_path = out.with_suffix(".tar.gz")
        with tarfile.open(tar_path, "w:gz") as archive:
            archive.add(out, arcname=out.name)
        return tar_path
    return out


def import_dataset(in_dir: str | Path) -> dict[int, Prototype]:
    """Inverse of export_dataset; joins vectors and metadata by id."""
    src = Path(in_dir)
    manifest, records = read_embedding_file(src / EXPORT_DESCRIPTORS)
    vectors = {external_id: vec for external_id, _, vec in records}
    store: dict[int, Prototype] = {}
    with open(src / EXPORT_METADATA, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            data = json.loads(line)
            data["values"] = [float(x) for x in vectors[str(data["id"])]]
            data.setdefault("metric", manifest.metric)
            proto = prototype_from_dict(data)
            store[proto.id] = proto
    return store
