import json
import struct
import zlib

import numpy as np
import pytest

from protorec.features import RegionOfInterest
from protorec.persistence import (
    CorruptRecord,
    PrototypeLog,
    SchemaViolation,
    export_dataset,
    import_dataset,
    prototype_from_dict,
    prototype_to_dict,
    replay,
)
from protorec.recognition import Prototype
from protorec.vectors import Descriptor


def make_proto(pid, rng, cls="chair", user="u1", reliable=True, label=None):
    return Prototype(
        id=pid,
        descriptor=Descriptor(rng.normal(0, 1, 6)),
        class_synset=cls,
        metadata={"gis_feature_code": "ZOO", "pitch": 12.5},
        user_id=user,
        timestamp=1000.0 + pid,
        roi=RegionOfInterest(1, 2, 30, 40),
        reliable=reliable,
        user_label=label,
    )


def test_prototype_dict_round_trip(rng):
    proto = make_proto(3, rng, label="mine")
    back = prototype_from_dict(prototype_to_dict(proto))
    assert back.id == proto.id
    assert np.array_equal(back.descriptor.values, proto.descriptor.values)
    assert back.roi == proto.roi
    assert back.user_label == "mine"


def test_first_append_is_sequence_one(tmp_path, rng):
    with PrototypeLog(tmp_path / "mirlog.v1") as log:
        assert log.append_add(make_proto(1, rng)) == 1


def test_hundred_appends_replay(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path) as log:
        for i in range(1, 101):
            assert log.append_add(make_proto(i, rng)) == i
    state = replay(path)
    assert len(state) == 100
    assert sorted(state) == list(range(1, 101))


def test_flag_unknown_id_schema_violation(tmp_path):
    with PrototypeLog(tmp_path / "mirlog.v1") as log:
        with pytest.raises(SchemaViolation):
            log.append_flag(12, True)
        with pytest.raises(SchemaViolation):
            log.append({"op": "nonsense"})


def test_empty_log_replays_to_empty_store(tmp_path):
    path = tmp_path / "mirlog.v1"
    PrototypeLog(path).close()
    assert replay(path) == {}


def test_flag_last_writer_wins(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path) as log:
        log.append_add(make_proto(1, rng))
        log.append_flag(1, False)
        log.append_flag(1, True)
    state = replay(path)
    assert state[1].reliable is True


def test_label_records_replay(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path) as log:
        log.append_add(make_proto(1, rng))
        log.append_label(1, "My dog Toby")
    assert replay(path)[1].user_label == "My dog Toby"


def test_fuzzed_log_replay_equals_incremental_state(tmp_path, rng):
    # Dual-maintenance oracle: apply every operation to a plain dict too.
    path = tmp_path / "mirlog.v1"
    mirror = {}
    next_id = 1
    with PrototypeLog(path, sync=False) as log:
        for _ in range(1000):
            ops = ["add"] if not mirror else ["add", "flag", "label"]
            op = ops[int(rng.integers(0, len(ops)))]
            if op == "add":
                proto = make_proto(next_id, rng, reliable=bool(rng.integers(0, 2)))
                log.append_add(proto)
                mirror[next_id] = prototype_from_dict(prototype_to_dict(proto))
                next_id += 1
            elif op == "flag":
                pid = int(rng.choice(sorted(mirror)))
                value = bool(rng.integers(0, 2))
                log.append_flag(pid, value)
                mirror[pid].reliable = value
            else:
                pid = int(rng.choice(sorted(mirror)))
                label = f"label-{int(rng.integers(0, 10))}"
                log.append_label(pid, label)
                mirror[pid].user_label = label
    state = replay(path)
    assert sorted(state) == sorted(mirror)
    for pid in mirror:
        assert prototype_to_dict(state[pid]) == prototype_to_dict(mirror[pid])


def test_log_reopen_continues_sequence(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path) as log:
        log.append_add(make_proto(1, rng))
    with PrototypeLog(path) as log:
        assert log.last_sequence == 1
        assert log.append_add(make_proto(2, rng)) == 2
        with pytest.raises(SchemaViolation):
            log.append_add(make_proto(2, rng))  # id already present


def _frame_boundaries(blob):
    header = struct.Struct("<II")
    offsets = [0]
    pos = 0
    while pos < len(blob):
        length, _ = header.unpack_from(blob, pos)
        pos += header.size + length
        offsets.append(pos)
    return offsets


def test_truncation_at_every_boundary_yields_prefix(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path, sync=False) as log:
        for i in range(1, 21):
            log.append_add(make_proto(i, rng))
    blob = path.read_bytes()
    for count, offset in enumerate(_frame_boundaries(blob)):
        trimmed = tmp_path / f"cut{count}.v1"
        trimmed.write_bytes(blob[:offset])
        assert len(replay(trimmed)) == count


def test_torn_tail_write_is_ignored(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path, sync=False) as log:
        for i in range(1, 4):
            log.append_add(make_proto(i, rng))
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])  # mid-frame cut
    assert len(replay(path)) == 2


def test_corrupt_record_reports_first_bad_sequence(tmp_path, rng):
    path = tmp_path / "mirlog.v1"
    with PrototypeLog(path, sync=False) as log:
        for i in range(1, 4):
            log.append_add(make_proto(i, rng))
    blob = bytearray(path.read_bytes())
    boundaries = _frame_boundaries(bytes(blob))
    blob[boundaries[1] + 12] ^= 0xFF  # flips a byte inside record 2's payload
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptRecord) as err:
        replay(path)
    assert err.value.sequence == 2


def test_export_import_round_trip(tmp_path, rng):
    store = {i: make_proto(i, rng, cls=f"class_{i % 3}", label=f"l{i}") for i in range(1, 8)}
    out = export_dataset(store, tmp_path / "dump", source_name="unit")
    back = import_dataset(out)
    assert sorted(back) == sorted(store)
    for pid in store:
        assert prototype_to_dict(back[pid]) == prototype_to_dict(store[pid])


def test_export_empty_store_manifest(tmp_path):
    out = export_dataset({}, tmp_path / "dump")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["prototypes"] == 0
    assert import_dataset(out) == {}


def test_export_reliable_only_excludes_flagged(tmp_path, rng):
    store = {
        i: make_proto(i, rng, reliable=(i % 2 == 0)) for i in range(1, 11)
    }
    out = export_dataset(store, tmp_path / "dump", reliable_only=True)
    back = import_dataset(out)
    expected = {pid for pid, p in store.items() if p.reliable}
    assert set(back) == expected
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["prototypes"] == len(expected)
    assert manifest["unreliable"] == 0


def test_export_tarball(tmp_path, rng):
    store = {1: make_proto(1, rng)}
    archive = export_dataset(store, tmp_path / "dump", tar=True)
    assert archive.name.endswith(".tar.gz")
    assert archive.exists()


def test_export_includes_taxonomy_copy(tmp_path, rng):
    from protorec.ontology import default_taxonomy_path

    store = {1: make_proto(1, rng)}
    out = export_dataset(store, tmp_path / "dump", taxonomy_path=default_taxonomy_path())
    assert (out / "taxonomy.txt").read_text(encoding="utf-8").startswith("#")
