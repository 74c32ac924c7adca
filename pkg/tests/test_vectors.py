import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protorec.vectors import (
    Descriptor,
    DimensionMismatch,
    MetricMismatch,
    VectorError,
    ZeroVector,
    distance,
    distances_to,
    fuse_distance,
    l2_normalize,
)

# Oracle: direct evaluation of both KL terms against the mixture M=[0.75, 0.25].
JSD_HALF_VS_POINT = 0.31127812445913283


def jsd(values_p, values_q):
    return distance(
        Descriptor(np.array(values_p), metric="jensen-shannon"),
        Descriptor(np.array(values_q), metric="jensen-shannon"),
    )


def test_l2_normalize_345_triangle():
    out = l2_normalize(Descriptor(np.array([3.0, 4.0])))
    assert np.allclose(out.values, [0.6, 0.8])
    assert out.normalized


def test_l2_normalize_unit_basis_unchanged():
    e1 = np.zeros(5)
    e1[0] = 1.0
    out = l2_normalize(Descriptor(e1))
    assert np.allclose(out.values, e1)


def test_l2_normalize_zero_vector_rejected():
    with pytest.raises(ZeroVector):
        l2_normalize(Descriptor(np.zeros(3)))


def test_l2_normalize_idempotent(rng):
    for _ in range(50):
        v = Descriptor(rng.normal(0, 3, size=8))
        once = l2_normalize(v)
        twice = l2_normalize(once)
        assert np.max(np.abs(once.values - twice.values)) <= 1e-9


def test_euclidean_345():
    a = Descriptor(np.array([0.0, 0.0]))
    b = Descriptor(np.array([3.0, 4.0]))
    assert distance(a, b) == pytest.approx(5.0)


def test_jsd_identical_histograms_zero():
    assert jsd([0.25, 0.25, 0.5], [0.25, 0.25, 0.5]) == pytest.approx(0.0, abs=1e-12)


def test_jsd_disjoint_supports_is_one():
    assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)


def test_jsd_half_vs_point_mass_matches_oracle():
    assert jsd([0.5, 0.5], [1.0, 0.0]) == pytest.approx(JSD_HALF_VS_POINT, abs=1e-3)
    assert jsd([0.5, 0.5], [1.0, 0.0]) == pytest.approx(JSD_HALF_VS_POINT, abs=1e-12)


def test_cosine_zero_vector_rejected():
    a = Descriptor(np.zeros(3), metric="cosine")
    b = Descriptor(np.array([1.0, 0.0, 0.0]), metric="cosine")
    with pytest.raises(ZeroVector):
        distance(a, b)


def test_dimension_and_metric_mismatches():
    with pytest.raises(DimensionMismatch):
        distance(Descriptor(np.ones(2)), Descriptor(np.ones(3)))
    with pytest.raises(MetricMismatch):
        distance(Descriptor(np.ones(2)), Descriptor(np.ones(2), metric="cosine"))


def test_descriptor_invariants():
    with pytest.raises(VectorError):
        Descriptor(np.array([]))
    with pytest.raises(VectorError):
        Descriptor(np.array([0.3, 0.3]), normalized=True)
    with pytest.raises(VectorError):
        Descriptor(np.array([0.5, 0.6]), metric="jensen-shannon")  # sums to 1.1
    with pytest.raises(VectorError):
        Descriptor(np.array([-0.1, 1.1]), metric="jensen-shannon")
    with pytest.raises(VectorError):
        Descriptor(np.array([np.nan, 1.0]))


def test_fuse_distance_examples():
    assert fuse_distance(0.5, 0.3, 0.0) == pytest.approx(0.3)
    assert fuse_distance(0.5, 0.3, 1.0) == pytest.approx(0.5)
    assert fuse_distance(0.5, 0.3, 0.1) == pytest.approx(0.32)


def test_fuse_distance_rejects_bad_inputs():
    with pytest.raises(VectorError):
        fuse_distance(0.5, 0.3, 1.5)
    with pytest.raises(VectorError):
        fuse_distance(-0.1, 0.3, 0.5)


@given(
    d=st.floats(min_value=0, max_value=10, allow_nan=False),
    w=st.floats(min_value=0, max_value=1, allow_nan=False),
)
def test_fuse_distance_fixed_point(d, w):
    assert fuse_distance(d, d, w) == pytest.approx(d, abs=1e-12)


@pytest.mark.parametrize("metric", ["euclidean", "cosine", "jensen-shannon"])
def test_symmetry_and_self_distance(metric, rng):
    for _ in range(100):
        if metric == "jensen-shannon":
            a = rng.dirichlet(np.ones(6))
            b = rng.dirichlet(np.ones(6))
        else:
            a = rng.normal(0, 1, 6)
            b = rng.normal(0, 1, 6)
        da = Descriptor(a, metric=metric)
        db = Descriptor(b, metric=metric)
        assert distance(da, db) == pytest.approx(distance(db, da), abs=1e-9)
        assert distance(da, da) <= 1e-9
        assert distance(da, db) >= 0.0


def test_euclidean_triangle_inequality_bulk(rng):
    # 1e4 random triples, vectorized
    a = rng.normal(0, 1, (10_000, 8))
    b = rng.normal(0, 1, (10_000, 8))
    c = rng.normal(0, 1, (10_000, 8))
    ab = np.linalg.norm(a - b, axis=1)
    bc = np.linalg.norm(b - c, axis=1)
    ac = np.linalg.norm(a - c, axis=1)
    assert np.all(ac <= ab + bc + 1e-9)


@settings(max_examples=200)
@given(
    st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=12),
    st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=12),
)
def test_jsd_bounded_and_zero_iff_equal(raw_p, raw_q):
    size = min(len(raw_p), len(raw_q))
    p = np.array(raw_p[:size]) + 1e-9
    q = np.array(raw_q[:size]) + 1e-9
    p /= p.sum()
    q /= q.sum()
    value = jsd(p, q)
    assert 0.0 <= value <= 1.0
    if np.allclose(p, q, atol=1e-12):
        assert value <= 1e-9
    if value <= 1e-12:
        assert np.allclose(p, q, atol=1e-5)


def test_argmin_invariance_euclidean_vs_cosine_on_unit_vectors(rng):
    # On unit vectors the euclidean and cosine nearest neighbor coincide.
    store = rng.normal(0, 1, (200, 16))
    store /= np.linalg.norm(store, axis=1, keepdims=True)
    queries = rng.normal(0, 1, (1000, 16))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    for q in queries:
        eu = distances_to(store, q, "euclidean")
        co = distances_to(store, q, "cosine")
        assert int(np.argmin(eu)) == int(np.argmin(co))


def test_distances_to_matches_scalar_distance(rng):
    for metric in ("euclidean", "cosine", "jensen-shannon"):
        if metric == "jensen-shannon":
            rows = rng.dirichlet(np.ones(5), size=20)
            q = rng.dirichlet(np.ones(5))
        else:
            rows = rng.normal(0, 1, (20, 5))
            q = rng.normal(0, 1, 5)
        bulk = distances_to(rows, q, metric)
        for i in range(rows.shape[0]):
            scalar = distance(
                Descriptor(rows[i], metric=metric), Descriptor(q, metric=metric)
            )
            assert bulk[i] == pytest.approx(scalar, abs=1e-9)
