"""Core IVFPQ operations against hand values and independent oracles."""

import heapq

import numpy as np
import pytest

from pimann import core_index as ci
from pimann.errors import InvalidArgument, InvalidData


def test_kmeans_identical_points_single_centroid():
    data = np.tile(np.array([[2.0, -3.0, 5.0]], dtype=np.float32), (4, 1))
    cq = ci.train_coarse_quantizer(data, 1, seed=0)
    assert cq.nclusters == 1
    np.testing.assert_allclose(cq.centroids[0], data[0], atol=1e-6)


def test_kmeans_two_blobs_recovers_means():
    rng = np.random.default_rng(42)
    blob_a = rng.normal(0.0, 0.05, size=(60, 2)) + np.array([0.0, 0.0])
    blob_b = rng.normal(0.0, 0.05, size=(60, 2)) + np.array([10.0, 10.0])
    data = np.vstack([blob_a, blob_b]).astype(np.float32)
    cq = ci.train_coarse_quantizer(data, 2, seed=7)
    # closed-form oracle: the blob means, matched to the nearest centroid
    means = np.array([blob_a.mean(axis=0), blob_b.mean(axis=0)])
    for mean in means:
        gap = np.sqrt(((cq.centroids - mean) ** 2).sum(axis=1)).min()
        assert gap < 0.1


def test_kmeans_deterministic_for_fixed_seed():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(200, 8)).astype(np.float32)
    a = ci.train_coarse_quantizer(data, 10, seed=5)
    b = ci.train_coarse_quantizer(data, 10, seed=5)
    assert np.array_equal(a.centroids, b.centroids)
    c = ci.train_coarse_quantizer(data, 10, seed=6)
    assert not np.array_equal(a.centroids, c.centroids)


def test_kmeans_argument_errors():
    data = np.zeros((4, 2), dtype=np.float32)
    with pytest.raises(InvalidArgument):
        ci.train_coarse_quantizer(data, 5, seed=0)
    bad = data.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InvalidData):
        ci.train_coarse_quantizer(bad, 2, seed=0)


def test_kmeans_no_empty_clusters_on_duplicates():
    # 2 distinct values, 3 clusters: reseeding must still fill every cluster
    data = np.array([[0.0], [0.0], [0.0], [9.0], [9.0], [9.0]], dtype=np.float32)
    cq = ci.train_coarse_quantizer(data, 2, seed=0)
    labels, _ = ci.assign_and_residual(data, cq)
    assert set(labels.tolist()) == {0, 1}


def test_assign_and_residual_zero_case():
    centroids = np.arange(12, dtype=np.float32).reshape(4, 3)
    cq = ci.CoarseQuantizer(centroids)
    point = centroids[3:4].copy()
    labels, residuals = ci.assign_and_residual(point, cq)
    assert labels[0] == 3
    np.testing.assert_array_equal(residuals[0], np.zeros(3, dtype=np.float32))


def test_assign_and_residual_hand_case():
    cq = ci.CoarseQuantizer(np.array([[0.0, 0.0], [3.0, 3.0]], dtype=np.float32))
    labels, residuals = ci.assign_and_residual(np.array([[2.0, 2.0]], dtype=np.float32), cq)
    # squared distances are 8 vs 2
    assert labels[0] == 1
    np.testing.assert_array_equal(residuals[0], np.array([-1.0, -1.0], dtype=np.float32))


def test_assign_tie_breaks_to_lowest_index():
    cq = ci.CoarseQuantizer(np.array([[0.0], [3.0]], dtype=np.float32))
    labels, _ = ci.assign_and_residual(np.array([[1.5]], dtype=np.float32), cq)
    assert labels[0] == 0


def test_assign_dimension_mismatch():
    cq = ci.CoarseQuantizer(np.zeros((2, 3), dtype=np.float32))
    with pytest.raises(InvalidArgument):
        ci.assign_and_residual(np.zeros((1, 4), dtype=np.float32), cq)


def test_train_pq_zero_residuals():
    residuals = np.zeros((50, 4), dtype=np.float32)
    cb = ci.train_pq(residuals, m=2, kstar=4, seed=0)
    enc = ci.encode(residuals, np.zeros(50, dtype=np.int64), cb)
    for i in range(cb.m):
        # the zero codeword exists and every code maps to a zero codeword
        dists = (cb.tables[i] ** 2).sum(axis=1)
        assert dists.min() == 0.0
    for codes in enc.codes:
        for row in codes:
            for i, c in enumerate(row):
                assert (cb.tables[i, c] == 0).all()


def test_train_pq_shapes_and_errors():
    rng = np.random.default_rng(0)
    residuals = rng.normal(size=(40, 4)).astype(np.float32)
    cb = ci.train_pq(residuals, m=2, kstar=8, seed=1)
    assert cb.tables.shape == (2, 8, 2)
    assert cb.dsub == 2
    with pytest.raises(InvalidArgument):
        ci.train_pq(residuals, m=3, kstar=8, seed=1)
    with pytest.raises(InvalidArgument):
        ci.train_pq(residuals, m=2, kstar=300, seed=1)


def test_compression_rate_matches_4d_over_m():
    assert ci.compression_rate(128, 16) == 32.0


def test_encode_nearest_codeword_example():
    # sub-vector {-2, 2} with {-1, 2} as codeword 0 and farther codewords
    tables = np.array(
        [[[-1.0, 2.0], [5.0, 5.0], [-8.0, 0.0], [3.0, -3.0]]], dtype=np.float32
    )
    cb = ci.PQCodebook(tables)
    enc = ci.encode(
        np.array([[-2.0, 2.0]], dtype=np.float32), np.zeros(1, dtype=np.int64), cb
    )
    assert enc.codes[0][0, 0] == 0


def test_encode_exact_codeword_roundtrip():
    rng = np.random.default_rng(9)
    tables = rng.normal(size=(3, 5, 2)).astype(np.float32)
    cb = ci.PQCodebook(tables)
    j = 4
    point = np.concatenate([tables[i, j] for i in range(3)])[None, :]
    enc = ci.encode(point, np.zeros(1, dtype=np.int64), cb)
    assert enc.codes[0].tolist() == [[j, j, j]]


def test_encode_matches_exhaustive_scan_oracle():
    rng = np.random.default_rng(21)
    residuals = rng.integers(-8, 8, size=(100, 8)).astype(np.float32)
    cb = ci.train_pq(residuals, m=4, kstar=16, seed=2)
    enc = ci.encode(residuals, np.zeros(100, dtype=np.int64), cb)
    codes = enc.codes[0]
    ids = enc.ids[0]
    for row in range(100):
        point = residuals[ids[row]]
        for i in range(4):
            sub = point[2 * i : 2 * i + 2].astype(np.float64)
            best = min(
                range(16),
                key=lambda j: (float(((sub - cb.tables[i, j]) ** 2).sum()), j),
            )
            assert codes[row, i] == best


def test_filter_clusters_all_and_exact_match():
    rng = np.random.default_rng(4)
    centroids = rng.integers(-10, 10, size=(8, 4)).astype(np.float32)
    cq = ci.CoarseQuantizer(centroids)
    probes = ci.filter_clusters(centroids[5], cq, nprobe=1)
    assert probes[0][0] == 5
    np.testing.assert_array_equal(probes[0][1], np.zeros(4, dtype=np.float32))
    everything = ci.filter_clusters(centroids[5], cq, nprobe=8)
    assert sorted(c for c, _ in everything) == list(range(8))
    with pytest.raises(InvalidArgument):
        ci.filter_clusters(centroids[0], cq, nprobe=9)


def test_filter_clusters_matches_full_sort_oracle():
    rng = np.random.default_rng(5)
    centroids = rng.integers(0, 7, size=(16, 6)).astype(np.float32)
    cq = ci.CoarseQuantizer(centroids)
    q = rng.integers(0, 7, size=6).astype(np.float32)
    got = [c for c, _ in ci.filter_clusters(q, cq, nprobe=16)]
    dists = [(float(((centroids[c] - q) ** 2).sum()), c) for c in range(16)]
    expect = [c for _, c in sorted(dists)]
    assert got == expect


def _random_lut_setup(seed, m=4, kstar=8, dsub=2):
    rng = np.random.default_rng(seed)
    tables = rng.normal(size=(m, kstar, dsub)).astype(np.float32)
    cb = ci.PQCodebook(tables)
    qc = rng.normal(size=(m * dsub,)).astype(np.float32)
    return cb, qc


def test_build_lut_zero_and_max_entries():
    cb, qc = _random_lut_setup(6)
    qc[:2] = cb.tables[0, 3]  # first segment equals codeword 3 exactly
    lut = ci.build_lut(qc, cb)
    assert lut.entries[0, 3] == 0
    assert lut.entries.max() == 65535
    assert lut.scale > 0


def test_build_lut_dequantizes_within_scale():
    cb, qc = _random_lut_setup(7)
    lut = ci.build_lut(qc, cb)
    real = ci.lut_real_entries(qc, cb)
    err = np.abs(lut.entries.astype(np.float64) / lut.scale - real)
    assert err.max() <= 1.0 / lut.scale


def test_build_lut_rejects_non_finite():
    cb, qc = _random_lut_setup(8)
    qc[0] = np.inf
    with pytest.raises(InvalidData):
        ci.build_lut(qc, cb)


def test_adc_distance_zero_and_two_term():
    entries = np.zeros((2, 8), dtype=np.uint16)
    lut = ci.Lut(entries=entries, scale=1.0)
    assert ci.adc_distance(np.array([1, 2], dtype=np.uint8), lut) == 0
    entries = entries.copy()
    entries[0, 1] = 3
    entries[1, 2] = 7
    lut = ci.Lut(entries=entries, scale=1.0)
    assert ci.adc_distance(np.array([1, 2], dtype=np.uint8), lut) == 10


def test_adc_distance_matches_float_oracle():
    cb, qc = _random_lut_setup(10, m=8, kstar=16, dsub=3)
    rng = np.random.default_rng(11)
    lut = ci.build_lut(qc, cb)
    for _ in range(50):
        code = rng.integers(0, 16, size=8).astype(np.uint8)
        got = ci.adc_distance(code, lut)
        recon = np.concatenate([cb.tables[i, code[i]] for i in range(8)])
        real = float(((qc.astype(np.float64) - recon) ** 2).sum())
        assert abs(got / lut.scale - real) <= 8.0 / lut.scale


def test_brute_force_topk_basics():
    rng = np.random.default_rng(12)
    data = rng.integers(0, 50, size=(30, 5)).astype(np.float32)
    q = data[7].copy()
    ids = ci.brute_force_topk(data, q, 1)
    assert ids[0] == 7
    allids = ci.brute_force_topk(data, q, 30)
    assert sorted(allids.tolist()) == list(range(30))
    with pytest.raises(InvalidArgument):
        ci.brute_force_topk(data, q, 31)


def test_brute_force_matches_independent_sort():
    rng = np.random.default_rng(13)
    data = rng.integers(-20, 20, size=(60, 6)).astype(np.float32)
    q = rng.integers(-20, 20, size=6).astype(np.float32)
    got = ci.brute_force_topk(data, q, 10).tolist()
    # independent oracle: heapq.nsmallest over exact integer distances
    cand = [(int(((data[i] - q) ** 2).sum()), i) for i in range(60)]
    expect = [i for _, i in heapq.nsmallest(10, cand)]
    assert got == expect


def test_recall_at_k():
    assert ci.recall_at_k([1, 2, 3], [1, 2, 3]) == 1.0
    assert ci.recall_at_k([1, 2, 3], [4, 5, 6]) == 0.0
    assert ci.recall_at_k(list(range(10)), list(range(5, 15))) == 0.5
    with pytest.raises(InvalidArgument):
        ci.recall_at_k([1], [1, 2])


def _zero_error_instance(seed, n=24, d=8, nclusters=3, m=4, k=5):
    """Integer-grid instance with distinct true distances per query.

    With kstar >= the number of points every residual sub-vector gets its own
    codeword, so ADC equals the true distance exactly up to LUT rounding,
    which is far smaller than the unit gap between distinct integer
    distances.
    """
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 32, size=(n, d)).astype(np.float32)
    queries = rng.integers(0, 32, size=(3, d)).astype(np.float32)
    for q in queries:
        dists = ((data - q) ** 2).sum(axis=1)
        if len(set(dists.tolist())) != n:
            return None
    return data, queries


def test_ivfpq_with_zero_quantization_error_matches_brute_force():
    found = 0
    for seed in range(200):
        inst = _zero_error_instance(seed)
        if inst is None:
            continue
        found += 1
        data, queries = inst
        n, k = data.shape[0], 5
        cq = ci.train_coarse_quantizer(data, 3, seed=seed)
        labels, residuals = ci.assign_and_residual(data, cq)
        cb = ci.train_pq(residuals, m=4, kstar=n, seed=seed + 1)
        enc = ci.encode(residuals, labels, cb, nclusters=3)
        for q in queries:
            ids, _ = ci.ivfpq_search(q, cq, cb, enc, nprobe=3, k=k)
            expect = ci.brute_force_topk(data, q, k)
            assert ids.tolist() == expect.tolist()
        if found >= 5:
            return
    raise AssertionError(f"only {found} tie-free instances found")


def test_search_paths_are_deterministic():
    rng = np.random.default_rng(14)
    data = rng.normal(size=(100, 8)).astype(np.float32)
    q = rng.normal(size=8).astype(np.float32)
    cq = ci.train_coarse_quantizer(data, 4, seed=0)
    labels, residuals = ci.assign_and_residual(data, cq)
    cb = ci.train_pq(residuals, m=4, kstar=16, seed=1)
    enc = ci.encode(residuals, labels, cb, nclusters=4)
    a = ci.ivfpq_search(q, cq, cb, enc, nprobe=4, k=7)
    b = ci.ivfpq_search(q, cq, cb, enc, nprobe=4, k=7)
    assert a[0].tolist() == b[0].tolist()
    assert a[1].tolist() == b[1].tolist()
