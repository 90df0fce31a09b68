"""Mining, cache layout, re-encoding, and distance preservation."""

import itertools

import numpy as np
import pytest

from pimann import cooccur as co
from pimann import core_index as ci
from pimann.errors import CacheOverflow, CorruptEncoding


def _exhaustive_triple_count(codes, cols, vals):
    hits = 0
    for row in codes:
        if all(int(row[c]) == v for c, v in zip(cols, vals)):
            hits += 1
    return hits


def test_mining_identical_cluster_takes_leading_columns():
    row = np.arange(16, dtype=np.uint8) * 3
    codes = np.tile(row, (40, 1))
    cset = co.build_icg_and_mine(codes, m=64)
    first = cset.combos[0]
    assert first.columns == (0, 1, 2)
    assert first.codes == tuple(int(row[c]) for c in (0, 1, 2))
    assert first.count == 40


def test_mining_counts_match_exhaustive_recount():
    rng = np.random.default_rng(5)
    codes = rng.integers(0, 4, size=(300, 6), dtype=np.uint8)
    cset = co.build_icg_and_mine(codes, m=32, kstar=4)
    assert cset.nslots > 0
    for combo in cset.combos:
        expect = _exhaustive_triple_count(codes, combo.columns, combo.codes)
        assert combo.count == expect


def test_mining_respects_column_window():
    rng = np.random.default_rng(6)
    codes = rng.integers(0, 8, size=(100, 12), dtype=np.uint8)
    cset = co.build_icg_and_mine(codes, m=200, kstar=8, window=4)
    for combo in cset.combos:
        assert combo.columns[-1] - combo.columns[0] <= 3
        assert list(combo.columns) == sorted(combo.columns)


def test_mining_popular_triple_is_selected():
    # one triple planted in 5.7% of rows, everything else near-unique
    rng = np.random.default_rng(7)
    n = 1000
    codes = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    planted = rng.choice(n, size=57, replace=False)
    codes[planted[:, None], [0, 1, 2]] = [1, 15, 26]
    cset = co.build_icg_and_mine(codes, m=256)
    triples = [c for c in cset.combos if c.size == 3]
    assert any(
        c.columns == (0, 1, 2) and c.codes == (1, 15, 26) and c.count >= 57
        for c in triples
    )


def test_mining_budget_and_subset_slots():
    row = np.zeros(16, dtype=np.uint8)
    codes = np.tile(row, (10, 1))
    cset = co.build_icg_and_mine(codes, m=6)
    # one triple plus its three pairs fit, then the budget truncates
    assert cset.nslots == 6
    assert [c.size for c in cset.combos][:4] == [3, 2, 2, 2]
    slots = [c.slot for c in cset.combos]
    assert slots == list(range(6))


def test_layout_cache_addresses():
    row = np.arange(16, dtype=np.uint8)
    codes = np.tile(row, (10, 1))
    cset = co.build_icg_and_mine(codes, m=16)
    amap = co.layout_cache(cset, m_dims=16, kstar=256)
    base = 16 * 256
    assert amap[(cset.combos[0].columns, cset.combos[0].codes)] == base
    values = sorted(amap.values())
    assert values == list(range(base, base + cset.nslots))
    with pytest.raises(CacheOverflow):
        co.layout_cache(cset, m_dims=16, kstar=256, capacity=cset.nslots - 1)


def _figure_style_set():
    """Three mined triples with their pair subsets, as in the worked example."""
    combos = []
    slot = 0
    for cols, vals in (
        ((0, 1, 2), (1, 15, 26)),
        ((4, 5, 6), (79, 25, 77)),
        ((8, 9, 10), (2, 14, 31)),
    ):
        combos.append(co.Combination(columns=cols, codes=vals, slot=slot, count=100))
        slot += 1
        for a, b in ((0, 1), (0, 2), (1, 2)):
            combos.append(
                co.Combination(
                    columns=(cols[a], cols[b]),
                    codes=(vals[a], vals[b]),
                    slot=slot,
                    count=100,
                )
            )
            slot += 1
    return co.CombinationSet(m_dims=16, kstar=256, capacity=256, combos=combos)


def test_worked_example_reencodes_sixteen_to_twelve():
    cset = _figure_style_set()
    code = np.arange(100, 116, dtype=np.uint8)
    code[[0, 1, 2]] = [1, 15, 26]  # full triple at columns 0..2
    code[[4, 5]] = [79, 25]  # only the (79, 25) pair of the second set
    code[[9, 10]] = [14, 31]  # only the (14, 31) pair of the third set
    vec = co.reencode(code, cset)
    assert vec.length == 12  # 16 -> 12, a 25% reduction
    stats = co.length_stats([vec.length], 16)
    assert stats["reduction"] == pytest.approx(0.25)
    base = 16 * 256
    combo_addrs = [int(a) for a in vec.addrs if a >= base]
    assert len(combo_addrs) == 3
    # slot 7 is the (25, 77) pair: direct address 16*256 + 7 = 4103
    amap = co.layout_cache(cset, 16, 256)
    assert amap[((5, 6), (25, 77))] == 4103
    assert np.array_equal(co.decode(vec, cset), code)


def test_worked_example_distance_equals_classic():
    rng = np.random.default_rng(20)
    cset = _figure_style_set()
    code = np.arange(100, 116, dtype=np.uint8)
    code[[0, 1, 2]] = [1, 15, 26]
    code[[4, 5]] = [79, 25]
    code[[9, 10]] = [14, 31]
    lut = _random_lut(rng, 16, 256)
    xlut = co.compute_partial_sums(lut, cset)
    vec = co.reencode(code, cset)
    assert co.adc_distance_reencoded(vec, xlut) == ci.adc_distance(code, lut)


def test_reencode_no_match_keeps_all_columns():
    cset = co.CombinationSet(m_dims=8, kstar=16, capacity=16, combos=[])
    code = np.arange(8, dtype=np.uint8)
    vec = co.reencode(code, cset)
    assert vec.length == 8
    assert vec.addrs.tolist() == [c * 16 + c for c in range(8)]


def test_reencode_cluster_matches_scalar_reencode():
    rng = np.random.default_rng(8)
    codes = rng.integers(0, 8, size=(200, 10), dtype=np.uint8)
    cset = co.build_icg_and_mine(codes, m=32, kstar=8)
    cluster = co.reencode_cluster(codes, cset)
    for i in range(codes.shape[0]):
        one = co.reencode(codes[i], cset)
        got = cluster.vector(i)
        assert got.length == one.length
        assert got.addrs.tolist() == one.addrs.tolist()


def test_decode_roundtrip_on_random_clusters():
    rng = np.random.default_rng(9)
    for seed in range(5):
        codes = rng.integers(0, 16, size=(150, 12), dtype=np.uint8)
        cset = co.build_icg_and_mine(codes, m=48, kstar=16)
        cluster = co.reencode_cluster(codes, cset)
        decoded = np.stack(
            [co.decode(cluster.vector(i), cset) for i in range(codes.shape[0])]
        )
        assert np.array_equal(decoded, codes)


def _random_lut(rng, m, kstar):
    entries = rng.integers(0, 65536, size=(m, kstar), dtype=np.uint16)
    return ci.Lut(entries=entries, scale=1.0)


def test_partial_sums_verbatim_index_arithmetic():
    rng = np.random.default_rng(10)
    lut = _random_lut(rng, 16, 256)
    cset = co.CombinationSet(
        m_dims=16,
        kstar=256,
        capacity=256,
        combos=[co.Combination(columns=(0, 1, 2), codes=(1, 15, 26), slot=0)],
    )
    xlut = co.compute_partial_sums(lut, cset)
    flat = lut.flat().astype(np.uint32)
    assert xlut.slot_values[0] == flat[1] + flat[271] + flat[538]


def test_partial_sums_zero_lut_and_recount():
    rng = np.random.default_rng(11)
    zeros = ci.Lut(entries=np.zeros((4, 8), dtype=np.uint16), scale=1.0)
    codes = rng.integers(0, 8, size=(50, 4), dtype=np.uint8)
    cset = co.build_icg_and_mine(codes, m=16, kstar=8)
    xlut = co.compute_partial_sums(zeros, cset)
    assert (xlut.slot_values == 0).all()
    lut = _random_lut(rng, 4, 8)
    xlut = co.compute_partial_sums(lut, cset)
    flat = lut.flat().astype(np.uint32)
    for combo in cset.combos:
        expect = sum(int(flat[a]) for a in combo.member_addresses(8))
        assert int(xlut.slot_values[combo.slot]) == expect


def test_reencoded_distance_identical_to_classic():
    rng = np.random.default_rng(12)
    trials = 0
    for block in range(20):
        m, kstar = 16, 32
        codes = rng.integers(0, kstar, size=(500, m), dtype=np.uint8)
        # plant combos so matching actually happens
        planted = rng.choice(500, size=200, replace=False)
        codes[planted[:, None], [0, 1, 2]] = rng.integers(0, 4, size=(1, 3))
        cset = co.build_icg_and_mine(codes, m=64, kstar=kstar)
        lut = _random_lut(rng, m, kstar)
        xlut = co.compute_partial_sums(lut, cset)
        cluster = co.reencode_cluster(codes, cset)
        for i in range(codes.shape[0]):
            classic = ci.adc_distance(codes[i], lut)
            re = co.adc_distance_reencoded(cluster.vector(i), xlut)
            assert re == classic
            trials += 1
    assert trials >= 10_000


def test_reencoded_distance_no_combos_is_classic_path():
    rng = np.random.default_rng(13)
    cset = co.CombinationSet(m_dims=8, kstar=16, capacity=16, combos=[])
    lut = _random_lut(rng, 8, 16)
    xlut = co.compute_partial_sums(lut, cset)
    code = rng.integers(0, 16, size=8, dtype=np.uint8)
    vec = co.reencode(code, cset)
    assert vec.length == 8
    assert co.adc_distance_reencoded(vec, xlut) == ci.adc_distance(code, lut)


def test_reencoded_distance_rejects_bad_address():
    cset = co.CombinationSet(m_dims=4, kstar=8, capacity=8, combos=[])
    lut = ci.Lut(entries=np.zeros((4, 8), dtype=np.uint16), scale=1.0)
    xlut = co.compute_partial_sums(lut, cset)
    vec = co.ReencodedVector(length=1, addrs=np.array([4 * 8 + 3], dtype=np.uint16))
    with pytest.raises(CorruptEncoding):
        co.adc_distance_reencoded(vec, xlut)


def test_lookup_reduction_is_monotone():
    rng = np.random.default_rng(14)
    codes = rng.integers(0, 4, size=(300, 12), dtype=np.uint8)
    cset = co.build_icg_and_mine(codes, m=128, kstar=4)
    cluster = co.reencode_cluster(codes, cset)
    assert int(cluster.lens.sum()) <= codes.shape[0] * 12
    empty = co.CombinationSet(m_dims=12, kstar=4, capacity=4, combos=[])
    untouched = co.reencode_cluster(codes, empty)
    assert int(untouched.lens.sum()) == codes.shape[0] * 12


def test_length_stats_thresholds():
    no_match = co.length_stats([16, 16, 16], 16)
    assert no_match["reduction"] == 0.0 and not no_match["adopted"]
    quarter = co.length_stats([12, 12], 16)
    assert quarter["reduction"] == pytest.approx(0.25)
    assert not quarter["adopted"]
    deep = co.length_stats([4, 4], 16)
    assert deep["adopted"]
    assert co.length_stats([12, 12], 16, adoption_threshold=0.2)["adopted"]


def test_serialization_roundtrip_bit_exact():
    rng = np.random.default_rng(15)
    codes = rng.integers(0, 16, size=(80, 12), dtype=np.uint8)
    cset = co.build_icg_and_mine(codes, m=32, kstar=16)
    cluster = co.reencode_cluster(codes, cset)
    blob = co.serialize_reencoded(cluster, cset)
    parsed_cluster, parsed_set = co.deserialize_reencoded(blob)
    assert co.serialize_reencoded(parsed_cluster, parsed_set) == blob
    assert parsed_cluster.lens.tolist() == cluster.lens.tolist()
    assert parsed_cluster.addrs.tolist() == cluster.addrs.tolist()
    assert [c.columns for c in parsed_set.combos] == [c.columns for c in cset.combos]
    assert [c.codes for c in parsed_set.combos] == [c.codes for c in cset.combos]


def test_position_sensitivity():
    cset = co.CombinationSet(
        m_dims=6,
        kstar=8,
        capacity=8,
        combos=[co.Combination(columns=(0, 1, 2), codes=(1, 2, 3), slot=0)],
    )
    right = np.array([1, 2, 3, 0, 0, 0], dtype=np.uint8)
    shifted = np.array([0, 1, 2, 3, 0, 0], dtype=np.uint8)  # same values, wrong columns
    assert co.reencode(right, cset).length == 4
    assert co.reencode(shifted, cset).length == 6
