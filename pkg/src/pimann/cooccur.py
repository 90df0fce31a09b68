"""Co-occurrence aware re-encoding of PQ codes.

Offline, frequent (column, code) triples are mined per cluster over sliding
column windows, each mined triple and its length-2 subsets get a cache slot,
and vectors are rewritten as variable-length lists of 16-bit direct
addresses: surviving original codes address the flat LUT (column*kstar +
code), combination codes address the partial-sum cache placed right after it
(m*kstar + slot). Online, the cached slot values are exact integer sums of
LUT entries, so re-encoded ADC distances are bit-identical to the classic
path and recall is unchanged.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .core_index import Lut
from .errors import CacheOverflow, CorruptEncoding, InvalidArgument

DEFAULT_SLOT_BUDGET = 256
DEFAULT_WINDOW = 4


@dataclass(frozen=True)
class Combination:
    """One cached (column, code) combination and its cache slot."""

    columns: tuple
    codes: tuple
    slot: int
    count: int = 0

    @property
    def size(self) -> int:
        return len(self.columns)

    def member_addresses(self, kstar: int):
        return [c * kstar + v for c, v in zip(self.columns, self.codes)]


@dataclass
class CombinationSet:
    """Cached combinations of one cluster, in slot order."""

    m_dims: int
    kstar: int
    capacity: int
    combos: list = field(default_factory=list)

    @property
    def nslots(self) -> int:
        return len(self.combos)

    @property
    def base_size(self) -> int:
        return self.m_dims * self.kstar

    def address_of(self, slot: int) -> int:
        return self.base_size + slot

    def member_counts(self) -> np.ndarray:
        return np.array([c.size for c in self.combos], dtype=np.int64)

    def matching_order(self):
        """Combinations in match priority: triples before pairs, slot order."""
        triples = [c for c in self.combos if c.size == 3]
        pairs = [c for c in self.combos if c.size == 2]
        return triples + pairs


@dataclass(frozen=True)
class ReencodedVector:
    """Variable-length direct-address form of one M-byte code."""

    length: int
    addrs: np.ndarray  # (length,) uint16


@dataclass
class ReencodedCluster:
    """All re-encoded vectors of one cluster, stored as a ragged address list."""

    lens: np.ndarray  # (P,) int64
    addrs: np.ndarray  # flat uint16
    offsets: np.ndarray  # (P+1,) int64

    @property
    def npoints(self) -> int:
        return self.lens.shape[0]

    def vector(self, i: int) -> ReencodedVector:
        span = self.addrs[self.offsets[i] : self.offsets[i + 1]]
        return ReencodedVector(length=int(self.lens[i]), addrs=span.copy())

    def payload_bytes(self) -> int:
        """Serialized bytes: one length byte plus two per address."""
        return int(self.lens.shape[0] + 2 * self.lens.sum())


@dataclass
class ExtendedLut:
    """Flat LUT followed contiguously by the cached partial sums.

    Slot values are stored 32-bit: a triple of uint16 entries can exceed
    16 bits.
    """

    lut: Lut
    slot_values: np.ndarray  # (nslots,) uint32
    member_counts: np.ndarray  # (nslots,) int64

    @property
    def nslots(self) -> int:
        return self.slot_values.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.lut.flat().astype(np.uint32), self.slot_values])


def _count_triples(codes: np.ndarray, window: int):
    """Exact counts of position-anchored code triples within column windows."""
    p, m = codes.shape
    counts = {}
    wide = codes.astype(np.int64)
    for c0 in range(m - 2):
        hi = min(m, c0 + window)
        cols_after = range(c0 + 1, hi)
        for c1 in cols_after:
            for c2 in range(c1 + 1, hi):
                packed = (wide[:, c0] * 256 + wide[:, c1]) * 256 + wide[:, c2]
                vals, freq = np.unique(packed, return_counts=True)
                for v, f in zip(vals, freq):
                    v = int(v)
                    key = (c0, v >> 16, c1, (v >> 8) & 0xFF, c2, v & 0xFF)
                    counts[key] = int(f)
    return counts


def _count_pair(codes: np.ndarray, cols, vals) -> int:
    mask = codes[:, cols[0]] == vals[0]
    mask &= codes[:, cols[1]] == vals[1]
    return int(np.count_nonzero(mask))


def build_icg_and_mine(
    codes: np.ndarray,
    m: int = DEFAULT_SLOT_BUDGET,
    kstar: int = 256,
    window: int = DEFAULT_WINDOW,
) -> CombinationSet:
    """Mine the cluster's frequent triples and allocate cache slots.

    Triples are counted exactly over sliding column windows of width <=
    `window`, then selected greedily by (frequency desc, lexicographic asc),
    skipping any triple that shares a (column, code) member with an earlier
    selection. Each selected triple also caches its three length-2 subsets
    while the slot budget `m` allows.
    """
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise InvalidArgument("codes must be a non-empty (P, M) matrix")
    if m < 1:
        raise InvalidArgument(f"slot budget must be >= 1, got {m}")
    mdims = codes.shape[1]
    cset = CombinationSet(m_dims=mdims, kstar=kstar, capacity=m)
    if mdims < 3:
        return cset
    counts = _count_triples(codes, window)
    order = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    used_members = set()
    for key, freq in order:
        if cset.nslots >= m:
            break
        members = [(key[0], key[1]), (key[2], key[3]), (key[4], key[5])]
        if any(mb in used_members for mb in members):
            continue
        used_members.update(members)
        cols = (key[0], key[2], key[4])
        vals = (key[1], key[3], key[5])
        cset.combos.append(
            Combination(columns=cols, codes=vals, slot=cset.nslots, count=freq)
        )
        for a, b in ((0, 1), (0, 2), (1, 2)):
            if cset.nslots >= m:
                break
            pcols = (cols[a], cols[b])
            pvals = (vals[a], vals[b])
            cset.combos.append(
                Combination(
                    columns=pcols,
                    codes=pvals,
                    slot=cset.nslots,
                    count=_count_pair(codes, pcols, pvals),
                )
            )
    return cset


def layout_cache(cset: CombinationSet, m_dims: int, kstar: int, capacity: int = DEFAULT_SLOT_BUDGET):
    """Map each cached combination to its direct address after the LUT.

    Slot s lives at m_dims*kstar + s; the map is injective by construction.
    Raises CacheOverflow when the set needs more than `capacity` slots.
    """
    if cset.nslots > capacity:
        raise CacheOverflow(
            f"{cset.nslots} slots exceed the cache capacity of {capacity}"
        )
    base = m_dims * kstar
    return {(c.columns, c.codes): base + c.slot for c in cset.combos}


def reencode(code: np.ndarray, cset: CombinationSet) -> ReencodedVector:
    """Re-encode one M-byte code against a combination set.

    Greedy matching tries triples before pairs, lower slots first, and only
    on disjoint columns; every unmatched column keeps its original code as a
    column*kstar + code direct address.
    """
    code = np.asarray(code, dtype=np.uint8)
    if code.shape != (cset.m_dims,):
        raise InvalidArgument(f"code must have shape ({cset.m_dims},)")
    used = np.zeros(cset.m_dims, dtype=bool)
    combo_addrs = []
    for combo in cset.matching_order():
        cols = list(combo.columns)
        if used[cols].any():
            continue
        if all(int(code[c]) == v for c, v in zip(combo.columns, combo.codes)):
            used[cols] = True
            combo_addrs.append(cset.address_of(combo.slot))
    originals = [
        c * cset.kstar + int(code[c]) for c in range(cset.m_dims) if not used[c]
    ]
    addrs = np.array(originals + sorted(combo_addrs), dtype=np.uint16)
    return ReencodedVector(length=len(addrs), addrs=addrs)


def reencode_cluster(codes: np.ndarray, cset: CombinationSet) -> ReencodedCluster:
    """Vectorized `reencode` over a whole cluster."""
    codes = np.asarray(codes, dtype=np.uint8)
    p, mdims = codes.shape
    used = np.zeros((p, mdims), dtype=bool)
    combo_rows = []
    combo_addr = []
    for combo in cset.matching_order():
        cols = list(combo.columns)
        match = ~used[:, cols].any(axis=1)
        for c, v in zip(combo.columns, combo.codes):
            match &= codes[:, c] == v
        rows = np.nonzero(match)[0]
        if rows.size:
            used[rows[:, None], np.array(cols)[None, :]] = True
            combo_rows.append(rows)
            combo_addr.append(np.full(rows.size, cset.address_of(combo.slot), dtype=np.uint16))
    orig_rows, orig_cols = np.nonzero(~used)
    orig_addr = (orig_cols * cset.kstar + codes[orig_rows, orig_cols]).astype(np.uint16)
    orig_counts = np.bincount(orig_rows, minlength=p)
    if combo_rows:
        crows = np.concatenate(combo_rows)
        caddr = np.concatenate(combo_addr)
        # group by row, ascending address (= ascending slot) within each row
        pos = np.lexsort((caddr, crows))
        crows, caddr = crows[pos], caddr[pos]
        combo_counts = np.bincount(crows, minlength=p)
    else:
        crows = np.zeros(0, dtype=np.int64)
        caddr = np.zeros(0, dtype=np.uint16)
        combo_counts = np.zeros(p, dtype=np.int64)
    lens = (orig_counts + combo_counts).astype(np.int64)
    offsets = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    flat = np.empty(int(offsets[-1]), dtype=np.uint16)
    # originals are emitted row-major so their in-row rank is arange - start
    ostarts = np.concatenate([[0], np.cumsum(orig_counts)[:-1]])
    orank = np.arange(orig_rows.size, dtype=np.int64) - ostarts[orig_rows]
    flat[offsets[orig_rows] + orank] = orig_addr
    if crows.size:
        cstarts = np.concatenate([[0], np.cumsum(combo_counts)[:-1]])
        crank = np.arange(crows.size, dtype=np.int64) - cstarts[crows]
        flat[offsets[crows] + orig_counts[crows] + crank] = caddr
    return ReencodedCluster(lens=lens, addrs=flat, offsets=offsets)


def decode(vec: ReencodedVector, cset: CombinationSet) -> np.ndarray:
    """Recover the original M-byte code from a re-encoded vector."""
    code = np.zeros(cset.m_dims, dtype=np.uint8)
    seen = np.zeros(cset.m_dims, dtype=bool)
    base = cset.base_size
    for addr in vec.addrs:
        addr = int(addr)
        if addr < base:
            col, val = divmod(addr, cset.kstar)
            cols, vals = (col,), (val,)
        else:
            slot = addr - base
            if slot >= cset.nslots:
                raise CorruptEncoding(f"address {addr} beyond slot table")
            combo = cset.combos[slot]
            cols, vals = combo.columns, combo.codes
        for c, v in zip(cols, vals):
            if seen[c]:
                raise CorruptEncoding(f"column {c} decoded twice")
            seen[c] = True
            code[c] = v
    if not seen.all():
        raise CorruptEncoding("decoded vector does not cover all columns")
    return code


def compute_partial_sums(lut: Lut, cset: CombinationSet) -> ExtendedLut:
    """Fill the cache slots with exact integer sums of member LUT entries."""
    flat = lut.flat().astype(np.uint32)
    values = np.zeros(cset.nslots, dtype=np.uint32)
    for combo in cset.combos:
        values[combo.slot] = flat[combo.member_addresses(cset.kstar)].sum(dtype=np.uint32)
    return ExtendedLut(lut=lut, slot_values=values, member_counts=cset.member_counts())


def adc_distance_reencoded(vec: ReencodedVector, xlut: ExtendedLut) -> int:
    """Exact integer ADC distance of a re-encoded vector.

    Bit-identical to `adc_distance` of the original code against the base
    LUT, because each slot value is the exact sum of the entries it replaced.
    """
    table = xlut.flat()
    addrs = vec.addrs.astype(np.int64)
    if addrs.size and int(addrs.max()) >= table.shape[0]:
        raise CorruptEncoding(
            f"address {int(addrs.max())} outside extended LUT of {table.shape[0]}"
        )
    return int(table[addrs].astype(np.uint32).sum(dtype=np.uint32))


def length_stats(lens, m_dims: int, adoption_threshold: float = 0.5) -> dict:
    """Mean re-encoded length, reduction ratio, and the adoption decision."""
    lens = np.asarray(lens, dtype=np.float64)
    if lens.size == 0:
        raise InvalidArgument("length_stats of an empty cluster")
    mean_len = float(lens.mean())
    reduction = 1.0 - mean_len / m_dims
    return {
        "mean_len": mean_len,
        "reduction": reduction,
        "adopted": bool(reduction > adoption_threshold),
    }


def serialize_reencoded(cluster: ReencodedCluster, cset: CombinationSet) -> bytes:
    """Byte-exact cluster blob: header (M, kstar, slot table), then vectors."""
    buf = io.BytesIO()
    buf.write(struct.pack("<HHH", cset.m_dims, cset.kstar, cset.nslots))
    for combo in cset.combos:
        members = combo.member_addresses(cset.kstar)
        buf.write(struct.pack("<B", len(members)))
        buf.write(struct.pack(f"<{len(members)}H", *members))
    for i in range(cluster.npoints):
        span = cluster.addrs[cluster.offsets[i] : cluster.offsets[i + 1]]
        buf.write(struct.pack("<B", int(cluster.lens[i])))
        buf.write(span.astype("<u2").tobytes())
    return buf.getvalue()


def deserialize_reencoded(blob: bytes):
    """Parse `serialize_reencoded` output back to (cluster, combination set).

    Mined frequency counts are not part of the wire format; parsed
    combinations carry count=0.
    """
    if len(blob) < 6:
        raise CorruptEncoding("blob shorter than its fixed header")
    mdims, kstar, nslots = struct.unpack_from("<HHH", blob, 0)
    pos = 6
    combos = []
    for slot in range(nslots):
        (nmem,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        members = struct.unpack_from(f"<{nmem}H", blob, pos)
        pos += 2 * nmem
        cols = tuple(a // kstar for a in members)
        vals = tuple(a % kstar for a in members)
        combos.append(Combination(columns=cols, codes=vals, slot=slot, count=0))
    cset = CombinationSet(m_dims=mdims, kstar=kstar, capacity=max(nslots, 1), combos=combos)
    lens, chunks = [], []
    while pos < len(blob):
        (ln,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if pos + 2 * ln > len(blob):
            raise CorruptEncoding(f"truncated vector at byte {pos}")
        chunks.append(np.frombuffer(blob, dtype="<u2", count=ln, offset=pos).astype(np.uint16))
        lens.append(ln)
        pos += 2 * ln
    lens = np.array(lens, dtype=np.int64)
    offsets = np.zeros(lens.size + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    addrs = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.uint16)
    return ReencodedCluster(lens=lens, addrs=addrs, offsets=offsets), cset
