"""IVFPQ core: coarse quantizer, product-quantization codebooks, residual
encoding, fixed-point lookup tables, and the exact-search oracles.

Conventions used throughout:

* datasets are (N, D) float32 matrices; all distances are squared L2;
* every argmin breaks ties toward the lowest index, so training and search
  are bit-reproducible for a fixed (data, seed, config) triple;
* LUT entries are unsigned 16-bit fixed point with an explicit scale, and
  ADC accumulates them in exact 32-bit integers, which keeps the classic and
  re-encoded distance paths bit-identical regardless of summation order.

k-means is Lloyd's algorithm with k-means++ seeding, capped at 25 iterations
or a relative inertia change below 1e-4; an empty cluster is reseeded from
the farthest point of the largest cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidArgument, InvalidData

LUT_MAX = 65535  # stored LUT entries are uint16
KMEANS_MAX_ITER = 25
KMEANS_REL_TOL = 1e-4


@dataclass(frozen=True)
class CoarseQuantizer:
    """Cluster centroids of the inverted file, one row per cluster."""

    centroids: np.ndarray  # (nclusters, D) float32

    @property
    def nclusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class PQCodebook:
    """Per-subspace codebooks: tables[i] holds kstar codewords of length dsub."""

    tables: np.ndarray  # (M, kstar, dsub) float32

    @property
    def m(self) -> int:
        return self.tables.shape[0]

    @property
    def kstar(self) -> int:
        return self.tables.shape[1]

    @property
    def dsub(self) -> int:
        return self.tables.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.dsub


@dataclass
class EncodedDataset:
    """PQ codes grouped by cluster; ids keep the original row numbers."""

    ids: list  # per cluster: (s_i,) int64
    codes: list  # per cluster: (s_i, M) uint8
    m: int
    kstar: int
    residual_encoded: bool = True

    @property
    def nclusters(self) -> int:
        return len(self.ids)

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.ids], dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.sizes().sum())


@dataclass(frozen=True)
class Lut:
    """Fixed-point lookup table for one (query, cluster) pair.

    entries[i][j] quantizes the squared distance between sub-segment i of the
    q - c vector and codeword j of sub-codebook i. `scale` maps stored values
    back to real distance units (real ~= stored / scale).
    """

    entries: np.ndarray  # (M, kstar) uint16
    scale: float

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def kstar(self) -> int:
        return self.entries.shape[1]

    def flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.entries, dtype=np.uint16).ravel()


def _check_matrix(data: np.ndarray, name: str = "data") -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise InvalidData(f"{name} contains non-finite values")
    return np.ascontiguousarray(data, dtype=np.float32)


def pairwise_sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared L2 distances between rows of x (n, d) and rows of c (m, d)."""
    x64 = x.astype(np.float64, copy=False)
    c64 = c.astype(np.float64, copy=False)
    d2 = (
        np.einsum("ij,ij->i", x64, x64)[:, None]
        + np.einsum("ij,ij->i", c64, c64)[None, :]
        - 2.0 * (x64 @ c64.T)
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = data[first]
    d2 = pairwise_sqdist(data, centroids[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every point already coincides with a centroid; duplicates are
            # harmless and get cleaned up by empty-cluster reseeding
            centroids[j] = data[0]
            continue
        pick = int(rng.choice(n, p=d2 / total))
        centroids[j] = data[pick]
        d2 = np.minimum(d2, pairwise_sqdist(data, centroids[j : j + 1])[:, 0])
    return centroids


def _reseed_empty(data, labels, centroids, counts):
    """Reseed each empty cluster from the farthest point of the largest one."""
    for empty in np.nonzero(counts == 0)[0]:
        donor = int(np.argmax(counts))  # argmax takes the lowest index on ties
        members = np.nonzero(labels == donor)[0]
        far = pairwise_sqdist(data[members], centroids[donor : donor + 1])[:, 0]
        chosen = members[int(np.argmax(far))]
        centroids[empty] = data[chosen]
        labels[chosen] = empty
        counts[donor] -= 1
        counts[empty] += 1


def _lloyd(data: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, k, rng)
    prev_inertia = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = pairwise_sqdist(data, centroids)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(data.shape[0]), labels].sum())
        counts = np.bincount(labels, minlength=k)
        if (counts == 0).any():
            _reseed_empty(data, labels, centroids, counts)
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = data[members].astype(np.float64).mean(axis=0)
        if prev_inertia is not None:
            if prev_inertia == 0.0 or (prev_inertia - inertia) / max(prev_inertia, 1e-300) < KMEANS_REL_TOL:
                break
        prev_inertia = inertia
    return centroids.astype(np.float32)


def train_coarse_quantizer(data: np.ndarray, nclusters: int, seed: int) -> CoarseQuantizer:
    """Cluster the dataset into `nclusters` centroids with seeded k-means."""
    data = _check_matrix(data)
    if nclusters < 1 or nclusters > data.shape[0]:
        raise InvalidArgument(
            f"nclusters must be in [1, {data.shape[0]}], got {nclusters}"
        )
    return CoarseQuantizer(_lloyd(data, nclusters, seed))


def assign_and_residual(data: np.ndarray, cq: CoarseQuantizer):
    """Assign each row to its nearest centroid and return (labels, residuals)."""
    data = _check_matrix(data)
    if data.shape[1] != cq.dim:
        raise InvalidArgument(
            f"dimension mismatch: data has D={data.shape[1]}, quantizer D={cq.dim}"
        )
    labels = np.argmin(pairwise_sqdist(data, cq.centroids), axis=1)
    residuals = data - cq.centroids[labels]
    return labels.astype(np.int64), residuals.astype(np.float32)


def train_pq(residuals: np.ndarray, m: int, kstar: int, seed: int) -> PQCodebook:
    """Train one k-means codebook per subspace on the residual sub-vectors."""
    residuals = _check_matrix(residuals, "residuals")
    d = residuals.shape[1]
    if m < 1 or d % m != 0:
        raise InvalidArgument(f"D={d} is not divisible by m={m}")
    if not 1 <= kstar <= 256:
        raise InvalidArgument(f"kstar must be in [1, 256], got {kstar}")
    dsub = d // m
    tables = np.empty((m, kstar, dsub), dtype=np.float32)
    for i in range(m):
        sub = np.ascontiguousarray(residuals[:, i * dsub : (i + 1) * dsub])
        tables[i] = _lloyd(sub, kstar, seed + i)
    return PQCodebook(tables)


def compression_rate(d: int, m: int) -> float:
    """Storage ratio of float32 vectors over M-byte codes: 4*D/M."""
    return 4.0 * d / m


def encode(
    residuals: np.ndarray,
    assignments: np.ndarray,
    codebook: PQCodebook,
    nclusters: int | None = None,
) -> EncodedDataset:
    """Encode residuals to nearest-codeword bytes, grouped by cluster id."""
    residuals = _check_matrix(residuals, "residuals")
    if residuals.shape[1] != codebook.dim:
        raise InvalidArgument(
            f"dimension mismatch: residuals D={residuals.shape[1]}, codebook D={codebook.dim}"
        )
    assignments = np.asarray(assignments, dtype=np.int64)
    if assignments.shape[0] != residuals.shape[0]:
        raise InvalidArgument("assignments length must match residual rows")
    n = residuals.shape[0]
    m, dsub = codebook.m, codebook.dsub
    codes = np.empty((n, m), dtype=np.uint8)
    for i in range(m):
        sub = residuals[:, i * dsub : (i + 1) * dsub]
        codes[:, i] = np.argmin(pairwise_sqdist(sub, codebook.tables[i]), axis=1)
    if nclusters is None:
        nclusters = int(assignments.max()) + 1 if n else 0
    ids, grouped = [], []
    for c in range(nclusters):
        rows = np.nonzero(assignments == c)[0]
        ids.append(rows.astype(np.int64))
        grouped.append(np.ascontiguousarray(codes[rows]))
    return EncodedDataset(ids=ids, codes=grouped, m=m, kstar=codebook.kstar)


def filter_clusters(q: np.ndarray, cq: CoarseQuantizer, nprobe: int):
    """Select the nprobe nearest clusters, ascending by centroid distance.

    Returns a list of (cluster_id, q - c) pairs; ties go to the lower id.
    """
    q = np.asarray(q, dtype=np.float32)
    if not np.isfinite(q).all():
        raise InvalidData("query contains non-finite values")
    if not 1 <= nprobe <= cq.nclusters:
        raise InvalidArgument(f"nprobe must be in [1, {cq.nclusters}], got {nprobe}")
    d2 = pairwise_sqdist(q[None, :], cq.centroids)[0]
    order = np.lexsort((np.arange(cq.nclusters), d2))[:nprobe]
    return [(int(c), q - cq.centroids[c]) for c in order]


def build_lut(qc: np.ndarray, codebook: PQCodebook, scale: float | None = None) -> Lut:
    """Build the fixed-point LUT of partial distances for one q - c vector.

    Real entry (i, j) is the squared distance between sub-segment i of qc and
    codeword j. When `scale` is omitted it is chosen per call so the maximal
    real entry maps to 65535; search paths pass one shared per-query scale so
    sums stay comparable across clusters.
    """
    qc = np.asarray(qc, dtype=np.float32)
    if not np.isfinite(qc).all():
        raise InvalidData("q - c vector contains non-finite values")
    if qc.shape[0] != codebook.dim:
        raise InvalidArgument(
            f"q - c has length {qc.shape[0]}, codebook expects {codebook.dim}"
        )
    real = lut_real_entries(qc, codebook)
    if scale is None:
        top = float(real.max())
        scale = LUT_MAX / top if top > 0.0 else 1.0
    if scale <= 0.0:
        raise InvalidArgument(f"scale must be positive, got {scale}")
    entries = np.minimum(np.rint(real * scale), LUT_MAX).astype(np.uint16)
    return Lut(entries=entries, scale=float(scale))


def lut_real_entries(qc: np.ndarray, codebook: PQCodebook) -> np.ndarray:
    """Unquantized LUT entries as (M, kstar) float64."""
    m, kstar, dsub = codebook.m, codebook.kstar, codebook.dsub
    segs = qc.astype(np.float64).reshape(m, 1, dsub)
    diff = segs - codebook.tables.astype(np.float64)
    return np.einsum("mkd,mkd->mk", diff, diff)


def adc_distance(code: np.ndarray, lut: Lut) -> int:
    """Exact integer ADC distance of one M-byte code against a LUT."""
    code = np.asarray(code, dtype=np.uint8)
    if code.shape != (lut.m,):
        raise InvalidArgument(f"code must have shape ({lut.m},), got {code.shape}")
    return int(kernels.adc_scan(code[None, :], lut.entries)[0])


def brute_force_topk(data: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k point ids by squared L2, ties toward the lower id."""
    data = _check_matrix(data)
    q = np.asarray(q, dtype=np.float32)
    if not 1 <= k <= data.shape[0]:
        raise InvalidArgument(f"k must be in [1, {data.shape[0]}], got {k}")
    diff = data.astype(np.float64) - q.astype(np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((np.arange(data.shape[0]), d2))
    return order[:k].astype(np.int64)


def recall_at_k(result, truth) -> float:
    """Fraction of ground-truth ids present in the result list."""
    result = list(result)
    truth = list(truth)
    if len(result) != len(truth):
        raise InvalidArgument(
            f"result and truth must have equal length, got {len(result)} vs {len(truth)}"
        )
    if not result:
        raise InvalidArgument("recall of empty lists is undefined")
    return len(set(result) & set(truth)) / len(truth)


def query_lut_scale(q: np.ndarray, probes, codebook: PQCodebook) -> float:
    """Shared fixed-point scale for one query across all its probed clusters."""
    top = 0.0
    for _, qc in probes:
        real = lut_real_entries(np.asarray(qc, dtype=np.float32), codebook)
        top = max(top, float(real.max()))
    return LUT_MAX / top if top > 0.0 else 1.0


def ivfpq_search(
    q: np.ndarray,
    cq: CoarseQuantizer,
    codebook: PQCodebook,
    enc: EncodedDataset,
    nprobe: int,
    k: int,
):
    """Reference IVFPQ search for one query.

    Scans the nprobe nearest clusters with quantized LUTs (one scale per
    query) and returns (ids, fixed_point_distances) of the k best candidates,
    ties broken by lower point id.
    """
    probes = filter_clusters(q, cq, nprobe)
    scale = query_lut_scale(q, probes, codebook)
    all_ids = []
    all_dists = []
    for cid, qc in probes:
        if len(enc.ids[cid]) == 0:
            continue
        lut = build_lut(qc, codebook, scale=scale)
        all_dists.append(kernels.adc_scan(enc.codes[cid], lut.entries))
        all_ids.append(enc.ids[cid])
    if not all_ids:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.uint32)
    ids = np.concatenate(all_ids)
    dists = np.concatenate(all_dists)
    order = np.lexsort((ids, dists))[:k]
    return ids[order], dists[order]
