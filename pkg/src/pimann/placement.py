"""Offline cluster-to-DPU placement with replication and neighbor co-location.

Clusters are placed in descending workload order. A cluster whose workload
w_i = s_i * f_i exceeds the per-DPU average gets ceil(w_i / mean) full-copy
replicas, each carrying w_i / ncopies. Every replica goes to the first DPU,
scanning round-robin from a cursor that persists across placements, that
satisfies both the workload bound (mean * threshold) and the vector-capacity
bound. If a full scan fails, the balance threshold grows by 0.02 and the
whole placement restarts, so the recorded final threshold is the smallest
value in {1.00, 1.02, ...} at which the greedy pass completes and re-running
at that fixed threshold reproduces the plan. After a cluster is placed, its
nearest still-unallocated neighbor clusters are appended to the last replica
DPU while that DPU sits below the average workload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_index import pairwise_sqdist
from .errors import InfeasiblePlacement, InvalidArgument

THRESHOLD_RATE = 0.02
_REL_EPS = 1e-9  # float-safe acceptance of exact-fit workloads


@dataclass(frozen=True)
class ClusterStats:
    """Per-cluster size, access frequency, and derived workload."""

    sizes: np.ndarray  # (C,) int64
    freqs: np.ndarray  # (C,) float64
    centroids: np.ndarray | None = None

    def __post_init__(self):
        if self.sizes.shape != self.freqs.shape:
            raise InvalidArgument("sizes and freqs must have equal length")
        if (self.sizes < 0).any() or (self.freqs < 0).any():
            raise InvalidArgument("sizes and freqs must be non-negative")

    @property
    def nclusters(self) -> int:
        return self.sizes.shape[0]

    @property
    def workloads(self) -> np.ndarray:
        return self.sizes * self.freqs


def estimate_frequencies(history, nclusters: int) -> np.ndarray:
    """Add-one smoothed selection frequency per cluster.

    `history` is a sequence of filtered batches, each an array or nested list
    of selected cluster ids. Every cluster keeps a positive floor and the
    frequencies sum to one.
    """
    history = list(history)
    if not history:
        raise InvalidArgument("history must contain at least one batch")
    counts = np.zeros(nclusters, dtype=np.int64)
    total = 0
    for batch in history:
        flat = np.asarray(batch, dtype=np.int64).ravel()
        if flat.size and (flat.min() < 0 or flat.max() >= nclusters):
            raise InvalidArgument("history references cluster ids out of range")
        counts += np.bincount(flat, minlength=nclusters)
        total += flat.size
    return (counts + 1).astype(np.float64) / (total + nclusters)


@dataclass
class PlacementMap:
    """Cluster -> replica DPU lists plus the per-DPU ledgers."""

    replicas: list  # cluster id -> [dpu, ...] in placement order
    ndpu: int
    max_dpu_size: int
    mean_workload: float
    final_threshold: float
    workload: np.ndarray = field(repr=False)  # (ndpu,) float64 ledger
    vectors: np.ndarray = field(repr=False)  # (ndpu,) int64 ledger

    @property
    def nclusters(self) -> int:
        return len(self.replicas)

    def replica_histogram(self) -> dict:
        hist = {}
        for dpus in self.replicas:
            hist[len(dpus)] = hist.get(len(dpus), 0) + 1
        return dict(sorted(hist.items()))

    def to_text(self) -> str:
        lines = [
            f"ndpu={self.ndpu}",
            f"nclusters={self.nclusters}",
            f"max_dpu_size={self.max_dpu_size}",
            f"mean_workload={self.mean_workload!r}",
            f"final_threshold={self.final_threshold!r}",
        ]
        for cid, dpus in enumerate(self.replicas):
            lines.append(f"{cid}: {','.join(str(d) for d in dpus)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, stats: ClusterStats) -> "PlacementMap":
        header = {}
        replicas = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if "=" in line and ":" not in line:
                key, val = line.split("=", 1)
                header[key] = val
            else:
                cid, dpus = line.split(":", 1)
                replicas[int(cid)] = [int(d) for d in dpus.split(",") if d.strip() != ""]
        nclusters = int(header["nclusters"])
        rep_list = [replicas[c] for c in range(nclusters)]
        ndpu = int(header["ndpu"])
        workload, vectors = recompute_ledgers(rep_list, stats, ndpu)
        return cls(
            replicas=rep_list,
            ndpu=ndpu,
            max_dpu_size=int(header["max_dpu_size"]),
            mean_workload=float(header["mean_workload"]),
            final_threshold=float(header["final_threshold"]),
            workload=workload,
            vectors=vectors,
        )


def recompute_ledgers(replicas, stats: ClusterStats, ndpu: int):
    """Rebuild the W and S ledgers implied by a replica map."""
    workload = np.zeros(ndpu, dtype=np.float64)
    vectors = np.zeros(ndpu, dtype=np.int64)
    w = stats.workloads
    for cid, dpus in enumerate(replicas):
        if not dpus:
            continue
        share = w[cid] / len(dpus)
        for d in dpus:
            workload[d] += share
            vectors[d] += int(stats.sizes[cid])
    return workload, vectors


class _Attempt:
    def __init__(self, nclusters, ndpu):
        self.replicas = [[] for _ in range(nclusters)]
        self.workload = np.zeros(ndpu, dtype=np.float64)
        self.vectors = np.zeros(ndpu, dtype=np.int64)
        self.cursor = 0
        self.allocated = np.zeros(nclusters, dtype=bool)
        self.workload_blocked = False


def _neighbor_lists(stats: ClusterStats, nprobe: int):
    if stats.centroids is None or nprobe < 1 or stats.nclusters < 2:
        return None
    d = pairwise_sqdist(stats.centroids, stats.centroids)
    np.fill_diagonal(d, np.inf)
    # stable argsort keeps the lower cluster id first on distance ties
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, : min(nprobe, stats.nclusters - 1)]


def _greedy_pass(stats, order, neighbors, ndpu, max_dpu_size, mean_w, threshold):
    sizes, w = stats.sizes, stats.workloads
    att = _Attempt(stats.nclusters, ndpu)
    bound = mean_w * threshold * (1.0 + _REL_EPS)
    for cid in order:
        if att.allocated[cid]:
            continue
        att.allocated[cid] = True
        ncopies = 1 if mean_w <= 0 else max(1, math.ceil(w[cid] / mean_w - _REL_EPS))
        share = w[cid] / ncopies
        for _ in range(ncopies):
            placed = False
            workload_reject = False
            for probe in range(ndpu):
                d = (att.cursor + probe) % ndpu
                if d in att.replicas[cid]:
                    continue
                if att.vectors[d] + sizes[cid] > max_dpu_size:
                    continue
                if mean_w > 0 and att.workload[d] + share > bound:
                    workload_reject = True
                    continue
                att.replicas[cid].append(d)
                att.workload[d] += share
                att.vectors[d] += int(sizes[cid])
                att.cursor = (d + 1) % ndpu
                placed = True
                break
            if not placed:
                # a bigger threshold only helps if some DPU was rejected for
                # workload alone during this failing scan
                att.workload_blocked = workload_reject
                return att, False
        if neighbors is None:
            continue
        last = att.replicas[cid][-1]
        for nb in neighbors[cid]:
            if att.workload[last] >= mean_w:
                break
            if att.allocated[nb]:
                continue
            if (
                att.workload[last] + w[nb] < mean_w
                and att.vectors[last] + sizes[nb] <= max_dpu_size
            ):
                att.allocated[nb] = True
                att.replicas[nb].append(int(last))
                att.workload[last] += w[nb]
                att.vectors[last] += int(sizes[nb])
    return att, True


def plan_placement(
    stats: ClusterStats,
    ndpu: int,
    max_dpu_size: int,
    nprobe: int = 0,
) -> PlacementMap:
    """Distribute clusters (with replication) across `ndpu` DPUs.

    Raises InfeasiblePlacement when no threshold can satisfy the capacity or
    replica-distinctness constraints.
    """
    if ndpu < 1:
        raise InvalidArgument(f"ndpu must be >= 1, got {ndpu}")
    total = int(stats.sizes.sum())
    if total > ndpu * max_dpu_size:
        raise InfeasiblePlacement(
            f"vector capacity: {total} vectors exceed ndpu*max_dpu_size="
            f"{ndpu * max_dpu_size}"
        )
    if int(stats.sizes.max(initial=0)) > max_dpu_size:
        raise InfeasiblePlacement(
            f"vector capacity: largest cluster ({int(stats.sizes.max())}) exceeds "
            f"max_dpu_size={max_dpu_size}"
        )
    w = stats.workloads
    mean_w = float(w.sum()) / ndpu
    order = sorted(range(stats.nclusters), key=lambda i: (-w[i], i))
    neighbors = _neighbor_lists(stats, nprobe)
    step = 0
    while True:
        threshold = 1.0 + THRESHOLD_RATE * step
        att, ok = _greedy_pass(
            stats, order, neighbors, ndpu, max_dpu_size, mean_w, threshold
        )
        if ok:
            return PlacementMap(
                replicas=att.replicas,
                ndpu=ndpu,
                max_dpu_size=max_dpu_size,
                mean_workload=mean_w,
                final_threshold=threshold,
                workload=att.workload,
                vectors=att.vectors,
            )
        if not att.workload_blocked:
            raise InfeasiblePlacement(
                "replica capacity: every DPU fails the vector-capacity or "
                "replica-distinctness constraint; raising the workload "
                "threshold cannot help"
            )
        step += 1
        if step > 100000:
            raise InfeasiblePlacement("threshold escalation did not converge")


def balance_metrics(plan: PlacementMap, stats: ClusterStats | None = None) -> dict:
    """Balance statistics of a plan; recomputable from the replica map alone."""
    if stats is not None:
        workload, vectors = recompute_ledgers(plan.replicas, stats, plan.ndpu)
    else:
        workload, vectors = plan.workload, plan.vectors
    wmean = workload.mean()
    smean = vectors.mean()
    return {
        "cv_workload": float(workload.std() / wmean) if wmean > 0 else 0.0,
        "max_over_mean_workload": float(workload.max() / wmean) if wmean > 0 else 1.0,
        "max_over_mean_vectors": float(vectors.max() / smean) if smean > 0 else 1.0,
        "replica_histogram": plan.replica_histogram(),
    }
