"""Online assignment of filtered (query, cluster) pairs to replica DPUs.

Pass 1 pins every pair whose cluster has a single replica. Pass 2 walks the
remaining clusters in descending size order and sends each pending pair to
the replica DPU with the least scheduled workload, updating the ledger after
every assignment. Workload increments use the cluster size; frequencies play
no role online.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, MissingReplica
from .placement import ClusterStats, PlacementMap


@dataclass
class QueryBatch:
    """Filtered cluster ids per query; every list has exactly nprobe entries."""

    filtered: list  # per query: (nprobe,) int array
    nprobe: int

    def __post_init__(self):
        for i, f in enumerate(self.filtered):
            if len(f) != self.nprobe:
                raise InvalidArgument(
                    f"query {i} has {len(f)} filtered clusters, expected {self.nprobe}"
                )

    @property
    def nqueries(self) -> int:
        return len(self.filtered)

    @property
    def total_pairs(self) -> int:
        return self.nqueries * self.nprobe


@dataclass
class Assignment:
    """Per-DPU (query_id, cluster_id) pairs plus the scheduled workload ledger."""

    ndpu: int
    pairs: list  # per dpu: [(query_id, cluster_id), ...] in emission order
    workload: np.ndarray  # (ndpu,) int64, sum of cluster sizes
    pairs_processed: int = 0

    @property
    def total_pairs(self) -> int:
        return sum(len(p) for p in self.pairs)

    def to_csv(self) -> str:
        lines = ["dpu_id,query_id,cluster_id"]
        for dpu, plist in enumerate(self.pairs):
            for q, c in plist:
                lines.append(f"{dpu},{q},{c}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, ndpu: int, stats: ClusterStats) -> "Assignment":
        pairs = [[] for _ in range(ndpu)]
        workload = np.zeros(ndpu, dtype=np.int64)
        rows = text.strip().splitlines()
        for line in rows[1:]:
            d, q, c = (int(x) for x in line.split(","))
            pairs[d].append((q, c))
            workload[d] += int(stats.sizes[c])
        return cls(ndpu=ndpu, pairs=pairs, workload=workload)


def schedule_batch(batch: QueryBatch, plan: PlacementMap, stats: ClusterStats) -> Assignment:
    """Assign every filtered (query, cluster) pair to a replica DPU."""
    sizes = stats.sizes
    workload = np.zeros(plan.ndpu, dtype=np.int64)
    assigned = [[] for _ in range(plan.ndpu)]
    pending: dict = {}
    processed = 0
    for qid, clusters in enumerate(batch.filtered):
        for cid in clusters:
            cid = int(cid)
            if cid < 0 or cid >= plan.nclusters or not plan.replicas[cid]:
                raise MissingReplica(f"cluster {cid} has no replica in the plan")
            processed += 1
            replicas = plan.replicas[cid]
            if len(replicas) == 1:
                d = replicas[0]
                assigned[d].append((qid, cid))
                workload[d] += int(sizes[cid])
            else:
                pending.setdefault(cid, []).append(qid)
    for cid in sorted(pending, key=lambda c: (-int(sizes[c]), c)):
        replicas = plan.replicas[cid]
        s = int(sizes[cid])
        for qid in pending[cid]:
            best = min(replicas, key=lambda d: (workload[d] + s, d))
            assigned[best].append((qid, cid))
            workload[best] += s
            processed += 1
    return Assignment(
        ndpu=plan.ndpu, pairs=assigned, workload=workload, pairs_processed=processed
    )


def schedule_metrics(assignment: Assignment) -> dict:
    """Coefficient of variation and makespan proxy of the scheduled workload."""
    w = assignment.workload.astype(np.float64)
    mean = w.mean() if w.size else 0.0
    return {
        "cv_workload": float(w.std() / mean) if mean > 0 else 0.0,
        "max_workload": int(assignment.workload.max(initial=0)),
    }


def workload_from_pairs(assignment: Assignment, stats: ClusterStats) -> np.ndarray:
    """Recompute the ledger from the emitted pairs (test oracle)."""
    w = np.zeros(assignment.ndpu, dtype=np.int64)
    for dpu, plist in enumerate(assignment.pairs):
        for _, cid in plist:
            w[dpu] += int(stats.sizes[cid])
    return w
