"""Bounded heaps for thread-local top-k, pruned per-DPU merging, and the
host-side aggregation across DPUs.

Scan-time heaps evict by strict distance comparison (equal distances keep the
incumbent), which matches a stable sort of the stream by distance. Merge and
aggregation order entries by (distance, point_id), so merged results are
set-deterministic even under distance ties.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

ENTRY_BYTES = 8  # 32-bit fixed-point distance + 32-bit id


class BoundedHeap:
    """Priority queue bounded at k entries of (distance, point_id).

    In "max" mode the root is the largest entry and insertion keeps the k
    smallest seen so far; tie_by selects the secondary ordering: "arrival"
    for scan-time heaps, "id" for merge heaps. `to_min()` converts the heap
    in place to min mode ordered by (distance, id) for pruned merging.
    """

    def __init__(self, k: int, mode: str = "max", tie_by: str = "arrival"):
        if k < 1:
            raise ValueError(f"heap capacity must be >= 1, got {k}")
        if mode not in ("max", "min"):
            raise ValueError(f"unknown mode {mode!r}")
        self.k = k
        self.mode = mode
        self.tie_by = tie_by
        self._seq = 0
        self._heap: list = []  # max: (-d, -tb, d, id); min: (d, tb, id)

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def is_full(self) -> bool:
        return len(self._heap) >= self.k

    def insert(self, dist: int, pid: int) -> bool:
        """Insert a candidate into a max-mode heap; returns True if kept.

        When full, the candidate replaces the root only if it orders strictly
        below it; with arrival ties the incumbent always wins an equal
        distance.
        """
        if self.mode != "max":
            raise ValueError("insert requires max mode")
        tb = self._seq if self.tie_by == "arrival" else pid
        self._seq += 1
        item = (-dist, -tb, dist, pid)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, item)
            return True
        if item > self._heap[0]:  # negated keys: larger tuple = smaller entry
            heapq.heapreplace(self._heap, item)
            return True
        return False

    def root(self):
        """(distance, point_id) at the root."""
        if not self._heap:
            raise IndexError("root of an empty heap")
        if self.mode == "max":
            return self._heap[0][2], self._heap[0][3]
        return self._heap[0][0], self._heap[0][2]

    def root_key(self):
        """(distance, id) ordering key of the root entry."""
        d, pid = self.root()
        return (d, pid)

    def pop_min(self):
        """Pop the smallest (distance, id) entry; min mode only."""
        if self.mode != "min":
            raise ValueError("pop_min requires min mode")
        d, _, pid = heapq.heappop(self._heap)
        return d, pid

    def to_min(self) -> "BoundedHeap":
        """Re-key in place to a min-heap ordered by (distance, id)."""
        entries = self.entries()
        self._heap = [(d, pid, pid) for d, pid in entries]
        heapq.heapify(self._heap)
        self.mode = "min"
        self.tie_by = "id"
        return self

    def entries(self):
        """Unordered snapshot of (distance, point_id) pairs."""
        if self.mode == "max":
            return [(item[2], item[3]) for item in self._heap]
        return [(item[0], item[2]) for item in self._heap]

    def sorted_entries(self):
        return sorted(self.entries())

    def copy(self) -> "BoundedHeap":
        h = BoundedHeap(self.k, self.mode, self.tie_by)
        h._heap = list(self._heap)
        h._seq = self._seq
        return h


def thread_insert(heap: BoundedHeap, candidate) -> BoundedHeap:
    """Stream one (distance, id) candidate into a thread-local max heap."""
    heap.insert(int(candidate[0]), int(candidate[1]))
    return heap


@dataclass
class MergeStats:
    inserts_attempted: int = 0
    pruned_entries: int = 0
    heaps_pruned: int = 0


def pruned_merge(heaps, k: int):
    """Merge thread-local heaps into one per-DPU top-k max-heap.

    Each local heap is viewed in min order; its root is inserted into the
    global k-bounded heap until the local minimum can no longer beat the
    global maximum, at which point the rest of that heap is pruned. The
    result always equals the exact k smallest (distance, id) of the union.
    Inputs are not mutated. Returns (global_heap, MergeStats).
    """
    out = BoundedHeap(k, mode="max", tie_by="id")
    stats = MergeStats()
    for heap in heaps:
        local = [(d, pid, pid) for d, pid in heap.entries()]
        heapq.heapify(local)
        while local:
            if out.is_full and (local[0][0], local[0][1]) >= out.root_key():
                stats.pruned_entries += len(local)
                stats.heaps_pruned += 1
                break
            d, pid, _ = heapq.heappop(local)
            out.insert(d, pid)
            stats.inserts_attempted += 1
    return out, stats


def host_aggregate(per_dpu, k: int):
    """Exact k smallest ids across per-DPU (distance, id) lists.

    Ties break toward the lower point id. Lists shorter than k are fine; the
    union is truncated to at most k results.
    """
    merged = sorted((int(d), int(pid)) for entries in per_dpu for d, pid in entries)
    return [pid for _, pid in merged[:k]]


def result_bytes(nentries: int) -> int:
    """Bytes returned to the host for one (DPU, query) result list."""
    return ENTRY_BYTES * nentries
