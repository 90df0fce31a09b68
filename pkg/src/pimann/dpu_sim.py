"""Deterministic cost-model simulation of query execution on DPUs.

This is a calibrated analytic model, not a cycle-accurate ISA simulator. It
accounts three things exactly: WRAM budgets per stage, MRAM transfer counts
and bytes under the 8..2048-byte multiple-of-8 rule, and flat-LUT lookup
counts (the sum of re-encoded lengths). Cycle costs derive from instruction
slots issued at min(threads, 11)/11 per cycle, mirroring the 14-stage
pipeline's dispatch rule, with MRAM read latency overlapped against compute
(the slower of the two binds each stage). Default slot weights are calibrated
so that mean code-length reductions of 0.25/0.5/0.75 shrink the distance
stage by about 18/36/54 percent.

Stages per (query, cluster): lut_build (codebook streamed from MRAM, entries
computed by all threads, all four barrier costs charged here), partial_sums
(cache slots filled from the finished LUT), distance_calc (encoded points
streamed in buffer_vectors-sized transfers, looked up, and offered to the
thread-local heaps), and per query a final topk merge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels, topk_select
from .cooccur import ExtendedLut, ReencodedCluster
from .core_index import Lut
from .errors import InvalidArgument, InvalidTransfer, WramOverflow

STAGES = ("lut_build", "partial_sums", "distance_calc", "topk")


@dataclass(frozen=True)
class DpuModel:
    """Capacities, transfer rules, latency curve, and cost weights of one DPU."""

    wram_bytes: int = 65536
    mram_bytes: int = 64 * 2**20
    max_threads: int = 24
    pipeline_depth: int = 14
    dispatch_interval: int = 11  # cycles between same-thread instructions
    clock_hz: float = 350e6
    # MRAM read latency curve
    base_cycles: float = 77.0
    small_slope: float = 0.5
    per_8byte_cycles: float = 4.0
    plateau_bytes: int = 256
    min_transfer: int = 8
    max_transfer: int = 2048
    transfer_align: int = 8
    # instruction-slot weights (calibrated, see module docstring)
    mul_penalty: float = 8.0
    lookup_slots: float = 9.0
    point_overhead_slots: float = 56.0
    dma_setup_slots: float = 48.0
    partial_member_slots: float = 2.0
    partial_store_slots: float = 1.0
    merge_op_cycles: float = 16.0
    barrier_cycles: float = 64.0
    # host interaction
    launch_overhead_cycles: float = 1000.0
    host_bytes_per_cycle: float = 32.0

    def with_overrides(self, **kwargs) -> "DpuModel":
        return replace(self, **kwargs)


def mram_read_latency(nbytes: int, model: DpuModel) -> float:
    """Cycles for one MRAM->WRAM transfer of `nbytes`.

    Flat-ish below the plateau, near-linear beyond it; monotone
    non-decreasing in the transfer size.
    """
    if nbytes < model.min_transfer or nbytes > model.max_transfer:
        raise InvalidTransfer(
            f"transfer of {nbytes} bytes outside "
            f"[{model.min_transfer}, {model.max_transfer}]"
        )
    if nbytes % model.transfer_align != 0:
        raise InvalidTransfer(
            f"transfer of {nbytes} bytes not a multiple of {model.transfer_align}"
        )
    below = min(nbytes, model.plateau_bytes)
    above = max(0, nbytes - model.plateau_bytes)
    return model.base_cycles + model.small_slope * below / 8 + model.per_8byte_cycles * above / 8


def _align_up(n: int, align: int) -> int:
    return ((n + align - 1) // align) * align


@dataclass(frozen=True)
class WramPlan:
    """Stage-tagged WRAM allocations for one cluster-processing pipeline.

    The codebook region is reusable once the LUT is built, which is why the
    distance stage can afford per-thread read buffers.
    """

    d: int
    m: int
    kstar: int
    k: int
    threads: int
    buffer_vectors: int
    buffer_bytes: int
    nslots: int
    stages: dict
    codebook_reusable: bool = True

    def stage_bytes(self, stage: str) -> int:
        return sum(size for _, size in self.stages[stage])

    @property
    def codebook_bytes(self) -> int:
        return dict(self.stages["lut_build"])["codebook"]

    @property
    def lut_bytes(self) -> int:
        return dict(self.stages["lut_build"])["lut"]

    @property
    def partial_sum_bytes(self) -> int:
        return dict(self.stages["lut_build"])["partial_sums"]

    @property
    def dsub(self) -> int:
        return self.d // self.m


def plan_wram(
    d: int,
    m: int,
    kstar: int,
    k: int,
    threads: int,
    buffer_vectors: int,
    model: DpuModel | None = None,
    nslots: int = 256,
    bytes_per_vector: int | None = None,
) -> WramPlan:
    """Lay out the per-stage WRAM allocations and validate the budget.

    Raises WramOverflow naming the first stage whose allocations exceed the
    scratchpad, and InvalidTransfer when the read buffer violates the MRAM
    transfer rules.
    """
    model = model or DpuModel()
    for name, val in (("d", d), ("m", m), ("kstar", kstar), ("k", k),
                      ("threads", threads), ("buffer_vectors", buffer_vectors)):
        if val < 1:
            raise InvalidArgument(f"{name} must be positive, got {val}")
    if threads > model.max_threads:
        raise InvalidArgument(f"threads={threads} exceeds max_threads={model.max_threads}")
    if d % m != 0:
        raise InvalidArgument(f"d={d} not divisible by m={m}")
    bytes_per_vector = m if bytes_per_vector is None else bytes_per_vector
    buffer_bytes = _align_up(max(buffer_vectors * bytes_per_vector, model.min_transfer),
                             model.transfer_align)
    if buffer_bytes > model.max_transfer:
        raise InvalidTransfer(
            f"read buffer of {buffer_bytes} bytes exceeds the "
            f"{model.max_transfer}-byte transfer limit"
        )
    codebook = d * kstar
    lut = m * kstar * 2
    partial = max(lut, nslots * 4)  # slot values are 32-bit
    heaps = threads * k * topk_select.ENTRY_BYTES
    stages = {
        "lut_build": [("codebook", codebook), ("lut", lut), ("partial_sums", partial)],
        "distance_calc": [
            ("lut", lut),
            ("partial_sums", partial),
            ("read_buffers", threads * buffer_bytes),
            ("heaps", heaps),
        ],
        "topk": [
            ("lut", lut),
            ("partial_sums", partial),
            ("heaps", heaps),
            ("global_heap", k * topk_select.ENTRY_BYTES),
        ],
    }
    for stage, allocs in stages.items():
        total = sum(size for _, size in allocs)
        if total > model.wram_bytes:
            raise WramOverflow(
                f"stage {stage}: {total} bytes exceed the {model.wram_bytes}-byte WRAM"
            )
    return WramPlan(
        d=d,
        m=m,
        kstar=kstar,
        k=k,
        threads=threads,
        buffer_vectors=buffer_vectors,
        buffer_bytes=buffer_bytes,
        nslots=nslots,
        stages=stages,
    )


@dataclass
class StageCost:
    cycles: float = 0.0
    mram_reads: int = 0
    mram_bytes: int = 0
    wram_lookups: int = 0

    def add(self, other: "StageCost") -> None:
        self.cycles += other.cycles
        self.mram_reads += other.mram_reads
        self.mram_bytes += other.mram_bytes
        self.wram_lookups += other.wram_lookups


@dataclass
class ClusterShard:
    """One cluster's scannable payload: classic codes or a re-encoded stream."""

    ids: np.ndarray  # (P,) int64 point ids
    codes: np.ndarray | None = None  # (P, M) uint8 when classic
    reencoded: ReencodedCluster | None = None

    @classmethod
    def from_codes(cls, ids, codes) -> "ClusterShard":
        return cls(ids=np.asarray(ids, dtype=np.int64),
                   codes=np.ascontiguousarray(codes, dtype=np.uint8))

    @classmethod
    def from_reencoded(cls, ids, reenc: ReencodedCluster) -> "ClusterShard":
        return cls(ids=np.asarray(ids, dtype=np.int64), reencoded=reenc)

    @property
    def is_reencoded(self) -> bool:
        return self.reencoded is not None

    @property
    def npoints(self) -> int:
        return self.ids.shape[0]

    def lookup_count(self, m: int) -> int:
        if self.is_reencoded:
            return int(self.reencoded.lens.sum())
        return self.npoints * m

    def payload_bytes(self, m: int) -> int:
        if self.is_reencoded:
            return self.reencoded.payload_bytes()
        return self.npoints * m


class _HeapState:
    """Raw per-thread heap arrays shared with the scan kernels."""

    def __init__(self, k: int):
        self.dist = np.zeros(k, dtype=np.uint32)
        self.seq = np.zeros(k, dtype=np.int64)
        self.ids = np.zeros(k, dtype=np.int64)
        self.size = 0
        self.next_seq = 0

    def update(self, dists: np.ndarray, ids: np.ndarray, k: int) -> int:
        self.size, self.next_seq, inserted = kernels.topk_update(
            self.dist, self.seq, self.ids, self.size, self.next_seq,
            np.ascontiguousarray(dists, dtype=np.uint32),
            np.ascontiguousarray(ids, dtype=np.int64), k,
        )
        return inserted

    def to_bounded_heap(self, k: int) -> topk_select.BoundedHeap:
        heap = topk_select.BoundedHeap(k, mode="max", tie_by="arrival")
        # replay in seq order so arrival ties match the scan exactly
        order = np.argsort(self.seq[: self.size], kind="stable")
        for i in order:
            heap.insert(int(self.dist[i]), int(self.ids[i]))
        return heap


def _issue_cycles(slots: float, threads: int, model: DpuModel) -> float:
    rate = min(threads, model.dispatch_interval) / model.dispatch_interval
    return slots / rate


def _codebook_read_cost(plan: WramPlan, model: DpuModel):
    total = plan.d * plan.kstar
    full, rem = divmod(total, model.max_transfer)
    cycles = full * mram_read_latency(model.max_transfer, model)
    nreads = full
    nbytes = full * model.max_transfer
    if rem:
        chunk = _align_up(max(rem, model.min_transfer), model.transfer_align)
        cycles += mram_read_latency(chunk, model)
        nreads += 1
        nbytes += chunk
    return cycles, nreads, nbytes


def simulate_cluster(
    shard: ClusterShard,
    xlut,
    threads: int,
    model: DpuModel,
    plan: WramPlan,
    k: int,
    heaps: list | None = None,
):
    """Process one cluster for one query: exact scan plus modeled cost.

    `xlut` is a Lut for classic shards or an ExtendedLut for re-encoded
    shards. `heaps` carries the thread-local heap states across the clusters
    of one query; pass None to start fresh. Returns (stage_costs, heaps).
    """
    if threads < 1 or threads > model.max_threads:
        raise InvalidArgument(f"threads must be in [1, {model.max_threads}]")
    for stage in plan.stages:
        if plan.stage_bytes(stage) > model.wram_bytes:
            raise WramOverflow(f"stage {stage} exceeds WRAM")
    if heaps is None:
        heaps = [_HeapState(k) for _ in range(threads)]
    costs = {stage: StageCost() for stage in STAGES}

    # lut_build: threads split the entries; all four barriers charged here
    entry_slots = plan.dsub * (model.mul_penalty + 2.0)
    lut_slots = plan.m * plan.kstar * entry_slots
    read_cycles, nreads, nbytes = _codebook_read_cost(plan, model)
    costs["lut_build"] = StageCost(
        cycles=max(_issue_cycles(lut_slots, threads, model), read_cycles)
        + 4 * model.barrier_cycles,
        mram_reads=nreads,
        mram_bytes=nbytes,
    )

    # partial_sums: only re-encoded clusters fill cache slots
    if shard.is_reencoded:
        if not isinstance(xlut, ExtendedLut):
            raise InvalidArgument("re-encoded shard requires an ExtendedLut")
        members = int(xlut.member_counts.sum())
        ps_slots = members * model.partial_member_slots + xlut.nslots * model.partial_store_slots
        costs["partial_sums"] = StageCost(
            cycles=_issue_cycles(ps_slots, threads, model),
            wram_lookups=members,
        )

    # distance_calc: stream points, look up, feed the heaps
    p = shard.npoints
    if p:
        if shard.is_reencoded:
            table = xlut.flat()
            if int(shard.reencoded.addrs.max(initial=0)) >= table.shape[0]:
                raise InvalidArgument("re-encoded addresses outside the extended LUT")
            dists = kernels.adc_scan_flat(
                shard.reencoded.addrs, shard.reencoded.offsets, table
            )
        else:
            lut = xlut.lut if isinstance(xlut, ExtendedLut) else xlut
            dists = kernels.adc_scan(shard.codes, lut.entries)
        lookups = shard.lookup_count(plan.m)
        payload = shard.payload_bytes(plan.m)
        nreads = math.ceil(payload / plan.buffer_bytes)
        compute = (
            p * model.point_overhead_slots
            + lookups * model.lookup_slots
            + nreads * model.dma_setup_slots
        )
        stream_cycles = nreads * mram_read_latency(plan.buffer_bytes, model)
        costs["distance_calc"] = StageCost(
            cycles=max(_issue_cycles(compute, threads, model), stream_cycles),
            mram_reads=nreads,
            mram_bytes=nreads * plan.buffer_bytes,
            wram_lookups=lookups,
        )
        # buffers go to threads round-robin; each thread scans its own stream
        buffer_of = np.arange(p) // plan.buffer_vectors
        thread_of = buffer_of % threads
        for t in range(threads):
            sel = np.nonzero(thread_of == t)[0]
            if sel.size:
                heaps[t].update(dists[sel], shard.ids[sel], k)
    return costs, heaps


def merge_heaps(heaps: list, k: int, model: DpuModel):
    """Pruned merge of the thread heaps; returns (entries, StageCost, stats)."""
    bounded = [h.to_bounded_heap(k) for h in heaps]
    merged, stats = topk_select.pruned_merge(bounded, k)
    cost = StageCost(cycles=stats.inserts_attempted * model.merge_op_cycles)
    return merged.sorted_entries(), cost, stats


def expected_lookups_per_query(n: float, nclusters: float, nprobe: float, m: float) -> float:
    """Analytic flat-LUT lookups per query over balanced classic clusters."""
    return (n / nclusters) * nprobe * m


@dataclass
class CostReport:
    """Simulated costs of one batch: per-DPU stage table plus host transfers."""

    per_dpu: list  # per dpu: {stage: StageCost}
    host_cycles: float
    host_bytes_in: int
    host_bytes_out: int
    makespan_cycles: float
    qps: float
    nqueries: int
    pruned_entries: int = 0

    @property
    def ndpu(self) -> int:
        return len(self.per_dpu)

    def dpu_cycles(self) -> np.ndarray:
        return np.array(
            [sum(c.cycles for c in stages.values()) for stages in self.per_dpu]
        )

    def stage_totals(self) -> dict:
        totals = {stage: StageCost() for stage in STAGES}
        for stages in self.per_dpu:
            for stage, cost in stages.items():
                totals[stage].add(cost)
        return totals

    def total_lookups(self) -> int:
        return sum(c.wram_lookups for c in self.stage_totals().values())

    def breakdown_fractions(self) -> dict:
        totals = self.stage_totals()
        grand = sum(c.cycles for c in totals.values()) + self.host_cycles
        if grand <= 0:
            return {stage: 0.0 for stage in (*STAGES, "host")}
        out = {stage: totals[stage].cycles / grand for stage in STAGES}
        out["host"] = self.host_cycles / grand
        return out

    def to_csv(self) -> str:
        lines = ["dpu_id,stage,cycles,mram_reads,mram_bytes,wram_lookups"]
        for dpu, stages in enumerate(self.per_dpu):
            for stage in STAGES:
                c = stages[stage]
                lines.append(
                    f"{dpu},{stage},{c.cycles!r},{c.mram_reads},{c.mram_bytes},{c.wram_lookups}"
                )
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        cycles = self.dpu_cycles()
        totals = self.stage_totals()
        return {
            "nqueries": self.nqueries,
            "ndpu": self.ndpu,
            "makespan_cycles": self.makespan_cycles,
            "qps": self.qps,
            "host_cycles": self.host_cycles,
            "host_bytes_in": self.host_bytes_in,
            "host_bytes_out": self.host_bytes_out,
            "pruned_entries": self.pruned_entries,
            "max_dpu_cycles": float(cycles.max(initial=0.0)),
            "mean_dpu_cycles": float(cycles.mean()) if cycles.size else 0.0,
            "stage_cycles": {s: totals[s].cycles for s in STAGES},
            "stage_lookups": {s: totals[s].wram_lookups for s in STAGES},
            "breakdown": self.breakdown_fractions(),
        }


def simulate_batch(
    assignment,
    shards: dict,
    lut_provider,
    model: DpuModel,
    plan: WramPlan,
    k: int,
    nqueries: int,
):
    """Simulate one scheduled batch and collect per-(DPU, query) top-k.

    `assignment` is a scheduler.Assignment; `shards` maps cluster_id to
    ClusterShard; `lut_provider(query_id, cluster_id)` returns the Lut or
    ExtendedLut for that pair. Each DPU processes its queries in ascending
    id and the clusters of a query in ascending id. Returns
    (CostReport, results) with results[(dpu, query)] = [(dist, id), ...]
    ascending.
    """
    per_dpu = []
    results = {}
    host_in = 0
    host_out = 0
    pruned_total = 0
    for dpu in range(assignment.ndpu):
        stage_acc = {stage: StageCost() for stage in STAGES}
        by_query: dict = {}
        for qid, cid in assignment.pairs[dpu]:
            by_query.setdefault(qid, []).append(cid)
        for qid in sorted(by_query):
            heaps = None
            for cid in sorted(by_query[qid]):
                shard = shards[cid]
                costs, heaps = simulate_cluster(
                    shard, lut_provider(qid, cid), plan.threads, model, plan, k, heaps
                )
                for stage, cost in costs.items():
                    stage_acc[stage].add(cost)
                host_in += plan.d * 4  # one q - c vector per pair
            entries, merge_cost, stats = merge_heaps(heaps, k, model)
            stage_acc["topk"].add(merge_cost)
            pruned_total += stats.pruned_entries
            results[(dpu, qid)] = entries
            host_out += topk_select.result_bytes(len(entries))
        per_dpu.append(stage_acc)
    host_cycles = (
        model.launch_overhead_cycles + (host_in + host_out) / model.host_bytes_per_cycle
    )
    dpu_total = max(
        (sum(c.cycles for c in stages.values()) for stages in per_dpu), default=0.0
    )
    makespan = dpu_total + host_cycles
    qps = nqueries * model.clock_hz / makespan if makespan > 0 else 0.0
    report = CostReport(
        per_dpu=per_dpu,
        host_cycles=host_cycles,
        host_bytes_in=host_in,
        host_bytes_out=host_out,
        makespan_cycles=makespan,
        qps=qps,
        nqueries=nqueries,
        pruned_entries=pruned_total,
    )
    return report, results


def _single_pair_qps(shard, xlut, d, k, threads, buffer_vectors, model, nslots):
    plan = plan_wram(
        d=d, m=_shard_m(shard, xlut), kstar=_xlut_kstar(xlut), k=k,
        threads=threads, buffer_vectors=buffer_vectors, model=model, nslots=nslots,
    )
    costs, heaps = simulate_cluster(shard, xlut, threads, model, plan, k)
    _, merge_cost, _ = merge_heaps(heaps, k, model)
    cycles = sum(c.cycles for c in costs.values()) + merge_cost.cycles
    host = model.launch_overhead_cycles + (
        d * 4 + topk_select.result_bytes(min(k, shard.npoints))
    ) / model.host_bytes_per_cycle
    return model.clock_hz / (cycles + host)


def _shard_m(shard, xlut):
    if shard.codes is not None:
        return shard.codes.shape[1]
    lut = xlut.lut if isinstance(xlut, ExtendedLut) else xlut
    return lut.m


def _xlut_kstar(xlut):
    lut = xlut.lut if isinstance(xlut, ExtendedLut) else xlut
    return lut.kstar


def thread_scaling_curve(
    shard: ClusterShard,
    xlut,
    d: int,
    k: int,
    buffer_vectors: int,
    model: DpuModel,
    threads_list=None,
    nslots: int = 256,
):
    """Simulated QPS of one fixed workload for each thread count."""
    threads_list = list(threads_list or range(1, model.max_threads + 1))
    return [
        (t, _single_pair_qps(shard, xlut, d, k, t, buffer_vectors, model, nslots))
        for t in threads_list
    ]


def read_size_curve(
    shard: ClusterShard,
    xlut,
    d: int,
    k: int,
    threads: int,
    model: DpuModel,
    buffer_vectors_list,
    nslots: int = 256,
):
    """Simulated QPS of one fixed workload for each MRAM read size."""
    return [
        (bv, _single_pair_qps(shard, xlut, d, k, threads, bv, model, nslots))
        for bv in buffer_vectors_list
    ]
