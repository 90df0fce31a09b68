"""End-to-end orchestration: train, re-encode, place, schedule, simulate,
aggregate, and report, with every intermediate persisted so each stage can be
re-run from disk.

Artifact layout under the configured output directory:

    resolved.cfg                 exact configuration of the run
    centroids.fvecs              coarse quantizer
    codebooks.fvecs              PQ tables, (m*kstar, dsub) rows
    codes.bvecs                  PQ codes in original point order
    assignments.ivecs            point -> cluster ids
    reencode_meta.csv            per-cluster length stats and adoption
    reencoded/cluster_<id>.bin   re-encoded clusters that were adopted
    placement.txt                cluster -> DPU replica map
    batches/batch_<i>.assignment.csv
    batches/batch_<i>.cost.csv
    batches/batch_<i>.summary.json
    batches/batch_<i>.results.ivecs
    report.csv, report.txt

A fixed (config, seed) pair reproduces every artifact byte for byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cooccur, core_index, dpu_sim, placement, scheduler, topk_select, vecio
from .config import RunConfig, save as save_config
from .errors import InvalidArgument
from .placement import ClusterStats, PlacementMap


def filter_batch(queries: np.ndarray, cq: core_index.CoarseQuantizer, nprobe: int) -> np.ndarray:
    """Filtered cluster ids for every query, ascending by centroid distance."""
    d2 = core_index.pairwise_sqdist(queries, cq.centroids)
    order = np.argsort(d2, axis=1, kind="stable")  # stable = lowest id on ties
    return order[:, :nprobe].astype(np.int64)


def split_batches(n: int, batch_size: int):
    return [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


def auto_max_dpu_size(sizes: np.ndarray, ndpu: int) -> int:
    """Default per-DPU vector capacity: generous but not unbounded."""
    fair = int(np.ceil(4 * sizes.sum() / ndpu))
    return max(fair, int(sizes.max(initial=1)))


class LutProvider:
    """Builds per-(query, cluster) LUTs with one fixed-point scale per query.

    simulate_batch touches all pairs of one query consecutively, so only the
    current query's tables stay cached.
    """

    def __init__(self, queries, cq, codebook, filtered, adopted):
        self.queries = queries
        self.cq = cq
        self.codebook = codebook
        self.filtered = filtered  # (nq, nprobe) cluster ids
        self.adopted = adopted  # cluster id -> CombinationSet
        self._qid = -1
        self._cache = {}

    def _build_query(self, qid: int) -> None:
        q = self.queries[qid]
        clusters = self.filtered[qid]
        qcs = q[None, :] - self.cq.centroids[clusters]
        reals = [core_index.lut_real_entries(qcs[i], self.codebook) for i in range(len(clusters))]
        top = max((float(r.max()) for r in reals), default=0.0)
        scale = core_index.LUT_MAX / top if top > 0.0 else 1.0
        self._cache = {}
        for i, cid in enumerate(clusters):
            entries = np.minimum(np.rint(reals[i] * scale), core_index.LUT_MAX).astype(np.uint16)
            lut = core_index.Lut(entries=entries, scale=scale)
            cid = int(cid)
            cset = self.adopted.get(cid)
            self._cache[cid] = (
                cooccur.compute_partial_sums(lut, cset) if cset is not None else lut
            )
        self._qid = qid

    def __call__(self, qid: int, cid: int):
        if qid != self._qid:
            self._build_query(qid)
        return self._cache[int(cid)]


@dataclass
class TrainedIndex:
    cq: core_index.CoarseQuantizer
    codebook: core_index.PQCodebook
    enc: core_index.EncodedDataset


@dataclass
class RunReport:
    """Headline metrics of one pipeline run; everything is recomputable from
    the persisted intermediates."""

    nqueries: int
    k: int
    recall_at_k: float | None
    qps: float
    makespan_cycles: float
    breakdown: dict
    placement_metrics: dict
    schedule_metrics: dict
    cooccur_stats: dict
    lookup_totals: dict
    pruned_entries: int

    def to_rows(self):
        rows = [
            ("nqueries", self.nqueries),
            ("k", self.k),
            ("recall_at_k", "n/a" if self.recall_at_k is None else repr(self.recall_at_k)),
            ("simulated_qps", repr(self.qps)),
            ("makespan_cycles", repr(self.makespan_cycles)),
            ("pruned_entries", self.pruned_entries),
        ]
        for stage, frac in self.breakdown.items():
            rows.append((f"breakdown.{stage}", repr(frac)))
        for key, val in self.placement_metrics.items():
            if key == "replica_histogram":
                rows.append((f"placement.{key}", json.dumps(val)))
            else:
                rows.append((f"placement.{key}", repr(val)))
        for key, val in self.schedule_metrics.items():
            rows.append((f"schedule.{key}", repr(val)))
        for key, val in self.cooccur_stats.items():
            rows.append((f"cooccur.{key}", repr(val)))
        for key, val in self.lookup_totals.items():
            rows.append((f"lookups.{key}", val))
        return rows

    def to_csv(self) -> str:
        lines = ["key,value"]
        for key, val in self.to_rows():
            sval = str(val)
            if "," in sval:
                sval = '"' + sval.replace('"', '""') + '"'
            lines.append(f"{key},{sval}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        recall = "n/a" if self.recall_at_k is None else f"{self.recall_at_k:.4f}"
        frac = {s: f"{v:.3f}" for s, v in self.breakdown.items()}
        lines = [
            "pimann run report",
            "=================",
            f"queries processed      : {self.nqueries}",
            f"recall@{self.k:<3}             : {recall}",
            f"simulated QPS          : {self.qps:.2f}",
            f"makespan (cycles)      : {self.makespan_cycles:.0f}",
            f"stage breakdown        : {frac}",
            f"placement max W / mean : {self.placement_metrics.get('max_over_mean_workload', 0):.4f}",
            f"placement CV of W      : {self.placement_metrics.get('cv_workload', 0):.4f}",
            f"schedule CV of W       : {self.schedule_metrics.get('cv_workload', 0):.4f}",
            f"clusters re-encoded    : {self.cooccur_stats.get('adopted_clusters', 0)}"
            f" / {self.cooccur_stats.get('clusters', 0)}",
            f"mean length reduction  : {self.cooccur_stats.get('mean_reduction', 0.0):.4f}",
            f"distance lookups       : {self.lookup_totals.get('distance_lookups', 0)}"
            f" (classic would be {self.lookup_totals.get('classic_equivalent', 0)})",
            f"pruned heap entries    : {self.pruned_entries}",
        ]
        return "\n".join(lines) + "\n"


class _ArtifactTracker:
    """Records files created by a run so failures can remove partial output."""

    def __init__(self):
        self.paths = []

    def add(self, path: str) -> str:
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for path in reversed(self.paths):
            try:
                os.remove(path)
            except OSError:
                pass


def _write(tracker, path, data: bytes | str):
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as f:
        f.write(data)
    if tracker is not None:
        tracker.add(path)


def load_base(cfg: RunConfig) -> np.ndarray:
    rows = cfg.max_base_rows or None
    data = vecio.read_vecs(cfg.base_path, cfg.base_kind, max_rows=rows)
    return np.ascontiguousarray(data, dtype=np.float32)


def load_queries(cfg: RunConfig) -> np.ndarray:
    rows = cfg.max_query_rows or None
    data = vecio.read_vecs(cfg.query_path, cfg.query_kind, max_rows=rows)
    return np.ascontiguousarray(data, dtype=np.float32)


def train_index(cfg: RunConfig, base: np.ndarray, tracker=None) -> TrainedIndex:
    """Offline training: coarse quantizer, PQ codebooks, residual codes."""
    if base.shape[0] < cfg.nclusters:
        raise InvalidArgument(
            f"nclusters={cfg.nclusters} exceeds dataset rows {base.shape[0]}"
        )
    cq = core_index.train_coarse_quantizer(base, cfg.nclusters, cfg.seed)
    labels, residuals = core_index.assign_and_residual(base, cq)
    codebook = core_index.train_pq(residuals, cfg.m, cfg.kstar, cfg.seed + 1)
    enc = core_index.encode(residuals, labels, codebook, nclusters=cfg.nclusters)
    outdir = cfg.outdir
    vecio.write_vecs(os.path.join(outdir, "centroids.fvecs"), cq.centroids, "f32")
    vecio.write_vecs(
        os.path.join(outdir, "codebooks.fvecs"),
        codebook.tables.reshape(-1, codebook.dsub),
        "f32",
    )
    full_codes = np.zeros((base.shape[0], cfg.m), dtype=np.uint8)
    for cid in range(enc.nclusters):
        full_codes[enc.ids[cid]] = enc.codes[cid]
    vecio.write_vecs(os.path.join(outdir, "codes.bvecs"), full_codes, "u8")
    vecio.write_vecs(
        os.path.join(outdir, "assignments.ivecs"), labels[:, None].astype(np.int32), "i32"
    )
    if tracker is not None:
        for name in ("centroids.fvecs", "codebooks.fvecs", "codes.bvecs", "assignments.ivecs"):
            tracker.add(os.path.join(outdir, name))
    return TrainedIndex(cq=cq, codebook=codebook, enc=enc)


def load_index(cfg: RunConfig) -> TrainedIndex:
    """Rebuild a TrainedIndex from the persisted artifacts."""
    outdir = cfg.outdir
    centroids = vecio.read_vecs(os.path.join(outdir, "centroids.fvecs"), "f32")
    tables = vecio.read_vecs(os.path.join(outdir, "codebooks.fvecs"), "f32")
    codes = vecio.read_vecs(os.path.join(outdir, "codes.bvecs"), "u8")
    labels = vecio.read_vecs(os.path.join(outdir, "assignments.ivecs"), "i32")[:, 0]
    cq = core_index.CoarseQuantizer(centroids)
    dsub = tables.shape[1]
    codebook = core_index.PQCodebook(tables.reshape(cfg.m, cfg.kstar, dsub))
    ids, grouped = [], []
    for cid in range(cfg.nclusters):
        rows = np.nonzero(labels == cid)[0]
        ids.append(rows.astype(np.int64))
        grouped.append(np.ascontiguousarray(codes[rows]))
    enc = core_index.EncodedDataset(ids=ids, codes=grouped, m=cfg.m, kstar=cfg.kstar)
    return TrainedIndex(cq=cq, codebook=codebook, enc=enc)


def mine_clusters(cfg: RunConfig, enc: core_index.EncodedDataset, tracker=None):
    """Mine and re-encode every cluster; persist the adopted ones.

    Returns (adopted, meta) where adopted maps cluster_id to
    (ReencodedCluster, CombinationSet) and meta is one stats dict per
    cluster.
    """
    outdir = os.path.join(cfg.outdir, "reencoded")
    os.makedirs(outdir, exist_ok=True)

    def work(cid):
        codes = enc.codes[cid]
        if codes.shape[0] == 0 or not cfg.cooccur_enabled:
            return cid, None, {"mean_len": float(cfg.m), "reduction": 0.0, "adopted": False}
        cset = cooccur.build_icg_and_mine(
            codes, m=cfg.cooccur_m, kstar=cfg.kstar, window=cfg.cooccur_window
        )
        reenc = cooccur.reencode_cluster(codes, cset)
        stats = cooccur.length_stats(reenc.lens, cfg.m, cfg.cooccur_adoption_threshold)
        return cid, (reenc, cset), stats

    if cfg.workers > 1 and cfg.cooccur_enabled:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(work, range(enc.nclusters)))
    else:
        outcomes = [work(cid) for cid in range(enc.nclusters)]

    adopted = {}
    meta = []
    for cid, payload, stats in outcomes:
        meta.append(stats)
        if payload is not None and stats["adopted"]:
            reenc, cset = payload
            adopted[cid] = (reenc, cset)
            blob = cooccur.serialize_reencoded(reenc, cset)
            _write(tracker, os.path.join(outdir, f"cluster_{cid}.bin"), blob)
    lines = ["cluster_id,size,mean_len,reduction,adopted"]
    for cid, stats in enumerate(meta):
        lines.append(
            f"{cid},{len(enc.ids[cid])},{stats['mean_len']!r},{stats['reduction']!r},"
            f"{int(stats['adopted'])}"
        )
    _write(tracker, os.path.join(cfg.outdir, "reencode_meta.csv"), "\n".join(lines) + "\n")
    return adopted, meta


def load_adopted(cfg: RunConfig):
    """Read back the adopted re-encoded clusters from disk."""
    meta_path = os.path.join(cfg.outdir, "reencode_meta.csv")
    adopted = {}
    if not os.path.exists(meta_path):
        return adopted
    with open(meta_path) as f:
        rows = f.read().strip().splitlines()[1:]
    for row in rows:
        cid_s, _, _, _, flag = row.split(",")
        if int(flag):
            cid = int(cid_s)
            with open(os.path.join(cfg.outdir, "reencoded", f"cluster_{cid}.bin"), "rb") as f:
                reenc, cset = cooccur.deserialize_reencoded(f.read())
            adopted[cid] = (reenc, cset)
    return adopted


def compute_frequencies(cfg: RunConfig, cq, queries: np.ndarray) -> np.ndarray:
    """Estimate cluster access frequencies from the leading query batches."""
    spans = split_batches(queries.shape[0], cfg.batch_size)[: cfg.history_batches]
    history = [filter_batch(queries[s:e], cq, cfg.nprobe) for s, e in spans]
    return placement.estimate_frequencies(history, cfg.nclusters)


def build_placement(cfg: RunConfig, index: TrainedIndex, freqs, tracker=None):
    sizes = index.enc.sizes()
    stats = ClusterStats(sizes=sizes, freqs=freqs, centroids=index.cq.centroids)
    mds = cfg.max_dpu_size or auto_max_dpu_size(sizes, cfg.ndpu)
    plan = placement.plan_placement(stats, cfg.ndpu, mds, cfg.nprobe)
    _write(tracker, os.path.join(cfg.outdir, "placement.txt"), plan.to_text())
    return plan, stats


def build_shards(enc: core_index.EncodedDataset, adopted) -> dict:
    shards = {}
    for cid in range(enc.nclusters):
        if cid in adopted:
            reenc, _ = adopted[cid]
            shards[cid] = dpu_sim.ClusterShard.from_reencoded(enc.ids[cid], reenc)
        else:
            shards[cid] = dpu_sim.ClusterShard.from_codes(enc.ids[cid], enc.codes[cid])
    return shards


def ground_truth_ids(cfg: RunConfig, base: np.ndarray, queries: np.ndarray):
    """Ground-truth ids from file, or brute force under the size cap."""
    if cfg.groundtruth_path:
        gt = vecio.read_vecs(cfg.groundtruth_path, "i32")
        if gt.shape[1] < cfg.k:
            raise InvalidArgument(
                f"ground truth has {gt.shape[1]} columns, need k={cfg.k}"
            )
        return gt[: queries.shape[0], : cfg.k].astype(np.int64)
    if base.shape[0] > cfg.brute_force_cap:
        return None
    out = np.empty((queries.shape[0], cfg.k), dtype=np.int64)
    for i in range(queries.shape[0]):
        out[i] = core_index.brute_force_topk(base, queries[i], cfg.k)
    return out


@dataclass
class BatchOutcome:
    assignment: scheduler.Assignment
    report: dpu_sim.CostReport
    result_ids: np.ndarray  # (nq_batch, k) int64, -1 padded


def run_batch(
    cfg: RunConfig,
    index: TrainedIndex,
    plan: PlacementMap,
    stats: ClusterStats,
    shards: dict,
    adopted_sets: dict,
    queries: np.ndarray,
    wram_plan: dpu_sim.WramPlan,
    model: dpu_sim.DpuModel,
) -> BatchOutcome:
    """Schedule, simulate, and aggregate one query batch."""
    filtered = filter_batch(queries, index.cq, cfg.nprobe)
    batch = scheduler.QueryBatch(filtered=list(filtered), nprobe=cfg.nprobe)
    assignment = scheduler.schedule_batch(batch, plan, stats)
    provider = LutProvider(queries, index.cq, index.codebook, filtered, adopted_sets)
    report, local = dpu_sim.simulate_batch(
        assignment, shards, provider, model, wram_plan, cfg.k, queries.shape[0]
    )
    result_ids = np.full((queries.shape[0], cfg.k), -1, dtype=np.int64)
    per_query: dict = {}
    for (dpu, qid), entries in local.items():
        per_query.setdefault(qid, []).append(entries)
    for qid, lists in per_query.items():
        ids = topk_select.host_aggregate(lists, cfg.k)
        result_ids[qid, : len(ids)] = ids
    return BatchOutcome(assignment=assignment, report=report, result_ids=result_ids)


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Execute the full offline + online pipeline and persist all artifacts.

    On error, files created by this run are removed before the exception
    propagates.
    """
    cfg.validate()
    os.makedirs(cfg.outdir, exist_ok=True)
    os.makedirs(os.path.join(cfg.outdir, "batches"), exist_ok=True)
    tracker = _ArtifactTracker()
    try:
        save_config(cfg, os.path.join(cfg.outdir, "resolved.cfg"))
        tracker.add(os.path.join(cfg.outdir, "resolved.cfg"))
        base = load_base(cfg)
        queries = load_queries(cfg)
        if base.shape[1] % cfg.m != 0:
            raise InvalidArgument(f"D={base.shape[1]} not divisible by m={cfg.m}")
        if queries.shape[1] != base.shape[1]:
            raise InvalidArgument("query dimension differs from base dimension")
        index = train_index(cfg, base, tracker)
        adopted, meta = mine_clusters(cfg, index.enc, tracker)
        freqs = compute_frequencies(cfg, index.cq, queries)
        plan, stats = build_placement(cfg, index, freqs, tracker)
        model = cfg.model()
        wram_plan = dpu_sim.plan_wram(
            d=base.shape[1], m=cfg.m, kstar=cfg.kstar, k=cfg.k,
            threads=cfg.threads, buffer_vectors=cfg.buffer_vectors,
            model=model, nslots=cfg.cooccur_m,
        )
        shards = build_shards(index.enc, adopted)
        adopted_sets = {cid: cset for cid, (_, cset) in adopted.items()}
        outcomes = []
        for bi, (s, e) in enumerate(split_batches(queries.shape[0], cfg.batch_size)):
            outcome = run_batch(
                cfg, index, plan, stats, shards, adopted_sets,
                queries[s:e], wram_plan, model,
            )
            prefix = os.path.join(cfg.outdir, "batches", f"batch_{bi:04d}")
            _write(tracker, prefix + ".assignment.csv", outcome.assignment.to_csv())
            _write(tracker, prefix + ".cost.csv", outcome.report.to_csv())
            _write(
                tracker,
                prefix + ".summary.json",
                json.dumps(outcome.report.summary(), indent=2, sort_keys=True) + "\n",
            )
            vecio.write_vecs(
                prefix + ".results.ivecs", outcome.result_ids.astype(np.int32), "i32"
            )
            tracker.add(prefix + ".results.ivecs")
            outcomes.append(outcome)
        gt = ground_truth_ids(cfg, base, queries)
        report = assemble_report(cfg, stats, plan, meta, outcomes, gt)
        _write(tracker, os.path.join(cfg.outdir, "report.csv"), report.to_csv())
        _write(tracker, os.path.join(cfg.outdir, "report.txt"), report.to_text())
        return report
    except Exception:
        tracker.cleanup()
        raise


def assemble_report(cfg, stats, plan, meta, outcomes, gt) -> RunReport:
    nq = sum(o.result_ids.shape[0] for o in outcomes)
    makespan = sum(o.report.makespan_cycles for o in outcomes)
    qps = nq * cfg.model().clock_hz / makespan if makespan > 0 else 0.0
    stage_cycles = {stage: 0.0 for stage in dpu_sim.STAGES}
    host = 0.0
    lookups = 0
    pruned = 0
    for o in outcomes:
        totals = o.report.stage_totals()
        for stage in dpu_sim.STAGES:
            stage_cycles[stage] += totals[stage].cycles
        host += o.report.host_cycles
        lookups += totals["distance_calc"].wram_lookups
        pruned += o.report.pruned_entries
    grand = sum(stage_cycles.values()) + host
    breakdown = {s: (c / grand if grand > 0 else 0.0) for s, c in stage_cycles.items()}
    breakdown["host"] = host / grand if grand > 0 else 0.0
    classic_equivalent = 0
    for o in outcomes:
        for plist in o.assignment.pairs:
            for _, cid in plist:
                classic_equivalent += int(stats.sizes[cid]) * cfg.m
    recall = None
    if gt is not None and nq:
        total = 0.0
        row = 0
        for o in outcomes:
            for i in range(o.result_ids.shape[0]):
                ids = [x for x in o.result_ids[i] if x >= 0]
                total += core_index.recall_at_k(ids, list(gt[row])) if ids else 0.0
                row += 1
        recall = total / nq
    sched = {
        "cv_workload": float(
            np.mean([scheduler.schedule_metrics(o.assignment)["cv_workload"] for o in outcomes])
        ) if outcomes else 0.0,
        "max_workload": max(
            (scheduler.schedule_metrics(o.assignment)["max_workload"] for o in outcomes),
            default=0,
        ),
    }
    adopted_n = sum(1 for s in meta if s["adopted"])
    cooccur_stats = {
        "clusters": len(meta),
        "adopted_clusters": adopted_n,
        "mean_reduction": float(np.mean([s["reduction"] for s in meta])) if meta else 0.0,
    }
    return RunReport(
        nqueries=nq,
        k=cfg.k,
        recall_at_k=recall,
        qps=qps,
        makespan_cycles=makespan,
        breakdown=breakdown,
        placement_metrics=placement.balance_metrics(plan, stats),
        schedule_metrics=sched,
        cooccur_stats=cooccur_stats,
        lookup_totals={
            "distance_lookups": lookups,
            "classic_equivalent": classic_equivalent,
        },
        pruned_entries=pruned,
    )


def project_scaling(points, target_ndpu: float | None = None) -> dict:
    """Least-squares linear fit of QPS against DPU count.

    `points` is a sequence of (ndpu, qps) pairs, at least three. Returns
    slope, intercept, r2, and the prediction at `target_ndpu` when given.
    """
    pts = [(float(a), float(b)) for a, b in points]
    if len(pts) < 3:
        raise InvalidArgument(f"need at least 3 points, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise InvalidArgument("all ndpu values are identical; cannot fit a line")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    sst = float(((y - ym) ** 2).sum())
    r2 = 1.0 if sst == 0.0 else 1.0 - float((resid**2).sum()) / sst
    out = {"slope": slope, "intercept": intercept, "r2": r2}
    if target_ndpu is not None:
        out["target_ndpu"] = float(target_ndpu)
        out["predicted_qps"] = slope * float(target_ndpu) + intercept
    return out
