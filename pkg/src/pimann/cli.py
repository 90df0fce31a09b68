"""Command-line interface.

Subcommands mirror the pipeline stages and are each re-runnable from the
artifacts persisted by earlier stages:

    train      offline training: quantizers, codes, re-encoded clusters
    place      cluster -> DPU placement from estimated access frequencies
    schedule   per-batch (query, cluster) -> DPU assignment CSVs
    simulate   cost reports for persisted assignments
    search     full online phase: schedule + simulate + top-k + recall
    report     rebuild report.csv / report.txt from persisted intermediates
    project    linear QPS-vs-DPU scaling fit from a measurement CSV

Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import dpu_sim, pipeline, placement, scheduler, vecio
from .errors import ConfigError, PimannError


def _add_config_arg(sub):
    sub.add_argument("--config", required=True, help="path to a key=value config file")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config)
    if args.set:
        text = config_mod.to_text(cfg) + "\n".join(args.set) + "\n"
        cfg = config_mod.from_text(text)
    return cfg.validate()


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.outdir, exist_ok=True)
    config_mod.save(cfg, os.path.join(cfg.outdir, "resolved.cfg"))
    base = pipeline.load_base(cfg)
    if base.shape[1] % cfg.m != 0:
        raise ConfigError(f"D={base.shape[1]} not divisible by m={cfg.m}")
    index = pipeline.train_index(cfg, base)
    adopted, meta = pipeline.mine_clusters(cfg, index.enc)
    print(f"trained {cfg.nclusters} clusters over {base.shape[0]} points")
    print(f"re-encoding adopted on {len(adopted)} of {len(meta)} clusters")
    return 0


def _require_artifacts(cfg, *names):
    for name in names:
        path = os.path.join(cfg.outdir, name)
        if not os.path.exists(path):
            raise ConfigError(f"missing {path}; run `train` first")


def _cmd_place(args) -> int:
    cfg = _load_config(args)
    _require_artifacts(cfg, "centroids.fvecs", "codebooks.fvecs", "codes.bvecs",
                       "assignments.ivecs")
    index = pipeline.load_index(cfg)
    queries = pipeline.load_queries(cfg)
    freqs = pipeline.compute_frequencies(cfg, index.cq, queries)
    plan, stats = pipeline.build_placement(cfg, index, freqs)
    metrics = placement.balance_metrics(plan, stats)
    print(f"placed {plan.nclusters} clusters on {plan.ndpu} DPUs")
    print(f"final threshold {plan.final_threshold:.2f}, "
          f"max/mean workload {metrics['max_over_mean_workload']:.4f}")
    return 0


def _online_setup(cfg):
    _require_artifacts(cfg, "centroids.fvecs", "codebooks.fvecs", "codes.bvecs",
                       "assignments.ivecs")
    index = pipeline.load_index(cfg)
    queries = pipeline.load_queries(cfg)
    freqs = pipeline.compute_frequencies(cfg, index.cq, queries)
    stats = placement.ClusterStats(
        sizes=index.enc.sizes(), freqs=freqs, centroids=index.cq.centroids
    )
    plan_path = os.path.join(cfg.outdir, "placement.txt")
    if not os.path.exists(plan_path):
        raise ConfigError(f"missing placement.txt in {cfg.outdir}; run `place` first")
    with open(plan_path) as f:
        plan = placement.PlacementMap.from_text(f.read(), stats)
    return index, queries, stats, plan


def _cmd_schedule(args) -> int:
    cfg = _load_config(args)
    index, queries, stats, plan = _online_setup(cfg)
    os.makedirs(os.path.join(cfg.outdir, "batches"), exist_ok=True)
    for bi, (s, e) in enumerate(pipeline.split_batches(queries.shape[0], cfg.batch_size)):
        filtered = pipeline.filter_batch(queries[s:e], index.cq, cfg.nprobe)
        batch = scheduler.QueryBatch(filtered=list(filtered), nprobe=cfg.nprobe)
        assignment = scheduler.schedule_batch(batch, plan, stats)
        path = os.path.join(cfg.outdir, "batches", f"batch_{bi:04d}.assignment.csv")
        with open(path, "w") as f:
            f.write(assignment.to_csv())
        metrics = scheduler.schedule_metrics(assignment)
        print(f"batch {bi}: {assignment.total_pairs} pairs, "
              f"CV of W {metrics['cv_workload']:.4f}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    index, queries, stats, plan = _online_setup(cfg)
    adopted = pipeline.load_adopted(cfg)
    shards = pipeline.build_shards(index.enc, adopted)
    adopted_sets = {cid: cset for cid, (_, cset) in adopted.items()}
    model = cfg.model()
    wram_plan = dpu_sim.plan_wram(
        d=index.cq.dim, m=cfg.m, kstar=cfg.kstar, k=cfg.k,
        threads=cfg.threads, buffer_vectors=cfg.buffer_vectors,
        model=model, nslots=cfg.cooccur_m,
    )
    spans = pipeline.split_batches(queries.shape[0], cfg.batch_size)
    for bi, (s, e) in enumerate(spans):
        prefix = os.path.join(cfg.outdir, "batches", f"batch_{bi:04d}")
        apath = prefix + ".assignment.csv"
        if not os.path.exists(apath):
            raise ConfigError(f"missing {apath}; run `schedule` first")
        with open(apath) as f:
            assignment = scheduler.Assignment.from_csv(f.read(), plan.ndpu, stats)
        batch_queries = queries[s:e]
        filtered = pipeline.filter_batch(batch_queries, index.cq, cfg.nprobe)
        provider = pipeline.LutProvider(
            batch_queries, index.cq, index.codebook, filtered, adopted_sets
        )
        report, _ = dpu_sim.simulate_batch(
            assignment, shards, provider, model, wram_plan, cfg.k, e - s
        )
        with open(prefix + ".cost.csv", "w") as f:
            f.write(report.to_csv())
        with open(prefix + ".summary.json", "w") as f:
            f.write(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
        print(f"batch {bi}: simulated QPS {report.qps:.2f}")
    return 0


def _cmd_search(args) -> int:
    cfg = _load_config(args)
    index, queries, stats, plan = _online_setup(cfg)
    adopted = pipeline.load_adopted(cfg)
    shards = pipeline.build_shards(index.enc, adopted)
    adopted_sets = {cid: cset for cid, (_, cset) in adopted.items()}
    model = cfg.model()
    wram_plan = dpu_sim.plan_wram(
        d=index.cq.dim, m=cfg.m, kstar=cfg.kstar, k=cfg.k,
        threads=cfg.threads, buffer_vectors=cfg.buffer_vectors,
        model=model, nslots=cfg.cooccur_m,
    )
    os.makedirs(os.path.join(cfg.outdir, "batches"), exist_ok=True)
    outcomes = []
    for bi, (s, e) in enumerate(pipeline.split_batches(queries.shape[0], cfg.batch_size)):
        outcome = pipeline.run_batch(
            cfg, index, plan, stats, shards, adopted_sets,
            queries[s:e], wram_plan, model,
        )
        prefix = os.path.join(cfg.outdir, "batches", f"batch_{bi:04d}")
        with open(prefix + ".assignment.csv", "w") as f:
            f.write(outcome.assignment.to_csv())
        with open(prefix + ".cost.csv", "w") as f:
            f.write(outcome.report.to_csv())
        with open(prefix + ".summary.json", "w") as f:
            f.write(json.dumps(outcome.report.summary(), indent=2, sort_keys=True) + "\n")
        vecio.write_vecs(
            prefix + ".results.ivecs", outcome.result_ids.astype(np.int32), "i32"
        )
        outcomes.append(outcome)
    meta = _read_meta(cfg)
    base = pipeline.load_base(cfg)
    gt = pipeline.ground_truth_ids(cfg, base, queries)
    report = pipeline.assemble_report(cfg, stats, plan, meta, outcomes, gt)
    with open(os.path.join(cfg.outdir, "report.csv"), "w") as f:
        f.write(report.to_csv())
    with open(os.path.join(cfg.outdir, "report.txt"), "w") as f:
        f.write(report.to_text())
    print(report.to_text())
    return 0


def _read_meta(cfg):
    path = os.path.join(cfg.outdir, "reencode_meta.csv")
    meta = []
    if os.path.exists(path):
        with open(path) as f:
            for row in f.read().strip().splitlines()[1:]:
                _, _, mean_len, reduction, flag = row.split(",")
                meta.append(
                    {
                        "mean_len": float(mean_len),
                        "reduction": float(reduction),
                        "adopted": bool(int(flag)),
                    }
                )
    return meta


def _cmd_report(args) -> int:
    cfg = _load_config(args)
    index, queries, stats, plan = _online_setup(cfg)
    batches_dir = os.path.join(cfg.outdir, "batches")
    spans = pipeline.split_batches(queries.shape[0], cfg.batch_size)
    outcomes = []
    for bi, (s, e) in enumerate(spans):
        prefix = os.path.join(batches_dir, f"batch_{bi:04d}")
        for suffix in (".assignment.csv", ".cost.csv", ".summary.json", ".results.ivecs"):
            if not os.path.exists(prefix + suffix):
                raise ConfigError(f"missing {prefix + suffix}; run `search` first")
        with open(prefix + ".assignment.csv") as f:
            assignment = scheduler.Assignment.from_csv(f.read(), plan.ndpu, stats)
        report = _cost_report_from_files(prefix, e - s)
        result_ids = vecio.read_vecs(prefix + ".results.ivecs", "i32").astype(np.int64)
        outcomes.append(
            pipeline.BatchOutcome(assignment=assignment, report=report, result_ids=result_ids)
        )
    meta = _read_meta(cfg)
    base = pipeline.load_base(cfg)
    gt = pipeline.ground_truth_ids(cfg, base, queries)
    report = pipeline.assemble_report(cfg, stats, plan, meta, outcomes, gt)
    with open(os.path.join(cfg.outdir, "report.csv"), "w") as f:
        f.write(report.to_csv())
    with open(os.path.join(cfg.outdir, "report.txt"), "w") as f:
        f.write(report.to_text())
    print(report.to_text())
    return 0


def _cost_report_from_files(prefix: str, nqueries: int) -> dpu_sim.CostReport:
    """Rebuild a CostReport from its persisted CSV + JSON summary."""
    with open(prefix + ".summary.json") as f:
        summary = json.load(f)
    with open(prefix + ".cost.csv") as f:
        rows = f.read().strip().splitlines()[1:]
    per_dpu = [
        {stage: dpu_sim.StageCost() for stage in dpu_sim.STAGES}
        for _ in range(int(summary["ndpu"]))
    ]
    for row in rows:
        dpu_s, stage, cycles, reads, nbytes, lookups = row.split(",")
        cost = per_dpu[int(dpu_s)][stage]
        cost.cycles = float(cycles)
        cost.mram_reads = int(reads)
        cost.mram_bytes = int(nbytes)
        cost.wram_lookups = int(lookups)
    return dpu_sim.CostReport(
        per_dpu=per_dpu,
        host_cycles=float(summary["host_cycles"]),
        host_bytes_in=int(summary["host_bytes_in"]),
        host_bytes_out=int(summary["host_bytes_out"]),
        makespan_cycles=float(summary["makespan_cycles"]),
        qps=float(summary["qps"]),
        nqueries=nqueries,
        pruned_entries=int(summary["pruned_entries"]),
    )


def _cmd_project(args) -> int:
    points = []
    with open(args.points) as f:
        rows = f.read().strip().splitlines()
    start = 1 if rows and rows[0].lower().replace(" ", "").startswith("ndpu") else 0
    for row in rows[start:]:
        a, b = row.split(",")
        points.append((float(a), float(b)))
    fit = pipeline.project_scaling(points, target_ndpu=args.target)
    print(f"slope     : {fit['slope']:.6g} QPS per DPU")
    print(f"intercept : {fit['intercept']:.6g}")
    print(f"R^2       : {fit['r2']:.6f}")
    if args.target is not None:
        print(f"predicted QPS at {int(args.target)} DPUs: {fit['predicted_qps']:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pimann",
        description="IVFPQ vector-search workbench with a PIM cost-model simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("train", _cmd_train),
        ("place", _cmd_place),
        ("schedule", _cmd_schedule),
        ("simulate", _cmd_simulate),
        ("search", _cmd_search),
        ("report", _cmd_report),
    ):
        p = sub.add_parser(name)
        _add_config_arg(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("project")
    p.add_argument("--points", required=True, help="CSV of ndpu,qps measurements")
    p.add_argument("--target", type=float, default=None, help="DPU count to predict")
    p.set_defaults(fn=_cmd_project)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PimannError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
