"""Command-line pipeline: synth / ingest / counts / sample / train / estimate /
gen-workload / eval / update.

Every subcommand takes --seed and --config and emits line-delimited JSON
records, so runs can be scripted, diffed, and hashed for reproducibility.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np
import yaml

from .counts import compute_join_counts, full_join_size
from .estimator import EXHAUSTIVE, CardinalityEstimator
from .ingest import Database, load_database, save_database
from .layout import build_layout, write_rows_csv
from .model import MaskedAutoregressiveModel, ModelConfig
from .oracle import EmpiricalBackend, materialize
from .sampler import JoinSampler, SamplerConfig
from .schema import load_schema_config
from .synth import SynthParams, write_dataset
from .updates import run_update_simulation
from .workload import (
    WorkloadSpec,
    evaluate,
    generate_workload,
    load_workload,
    q_error,
    query_to_record,
    save_workload,
)


def _emit(record: dict, out) -> None:
    out.write(json.dumps(record, sort_keys=True) + "\n")


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    return doc or {}


def _model_config(cfg: dict, seed: int) -> ModelConfig:
    fields = {f.name for f in dataclasses.fields(ModelConfig)}
    opts = {k: v for k, v in cfg.get("model", {}).items() if k in fields}
    opts.setdefault("init_seed", seed)
    return ModelConfig(**opts)


def _load_snapshot(path):
    db, counts = load_database(path)
    if counts is None:
        counts = compute_join_counts(db)
    return db, counts


def cmd_synth(args, out) -> int:
    cfg = _load_config(args.config).get("synth", {})
    fields = {f.name for f in dataclasses.fields(SynthParams)}
    params = SynthParams(**{k: v for k, v in cfg.items() if k in fields})
    schema_path = write_dataset(args.out, args.seed, params)
    _emit({"type": "synth", "out": args.out, "schema": schema_path, "seed": args.seed}, out)
    return 0


def cmd_ingest(args, out) -> int:
    schema = load_schema_config(args.schema)
    db = Database.from_csv_dir(schema, args.data_dir)
    save_database(db, args.out)
    for t in schema.tables:
        _emit({"type": "ingest", "table": t.name, "rows": db.stores[t.name].n_rows}, out)
    _emit({"type": "snapshot", "path": args.out}, out)
    return 0


def cmd_counts(args, out) -> int:
    db, _ = load_database(args.snapshot)
    counts = compute_join_counts(db)
    if args.out:
        save_database(db, args.out, counts=counts)
    for t in db.schema.tables_root_first():
        jct = counts[t.name] if hasattr(t, "name") else counts[t]
        _emit(
            {
                "type": "join-counts",
                "table": jct.table,
                "keys": list(jct.key_columns),
                "distinct_keys": len(jct.weights),
                "null_entry": jct.null_entry,
            },
            out,
        )
    _emit({"type": "full-join", "rows": str(full_join_size(counts[db.schema.root]))}, out)
    return 0


def cmd_sample(args, out) -> int:
    db, counts = _load_snapshot(args.snapshot)
    sampler = JoinSampler(db, counts, SamplerConfig(seed=args.seed, worker_count=args.workers))
    rows = sampler.sample_batch(args.n)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            write_rows_csv(sampler.layout, rows, f)
        _emit({"type": "sample", "rows": int(rows.shape[0]), "csv": args.out}, out)
    else:
        write_rows_csv(sampler.layout, rows, out)
    return 0


def cmd_train(args, out) -> int:
    cfg = _load_config(args.config)
    db, counts = _load_snapshot(args.snapshot)
    layout = build_layout(db)
    config = _model_config(cfg, args.seed)
    sampler = JoinSampler(
        db, counts, SamplerConfig(batch_size=config.batch_size, worker_count=args.workers, seed=args.seed), layout
    )
    model = MaskedAutoregressiveModel(layout, config)
    losses = model.fit(sampler, args.tuples, seed=args.seed)
    model.save(args.out)
    _emit(
        {
            "type": "train",
            "tuples": args.tuples,
            "steps": len(losses),
            "first_loss": losses[0],
            "final_loss": losses[-1],
            "checkpoint": args.out,
        },
        out,
    )
    return 0


def cmd_estimate(args, out) -> int:
    db, counts = _load_snapshot(args.snapshot)
    estimator = _make_estimator(args, db, counts)
    budget = EXHAUSTIVE if args.budget == EXHAUSTIVE else int(args.budget)
    for i, (query, truth) in enumerate(load_workload(args.queries)):
        est = estimator.estimate(query, budget=budget, seed=args.seed + i)
        rec = {
            "type": "estimate",
            "query": query_to_record(query),
            "cardinality": est.cardinality,
            "selectivity": est.selectivity,
            "budget": est.budget,
        }
        if truth is not None:
            rec["truth"] = truth
            rec["q_error"] = q_error(est.cardinality, truth)
        _emit(rec, out)
    return 0


def _make_estimator(args, db, counts) -> CardinalityEstimator:
    if getattr(args, "ckpt", None):
        model = MaskedAutoregressiveModel.load(args.ckpt)
        return CardinalityEstimator(db, model, counts)
    join = materialize(db)
    return CardinalityEstimator(db, EmpiricalBackend(join), counts)


def cmd_gen_workload(args, out) -> int:
    db, counts = _load_snapshot(args.snapshot)
    sampler = JoinSampler(db, counts, SamplerConfig(seed=args.seed))
    spec = WorkloadSpec(count=args.count, seed=args.seed)
    workload = generate_workload(db, sampler, spec)
    save_workload(args.out, workload)
    _emit({"type": "workload", "queries": len(workload), "path": args.out}, out)
    return 0


def cmd_eval(args, out) -> int:
    db, counts = _load_snapshot(args.snapshot)
    estimator = _make_estimator(args, db, counts)
    workload = [(q, t) for q, t in load_workload(args.workload)]
    budget = EXHAUSTIVE if args.budget == EXHAUSTIVE else int(args.budget)
    report = evaluate(estimator, workload, budget=budget, seed=args.seed)
    for rec in report.records:
        _emit({"type": "query-eval", **rec}, out)
    _emit({"type": "report", **report.summary()}, out)
    return 0


def cmd_update(args, out) -> int:
    cfg = _load_config(args.config)
    schema = load_schema_config(args.schema)
    db = Database.from_csv_dir(schema, args.data_dir)
    counts = compute_join_counts(db)
    sampler = JoinSampler(db, counts, SamplerConfig(seed=args.seed))
    workload = generate_workload(db, sampler, WorkloadSpec(count=args.queries, seed=args.seed))
    result = run_update_simulation(
        db,
        partition_column=args.partition_column,
        workload=workload,
        model_config=_model_config(cfg, args.seed),
        full_budget=args.tuples,
        fast_frac=args.fast_frac,
        n_partitions=args.partitions,
        budget=args.budget,
        seed=args.seed,
    )
    for entry in result.snapshots:
        _emit({"type": "update-snapshot", **entry}, out)
    _emit(
        {
            "type": "update-summary",
            "full_budget": result.full_budget,
            "fast_budget": result.fast_budget,
            "partition_column": result.partition_column,
        },
        out,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="joincard", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="YAML config file")

    sp = sub.add_parser("synth", help="generate a synthetic dataset + schema config")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="load CSVs into a binary snapshot")
    common(sp)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("counts", help="compute join-count tables and |J|")
    common(sp)
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--out", default=None, help="rewrite snapshot with counts attached")
    sp.set_defaults(func=cmd_counts)

    sp = sub.add_parser("sample", help="dump sampled full-join rows as CSV")
    common(sp)
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("-n", type=int, default=100)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("train", help="train the density model on join samples")
    common(sp)
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--tuples", type=int, default=500_000)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("estimate", help="estimate cardinalities for a query file")
    common(sp)
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--ckpt", default=None, help="model checkpoint (default: exact backend)")
    sp.add_argument("--queries", required=True)
    sp.add_argument("--budget", default="1000")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("gen-workload", help="generate a benchmark workload with truths")
    common(sp)
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_workload)

    sp = sub.add_parser("eval", help="evaluate a workload and report Q-error quantiles")
    common(sp)
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--ckpt", default=None)
    sp.add_argument("--workload", required=True)
    sp.add_argument("--budget", default="1000")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("update", help="run the partition-append update simulation")
    common(sp)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--partition-column", default="year")
    sp.add_argument("--partitions", type=int, default=5)
    sp.add_argument("--tuples", type=int, default=200_000)
    sp.add_argument("--fast-frac", type=float, default=0.01)
    sp.add_argument("--queries", type=int, default=50)
    sp.add_argument("--budget", type=int, default=500)
    sp.set_defaults(func=cmd_update)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args, sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
