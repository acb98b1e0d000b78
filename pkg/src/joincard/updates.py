"""Append-only update strategies: stale, fast incremental update, full retrain.

Simulates time-ordered partition appends: the root table is range-partitioned
on a declared column, partitions are ingested one by one, and join counts
plus the sampler are rebuilt per ingest.  After each ingest the compared
strategies are (1) a model never updated after the first snapshot, (2) the
same model incrementally trained on a small budget of fresh samples, and
(3) a model retrained from scratch on the full budget.

Dictionaries are built once over the full dataset so every snapshot shares
the model's token layout; appends shift distributions, not domains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .counts import compute_join_counts
from .estimator import CardinalityEstimator
from .ingest import Database
from .layout import Layout, build_layout
from .model import MaskedAutoregressiveModel, ModelConfig
from .oracle import true_cardinality
from .sampler import JoinSampler, SamplerConfig
from .workload import q_error


@dataclass
class UpdateSimResult:
    partition_column: str
    snapshots: list[dict] = field(default_factory=list)
    full_budget: int = 0
    fast_budget: int = 0

    def final(self) -> dict:
        return self.snapshots[-1]


def partition_masks(db: Database, column: str, n_partitions: int) -> list[dict[str, np.ndarray]]:
    """Row masks for cumulative snapshots 1..n, range-partitioned on a root column.

    A child row becomes visible when its edge key matches a visible parent
    row; rows with keys that never match (NULL or orphaned) arrive with the
    final snapshot, which always holds the complete dataset.
    """
    schema = db.schema
    root = schema.root
    tokens = db.stores[root].tokens[column]
    d = db.stores[root].dictionaries[column]
    # Order-preserving encoding: token cutoffs are value-range cutoffs.
    bounds = np.linspace(1, d.size, n_partitions + 1).astype(np.int64)
    out = []
    for k in range(1, n_partitions + 1):
        last = k == n_partitions
        masks: dict[str, np.ndarray] = {
            root: np.ones(len(tokens), dtype=bool) if last else (tokens >= 1) & (tokens < bounds[k])
        }
        for child in schema.tables_root_first()[1:]:
            ctoks = db.stores[child].tokens[schema.parent_of(child)[0].column_on(child)]
            if last:
                masks[child] = np.ones(len(ctoks), dtype=bool)
                continue
            edge, parent = schema.parent_of(child)
            kc, pc = edge.column_on(child), edge.column_on(parent)
            bridge = db.bridge(child, kc, parent, pc)
            visible = np.zeros(db.stores[parent].dictionaries[pc].size, dtype=bool)
            visible[db.stores[parent].tokens[pc][masks[parent]]] = True
            visible[0] = False
            masks[child] = visible[bridge[ctoks]]
        out.append(masks)
    return out


@dataclass
class Snapshot:
    db: Database
    counts: dict
    sampler: JoinSampler


def build_snapshot(db: Database, masks: dict[str, np.ndarray], layout: Layout, seed: int) -> Snapshot:
    sub = db.restricted(masks)
    counts = compute_join_counts(sub)
    sampler = JoinSampler(sub, counts, SamplerConfig(seed=seed), layout)
    return Snapshot(db=sub, counts=counts, sampler=sampler)


def run_update_simulation(
    db: Database,
    partition_column: str,
    workload,
    model_config: ModelConfig,
    full_budget: int,
    fast_frac: float = 0.01,
    n_partitions: int = 5,
    budget: int = 1000,
    seed: int = 0,
) -> UpdateSimResult:
    """Compare stale / fast-update / retrain across cumulative partition appends."""
    layout = build_layout(db)
    masks = partition_masks(db, partition_column, n_partitions)
    fast_budget = max(1, int(round(full_budget * fast_frac)))
    result = UpdateSimResult(
        partition_column=partition_column, full_budget=full_budget, fast_budget=fast_budget
    )

    first = build_snapshot(db, masks[0], layout, seed=seed)
    stale = MaskedAutoregressiveModel(layout, model_config)
    stale.fit(first.sampler, full_budget, seed=seed)
    fast = MaskedAutoregressiveModel(layout, model_config)
    fast.params = {k: v.copy() for k, v in stale.params.items()}
    fast_spent = 0

    for k in range(1, n_partitions):
        snap = build_snapshot(db, masks[k], layout, seed=seed + k)
        fast.incremental_update(snap.sampler, fast_budget, seed=seed + k)
        fast_spent += fast_budget
        retrain = MaskedAutoregressiveModel(layout, model_config)
        snap.sampler.reset()
        retrain.fit(snap.sampler, full_budget, seed=seed + k)
        truths = [true_cardinality(snap.db, q) for q, _ in workload]
        entry = {"snapshot": k + 1}
        for name, model in (("stale", stale), ("fast", fast), ("retrain", retrain)):
            est = CardinalityEstimator(snap.db, model, snap.counts)
            errs = []
            for i, ((q, _), truth) in enumerate(zip(workload, truths)):
                e = est.estimate(q, budget=budget, seed=seed + 31 * i)
                errs.append(q_error(e.cardinality, truth))
            errs = np.asarray(errs)
            entry[name] = {
                "p50": float(np.quantile(errs, 0.5)),
                "p95": float(np.quantile(errs, 0.95)),
            }
        entry["fast_tuples"] = fast_spent
        entry["retrain_tuples"] = full_budget
        result.snapshots.append(entry)
    return result
