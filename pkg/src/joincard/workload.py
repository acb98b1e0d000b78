"""Q-error metric, workload generation, and evaluation reports.

Workload queries are generated per join graph by drawing a tuple from that
graph's inner join (rejection on the sampler's indicator columns), taking
the tuple's non-null column values as filter literals, and placing 3 to 6
comparison operators; range operators only go on range-filterable columns.
Literals drawn from an actual joint tuple guarantee non-empty results.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import EXHAUSTIVE, CardinalityEstimator, Estimate
from .ingest import Database
from .oracle import true_cardinality
from .sampler import JoinSampler
from .schema import JoinSchema, Predicate, QuerySpec, validate_query


class EmptyJoinGraphError(ValueError):
    """A requested join graph has an empty inner join; no literals can be drawn."""


def q_error(estimate: float, truth: float) -> float:
    """Multiplicative deviation factor; both sides are lower-bounded by 1."""
    est = max(float(estimate), 1.0)
    tru = max(float(truth), 1.0)
    return max(tru / est, est / tru)


@dataclass
class QErrorReport:
    qerrors: np.ndarray
    records: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def p50(self) -> float:
        return float(np.quantile(self.qerrors, 0.5))

    @property
    def p95(self) -> float:
        return float(np.quantile(self.qerrors, 0.95))

    @property
    def p99(self) -> float:
        return float(np.quantile(self.qerrors, 0.99))

    @property
    def maximum(self) -> float:
        return float(np.max(self.qerrors))

    def summary(self) -> dict:
        return {
            "queries": int(len(self.qerrors)),
            "p50": self.p50,
            "p95": self.p95,
            "p99": self.p99,
            "max": self.maximum,
            **self.meta,
        }


def all_connected_subtrees(schema: JoinSchema) -> list[tuple[str, ...]]:
    """Every connected table subset of the schema tree, in a stable order."""
    tables = schema.tables_root_first()
    found: set[frozenset] = set()
    out: list[tuple[str, ...]] = []

    def grow(current: frozenset):
        if current in found:
            return
        found.add(current)
        out.append(tuple(t for t in tables if t in current))
        for t in current:
            for _, nb in schema.adjacency(t):
                if nb not in current:
                    grow(current | {nb})

    for t in tables:
        grow(frozenset([t]))
    return sorted(out, key=lambda g: (len(g), g))


@dataclass(frozen=True)
class WorkloadSpec:
    count: int = 100
    join_graphs: tuple[tuple[str, ...], ...] | None = None  # None = all connected subtrees
    filters_min: int = 3
    filters_max: int = 6
    range_ops: tuple[str, ...] = ("<=", ">=", "=")
    equality_ops: tuple[str, ...] = ("=",)
    seed: int = 0


def _draw_inner_tuple(
    sampler: JoinSampler, tables: tuple[str, ...], rng: np.random.Generator, max_rounds: int = 200
) -> np.ndarray:
    """One full-join sample whose indicators cover every queried table."""
    layout = sampler.layout
    ind = [layout.indicator_index(t) for t in tables]
    for _ in range(max_rounds):
        slots = sampler.draw_keys(rng, 256)
        rows = sampler.complete_rows(slots)
        hit = np.flatnonzero(np.all(rows[:, ind] == 1, axis=1))
        if hit.size:
            return rows[hit[0]]
    raise EmptyJoinGraphError(f"no inner-join tuple found for graph {tables}")


def generate_workload(
    db: Database, sampler: JoinSampler, spec: WorkloadSpec
) -> list[tuple[QuerySpec, int]]:
    """Queries uniformly spread over the join-graph set, with oracle truths attached."""
    schema = db.schema
    graphs = list(spec.join_graphs) if spec.join_graphs else all_connected_subtrees(schema)
    for g in graphs:
        validate_query(schema, QuerySpec.make(g))
        if true_cardinality(db, QuerySpec.make(g)) == 0:
            raise EmptyJoinGraphError(f"join graph {g} has an empty inner join")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(404,)))
    layout = sampler.layout
    out: list[tuple[QuerySpec, int]] = []
    for i in range(spec.count):
        graph = graphs[i % len(graphs)]
        row = _draw_inner_tuple(sampler, graph, rng)
        candidates = []
        for j, col in enumerate(layout.columns):
            if col.role != "base" or col.table not in graph:
                continue
            if row[j] == 0:
                continue
            candidates.append((j, col))
        n_filters = int(rng.integers(spec.filters_min, spec.filters_max + 1))
        n_filters = min(n_filters, len(candidates))
        chosen = rng.choice(len(candidates), size=n_filters, replace=False)
        predicates = []
        for ci in sorted(chosen.tolist()):
            j, col = candidates[ci]
            cdef = schema.table(col.table).column(col.source)
            ops = spec.range_ops if cdef.range_filterable else spec.equality_ops
            op = ops[int(rng.integers(0, len(ops)))]
            predicates.append(Predicate(col.name, op, col.decode(int(row[j]))))
        query = QuerySpec.make(graph, predicates)
        out.append((query, true_cardinality(db, query)))
    return out


def evaluate(
    estimator: CardinalityEstimator,
    workload: list[tuple[QuerySpec, int]],
    budget: int | str = 1000,
    seed: int = 0,
) -> QErrorReport:
    """Estimate every workload query and report the Q-error distribution."""
    qerrors = []
    records = []
    for i, (query, truth) in enumerate(workload):
        t0 = time.perf_counter()
        per_seed = seed if budget == EXHAUSTIVE else seed + i
        est: Estimate = estimator.estimate(query, budget=budget, seed=per_seed)
        latency = time.perf_counter() - t0
        err = q_error(est.cardinality, truth)
        qerrors.append(err)
        records.append(
            {
                "query": query_to_record(query),
                "truth": int(truth),
                "estimate": est.cardinality,
                "selectivity": est.selectivity,
                "q_error": err,
                "latency_s": latency,
                "budget": est.budget,
            }
        )
    return QErrorReport(qerrors=np.asarray(qerrors), records=records, meta={"budget": budget})


# --- query / workload files (JSON lines) -----------------------------------


def query_to_record(query: QuerySpec, truth: int | None = None) -> dict:
    rec = {
        "tables": list(query.tables),
        "predicates": [[p.column, p.op, list(p.value) if p.op == "in" else p.value] for p in query.predicates],
    }
    if truth is not None:
        rec["truth"] = int(truth)
    return rec


def record_to_query(rec: dict) -> QuerySpec:
    preds = [(c, op, tuple(v) if isinstance(v, list) else v) for c, op, v in rec.get("predicates", [])]
    return QuerySpec.make(rec["tables"], preds)


def save_workload(path, workload: list[tuple[QuerySpec, int]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for query, truth in workload:
            f.write(json.dumps(query_to_record(query, truth), sort_keys=True) + "\n")


def load_workload(path) -> list[tuple[QuerySpec, int | None]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append((record_to_query(rec), rec.get("truth")))
    return out
