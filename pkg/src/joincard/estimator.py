"""Cardinality inference over any density backend.

Per query, a plan assigns one action to every (sub)column of the backend's
layout: constrain to a predicate region (accumulating the region's
conditional mass as a likelihood factor and drawing an in-region value),
pin a present table's indicator to 1, draw a concrete fanout value for each
omitted table's downscaling key (dividing the sample's likelihood by the
product of drawn fanouts), or skip with the wildcard token.  Averaged
sample likelihoods times the full-join size |J| give the cardinality.

With the exact counting backend the same plan can be evaluated in closed
form by summing over the materialized join rows with rational arithmetic,
which makes oracle-equivalence checks exact rather than stochastic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .counts import JoinCountTable, full_join_size
from .factorization import (
    ColumnFactorization,
    IntervalProgram,
    MembershipProgram,
    PredicateProgram,
)
from .ingest import Database
from .layout import ROLE_FANOUT
from .model import WILDCARD, DensityBackend
from .schema import QuerySpec, resolve_fanout_keys, validate_query

EXHAUSTIVE = "exhaustive"

SKIP = "skip"
REGION = "region"
FANOUT = "fanout"


@dataclass(frozen=True)
class Estimate:
    cardinality: float
    selectivity: float
    budget: int | str
    seed: int | None
    exact: Fraction | None = None


@dataclass
class PlanColumn:
    kind: str
    source: int = -1  # original layout column behind this subcolumn
    chunk: int = 0
    last_chunk: bool = True
    values: np.ndarray | None = None  # fanout token -> occurrence count


@dataclass
class InferencePlan:
    query: QuerySpec
    columns: list[PlanColumn]
    programs: dict[int, PredicateProgram]  # original column -> predicate program
    scale: int


class ZeroMassRegionError(ValueError):
    """Internal marker; zero-mass regions clamp the estimate rather than raise."""


def _token_region(dictionary, cf: ColumnFactorization, predicates) -> PredicateProgram:
    """Conjunction of value-space predicates as a token-space program (NULL excluded)."""
    lo, hi = 1, cf.domain - 1
    member: set[int] | None = None
    for pred in predicates:
        op, value = pred.op, pred.value
        if op == "=":
            tok = dictionary.try_encode(value)
            if tok is None:
                return IntervalProgram(cf, 1, 0)  # provably empty
            lo, hi = max(lo, tok), min(hi, tok)
        elif op == "<":
            hi = min(hi, dictionary.value_count_below(value))
        elif op == "<=":
            hi = min(hi, dictionary.value_count_at_most(value))
        elif op == ">":
            lo = max(lo, dictionary.value_count_at_most(value) + 1)
        elif op == ">=":
            lo = max(lo, dictionary.value_count_below(value) + 1)
        elif op == "in":
            toks = {dictionary.try_encode(v) for v in value}
            toks.discard(None)
            member = toks if member is None else member & toks
        else:
            raise ValueError(f"unsupported operator {op!r}")
    if member is not None:
        toks = sorted(t for t in member if lo <= t <= hi)
        return MembershipProgram(cf, toks)
    return IntervalProgram(cf, lo, hi)


def build_plan(db: Database, backend: DensityBackend, counts_or_scale, query: QuerySpec) -> InferencePlan:
    """Plan the per-(sub)column actions for a validated query."""
    validate_query(db.schema, query)
    layout = backend.layout
    fspec = backend.fspec
    if isinstance(counts_or_scale, dict):
        scale = full_join_size(counts_or_scale[db.schema.root])
    elif isinstance(counts_or_scale, JoinCountTable):
        scale = full_join_size(counts_or_scale)
    else:
        scale = int(counts_or_scale)

    programs: dict[int, PredicateProgram] = {}
    by_column: dict[int, list] = {}
    for pred in query.predicates:
        table, col = pred.split()
        by_column.setdefault(layout.base_index(table, col), []).append(pred)
    for idx, preds in by_column.items():
        col = layout.columns[idx]
        programs[idx] = _token_region(
            db.dictionary(col.table, col.source), fspec.per_column[idx], preds
        )
    for table in query.tables:
        idx = layout.indicator_index(table)
        programs[idx] = IntervalProgram(fspec.per_column[idx], 1, 1)
    fanout_cols: dict[int, np.ndarray] = {}
    for omitted, key in resolve_fanout_keys(db.schema, query).items():
        _, col = key.split(".")
        idx = layout.fanout_index(omitted, col)
        fanout_cols[idx] = np.asarray(layout.columns[idx].values, dtype=np.int64)

    plan_cols = []
    for sub in fspec.subcolumns:
        if sub.parent in programs:
            plan_cols.append(
                PlanColumn(
                    kind=REGION,
                    source=sub.parent,
                    chunk=sub.chunk,
                    last_chunk=sub.chunk == fspec.per_column[sub.parent].k - 1,
                )
            )
        elif sub.parent in fanout_cols:
            plan_cols.append(
                PlanColumn(
                    kind=FANOUT,
                    source=sub.parent,
                    chunk=sub.chunk,
                    last_chunk=sub.chunk == fspec.per_column[sub.parent].k - 1,
                    values=fanout_cols[sub.parent],
                )
            )
        else:
            plan_cols.append(PlanColumn(kind=SKIP, source=sub.parent, chunk=sub.chunk))
    return InferencePlan(query=query, columns=plan_cols, programs=programs, scale=scale)


def _draw_categorical(weights: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise draws proportional to `weights`; returns (drawn, row mass)."""
    cdf = np.cumsum(weights, axis=1)
    mass = cdf[:, -1].copy()
    u = rng.random(weights.shape[0]) * mass
    drawn = (cdf > u[:, None]).argmax(axis=1)
    return drawn.astype(np.int64), mass


def _monte_carlo(plan: InferencePlan, backend: DensityBackend, budget: int, seed: int) -> Estimate:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(303,)))
    n = backend.fspec.n_subcolumns
    B = budget
    prefix = np.full((B, n), WILDCARD, dtype=np.int64)
    weight = np.ones(B)
    inv_fan = np.ones(B)
    states = {c: prog.new_state(B) for c, prog in plan.programs.items()}
    fan_digits: dict[int, list[np.ndarray]] = {}
    for j, pc in enumerate(plan.columns):
        if pc.kind == SKIP:
            continue
        probs = backend.conditional_batch(j, prefix[:, :j]).astype(np.float64)
        if pc.kind == REGION:
            prog = plan.programs[pc.source]
            masks = prog.region_masks(pc.chunk, states[pc.source])
            drawn, mass = _draw_categorical(probs * masks, rng)
            dead = mass <= 0.0
            weight *= np.where(dead, 0.0, mass)
            states[pc.source] = prog.advance(pc.chunk, states[pc.source], drawn)
            prefix[:, j] = np.where(dead, WILDCARD, drawn)
        else:
            drawn, _ = _draw_categorical(probs, rng)
            prefix[:, j] = drawn
            fan_digits.setdefault(pc.source, []).append(drawn)
            if pc.last_chunk:
                cf = backend.fspec.per_column[pc.source]
                token = np.zeros(B, dtype=np.int64)
                for digits, shift in zip(fan_digits[pc.source], cf.shifts):
                    token += digits << shift
                inv_fan /= pc.values[token]
    selectivity = float(np.mean(weight * inv_fan))
    card = min(max(selectivity * plan.scale, 1.0), float(plan.scale))
    return Estimate(cardinality=card, selectivity=selectivity, budget=budget, seed=seed)


def _exhaustive(plan: InferencePlan, backend: DensityBackend) -> Estimate:
    if not hasattr(backend, "full_rows"):
        raise TypeError("exhaustive evaluation needs the exact counting backend")
    rows = backend.full_rows()
    accept = np.ones(rows.shape[0], dtype=bool)
    for col, prog in plan.programs.items():
        accept &= prog.accepts_tokens(rows[:, col])
    fan = np.ones(rows.shape[0], dtype=np.int64)
    for pc in plan.columns:
        if pc.kind == FANOUT and pc.last_chunk:
            fan = fan * pc.values[rows[:, pc.source]]
    total = Fraction(0)
    if accept.any():
        vals, cnts = np.unique(fan[accept], return_counts=True)
        for f, c in zip(vals.tolist(), cnts.tolist()):
            total += Fraction(int(c), int(f))
    selectivity = total / plan.scale if plan.scale else Fraction(0)
    clamped = min(max(total, Fraction(1)), Fraction(plan.scale)) if plan.scale else Fraction(1)
    return Estimate(
        cardinality=float(clamped),
        selectivity=float(selectivity),
        budget=EXHAUSTIVE,
        seed=None,
        exact=clamped,
    )


def estimate(plan: InferencePlan, backend: DensityBackend, budget: int | str = 1000, seed: int = 0) -> Estimate:
    if budget == EXHAUSTIVE:
        return _exhaustive(plan, backend)
    if not isinstance(budget, int) or budget < 1:
        raise ValueError(f"budget must be a positive int or {EXHAUSTIVE!r}")
    return _monte_carlo(plan, backend, budget, seed)


class CardinalityEstimator:
    """Convenience facade binding a database, a backend, and the scale |J|."""

    def __init__(self, db: Database, backend: DensityBackend, counts_or_scale):
        self.db = db
        self.backend = backend
        if isinstance(counts_or_scale, dict):
            self.scale = full_join_size(counts_or_scale[db.schema.root])
        elif isinstance(counts_or_scale, JoinCountTable):
            self.scale = full_join_size(counts_or_scale)
        else:
            self.scale = int(counts_or_scale)

    def build_plan(self, query: QuerySpec) -> InferencePlan:
        return build_plan(self.db, self.backend, self.scale, query)

    def estimate(self, query: QuerySpec | InferencePlan, budget: int | str = 1000, seed: int = 0) -> Estimate:
        plan = query if isinstance(query, InferencePlan) else self.build_plan(query)
        return estimate(plan, self.backend, budget, seed)

    def estimate_batch(self, queries, budget: int | str = 1000, seed: int = 0) -> list:
        """Independent estimates in query order; per-query failures are collected."""
        out = []
        for i, q in enumerate(queries):
            try:
                out.append(self.estimate(q, budget, seed=seed + i if budget != EXHAUSTIVE else seed))
            except Exception as exc:  # noqa: BLE001 - collected, not fatal
                out.append(exc)
        return out
