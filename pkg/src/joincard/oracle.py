"""Brute-force ground truth at desk scale.

Materializes the full outer join of a small instance (pairwise, root first,
padding unmatched rows from either side), computes exact query cardinalities
by re-joining only the query's tables, and exposes the materialized join as
an exact conditional-distribution backend with zero approximation error.

Predicates are evaluated in value space here, independently of the token
encodings the estimator works in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factorization import FactorizationSpec
from .ingest import ColumnStore, Database, NULL_TOKEN
from .layout import Layout, build_layout, rows_from_slots
from .model import WILDCARD, DensityBackend
from .schema import Predicate, QuerySpec, validate_query

DEFAULT_ROW_CAP = 10_000_000


class TooLargeError(RuntimeError):
    """Materialization would exceed the configured row cap."""


def _group_offsets(rep: np.ndarray) -> np.ndarray:
    """Start offset of each group, repeated per group element."""
    if len(rep) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.repeat(np.concatenate([[0], np.cumsum(rep)[:-1]]), rep)


@dataclass
class MaterializedJoin:
    layout: Layout
    tables: list[str]  # column order of `slots`
    slots: np.ndarray  # (N, n_tables) row ids, -1 for NULL slots
    rows: np.ndarray  # (N, n_layout) layout tokens

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]


def materialize(db: Database, layout: Layout | None = None, cap: int = DEFAULT_ROW_CAP) -> MaterializedJoin:
    """Exact full outer join with NULL padding and virtual columns."""
    layout = layout if layout is not None else build_layout(db)
    order = db.schema.tables_root_first()
    root = order[0]
    cols: dict[str, np.ndarray] = {root: np.arange(db.stores[root].n_rows, dtype=np.int64)}
    for child in order[1:]:
        edge, parent = db.schema.parent_of(child)
        pc = edge.column_on(parent)
        kc = edge.column_on(child)
        idx = db.index(child, kc)
        bridge = db.bridge(parent, pc, child, kc)
        prow = cols[parent]
        safe = np.where(prow >= 0, prow, 0)
        ptok = np.where(prow >= 0, db.stores[parent].tokens[pc][safe], NULL_TOKEN)
        kt = bridge[ptok]
        cnt = idx.counts[kt]
        rep = np.maximum(cnt, 1)
        parent_key_counts = db.index(parent, pc).counts
        rev = db.bridge(child, kc, parent, pc)
        unmatched = np.flatnonzero(parent_key_counts[rev[db.stores[child].tokens[kc]]] == 0)
        new_n = int(rep.sum()) + unmatched.size
        if new_n > cap:
            raise TooLargeError(f"materialized join would hold {new_n} rows (cap {cap})")
        total = int(rep.sum())
        starts_rep = np.repeat(idx.starts[kt], rep)
        within = np.arange(total) - _group_offsets(rep)
        matched = np.repeat(cnt > 0, rep)
        child_col = np.full(total, -1, dtype=np.int64)
        child_col[matched] = idx.sorted_rows[(starts_rep + within)[matched]]
        pad = np.full(unmatched.size, -1, dtype=np.int64)
        for t in list(cols):
            cols[t] = np.concatenate([np.repeat(cols[t], rep), pad])
        cols[child] = np.concatenate([child_col, unmatched.astype(np.int64)])
    n = len(cols[root])
    slots = np.column_stack([cols[t] for t in order]) if n else np.zeros((0, len(order)), dtype=np.int64)
    rows = rows_from_slots(db, layout, cols)
    return MaterializedJoin(layout=layout, tables=order, slots=slots, rows=rows)


# --- exact query answers ----------------------------------------------------


def _decoded(store: ColumnStore, column: str) -> np.ndarray:
    d = store.dictionaries[column]
    return np.array([None, *d.values], dtype=object)


def _predicate_mask(db: Database, table: str, rows: np.ndarray, pred: Predicate) -> np.ndarray:
    _, col = pred.split()
    store = db.stores[table]
    vals = _decoded(store, col)[store.tokens[col][rows]]
    nonnull = vals != None  # noqa: E711  (element-wise against object array)
    out = np.zeros(len(rows), dtype=bool)
    if pred.op == "in":
        wanted = set(pred.value)
        out[nonnull] = [v in wanted for v in vals[nonnull]]
        return out
    import operator

    fn = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge, "=": operator.eq}[pred.op]
    out[nonnull] = [fn(v, pred.value) for v in vals[nonnull]]
    return out


def true_cardinality(db: Database, query: QuerySpec) -> int:
    """Exact result count of the query's inner join graph with its predicates."""
    validate_query(db.schema, query)
    selected = set(query.tables)
    order = [t for t in db.schema.tables_root_first() if t in selected]
    top = order[0]
    cols: dict[str, np.ndarray] = {top: np.arange(db.stores[top].n_rows, dtype=np.int64)}
    for child in order[1:]:
        edge, parent = db.schema.parent_of(child)
        pc = edge.column_on(parent)
        kc = edge.column_on(child)
        idx = db.index(child, kc)
        bridge = db.bridge(parent, pc, child, kc)
        ptok = db.stores[parent].tokens[pc][cols[parent]]
        kt = bridge[ptok]
        cnt = idx.counts[kt]
        total = int(cnt.sum())
        starts_rep = np.repeat(idx.starts[kt], cnt)
        within = np.arange(total) - _group_offsets(cnt)
        child_col = idx.sorted_rows[starts_rep + within]
        for t in list(cols):
            cols[t] = np.repeat(cols[t], cnt)
        cols[child] = child_col
    n = len(cols[top])
    if n == 0:
        return 0
    mask = np.ones(n, dtype=bool)
    for pred in query.predicates:
        table, _ = pred.split()
        mask &= _predicate_mask(db, table, cols[table], pred)
    return int(mask.sum())


# --- exact density backend ---------------------------------------------------


class EmpiricalBackend(DensityBackend):
    """Conditionals computed by exact counting over the materialized join."""

    def __init__(self, join: MaterializedJoin, factorization_bits: int = 0):
        self.join = join
        self.layout = join.layout
        self.fspec = FactorizationSpec.build(join.layout, factorization_bits)
        self.sub_rows = self.fspec.encode_rows(join.rows)

    def full_rows(self) -> np.ndarray:
        return self.join.rows

    def conditional_batch(self, column: int, prefix: np.ndarray) -> np.ndarray:
        d = self.fspec.sub_domains[column]
        col = self.sub_rows[:, column]
        out = np.empty((prefix.shape[0], d))
        for b in range(prefix.shape[0]):
            mask = np.ones(self.sub_rows.shape[0], dtype=bool)
            for j in range(column):
                pj = prefix[b, j]
                if pj != WILDCARD:
                    mask &= self.sub_rows[:, j] == pj
            sel = col[mask]
            if sel.size:
                out[b] = np.bincount(sel, minlength=d) / sel.size
            else:
                out[b] = 1.0 / d
        return out

    def log_likelihood(self, rows: np.ndarray) -> np.ndarray:
        sub = self.fspec.encode_rows(rows)
        n_all = self.sub_rows.shape[0]
        out = np.zeros(rows.shape[0])
        for b in range(rows.shape[0]):
            mask = np.ones(n_all, dtype=bool)
            logp = 0.0
            for j in range(self.fspec.n_subcolumns):
                prev = int(mask.sum())
                mask &= self.sub_rows[:, j] == sub[b, j]
                now = int(mask.sum())
                if now == 0:
                    logp = -np.inf
                    break
                logp += np.log(now / prev)
            out[b] = logp
        return out


def empirical_backend(join: MaterializedJoin, factorization_bits: int = 0) -> EmpiricalBackend:
    return EmpiricalBackend(join, factorization_bits)
