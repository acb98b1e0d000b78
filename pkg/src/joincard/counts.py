"""Exact join-count tables via bottom-up dynamic programming over the schema tree.

For a table T with a child table K joined on T.pc = K.kc, the weight of a
tuple t in T is the product over child edges of the summed weights of t's
join partners; tuples with no partner on an edge take factor 1 (the child
subtree is NULL-padded).  Separately, each table carries a NULL-descend
weight z: the number of full-join rows in its subtree whose slot for the
table itself is NULL but some descendant slot is not.  The all-NULL
combination is excluded, so |J| = sum of root tuple weights + z(root).

All arithmetic is exact.  The fast path runs in int64; when a bound check
shows a risk of exceeding 2^62 the affected table falls back to unbounded
Python integers, and weights beyond 2^128 raise WeightOverflowError.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .ingest import Database, NULL_TOKEN

WEIGHT_LIMIT = 1 << 128
_INT64_SAFE = 1 << 62


class SchemaMismatchError(ValueError):
    """An edge key lacks an index or a store."""


class WeightOverflowError(OverflowError):
    """A join-count weight exceeded the supported 128-bit range."""


def _as_object(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == object:
        return arr
    return arr.astype(object)


def _max_int(arr: np.ndarray) -> int:
    if arr.size == 0:
        return 0
    return int(max(arr)) if arr.dtype == object else int(arr.max())


def _checked_limit(value: int, what: str) -> None:
    if value >= WEIGHT_LIMIT:
        raise WeightOverflowError(f"{what} exceeds 2^128")


def _grouped_sum(tokens: np.ndarray, weights: np.ndarray, domain: int) -> np.ndarray:
    """Per-token sums of row weights, exact."""
    if weights.dtype != object and _max_int(weights) * max(len(weights), 1) < _INT64_SAFE:
        acc = np.zeros(domain, dtype=np.int64)
        np.add.at(acc, tokens, weights)
        return acc
    acc = np.zeros(domain, dtype=object)
    for t, w in zip(tokens.tolist(), weights.tolist()):
        acc[t] += w
    _checked_limit(_max_int(acc), "grouped join-count sum")
    return acc


def _checked_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.dtype != object and b.dtype != object and _max_int(a) * _max_int(b) < _INT64_SAFE:
        return a * b
    out = _as_object(a) * _as_object(b)
    _checked_limit(_max_int(out), "join-count product")
    return out


def _checked_sum(arr: np.ndarray) -> int:
    if arr.size == 0:
        return 0
    if arr.dtype != object and _max_int(arr) * len(arr) < _INT64_SAFE:
        return int(arr.sum())
    total = sum(arr.tolist())
    _checked_limit(total, "join-count sum")
    return int(total)


@dataclass
class JoinCountTable:
    """Per-table join-key weights plus the virtual NULL entry.

    `row_weights` holds the weight of every physical row (rows sharing a key
    tuple share the weight).  `null_descend` is z as described in the module
    docstring; the rendered NULL entry follows the convention that a NULL
    tuple participating only as padding shows weight 1.
    """

    table: str
    key_columns: tuple[str, ...]
    row_weights: np.ndarray
    null_descend: int
    _key_tokens: tuple[np.ndarray, ...] = field(repr=False, default=())
    _weights: dict | None = field(repr=False, default=None)

    @property
    def null_entry(self) -> int:
        return max(1, self.null_descend)

    @property
    def row_weight_sum(self) -> int:
        return _checked_sum(self.row_weights)

    @property
    def weights(self) -> dict[tuple[int, ...], int]:
        """Weight per distinct key-token tuple (lazily grouped)."""
        if self._weights is None:
            grouped: dict[tuple[int, ...], int] = {}
            cols = [t.tolist() for t in self._key_tokens]
            wlist = self.row_weights.tolist()
            for i, w in enumerate(wlist):
                key = tuple(col[i] for col in cols)
                prev = grouped.setdefault(key, int(w))
                if prev != int(w):
                    raise AssertionError(f"{self.table}: key {key} maps to conflicting weights")
            self._weights = grouped
        return self._weights

    def value_map(self, db: Database) -> dict:
        """Weights keyed by decoded key values; the virtual NULL entry keys on None."""
        dicts = [db.dictionary(self.table, c) for c in self.key_columns]
        out = {}
        for key, w in self.weights.items():
            vals = tuple(d.decode(t) for d, t in zip(dicts, key))
            out[vals if len(vals) != 1 else vals[0]] = w
        out[None] = self.null_entry
        return out


@dataclass(frozen=True)
class FullJoinStats:
    total_rows: int


def table_key_columns(db: Database, table: str) -> tuple[str, ...]:
    """Join-key columns of a table that sit on an incident edge, in declared order."""
    used = set()
    for e, _ in db.schema.adjacency(table):
        used.add(e.column_on(table))
    return tuple(c.name for c in db.schema.table(table).columns if c.name in used)


def compute_join_counts(db: Database) -> dict[str, JoinCountTable]:
    """Bottom-up weights for every table; linear in the total row count."""
    schema = db.schema
    order = schema.tables_root_first()
    roww: dict[str, np.ndarray] = {
        t: np.ones(db.stores[t].n_rows, dtype=np.int64) for t in order
    }
    z: dict[str, int] = {t: 0 for t in order}
    for parent in reversed(order):
        pstore = db.stores[parent]
        for edge, child in schema.children_of(parent):
            pc = edge.column_on(parent)
            kc = edge.column_on(child)
            if (child, kc) not in db.indexes:
                raise SchemaMismatchError(f"no index for edge key {child}.{kc}")
            if pc not in pstore.tokens:
                raise SchemaMismatchError(f"no store column for edge key {parent}.{pc}")
            kc_tokens = db.stores[child].tokens[kc]
            child_domain = db.dictionary(child, kc).size
            partner_sums = _grouped_sum(kc_tokens, roww[child], child_domain)
            partner_sums[NULL_TOKEN] = 0  # NULL keys never join
            fwd = db.bridge(parent, pc, child, kc)
            pc_tokens = pstore.tokens[pc]
            svals = partner_sums[fwd[pc_tokens]]
            # A zero partner sum means no partner rows (absent value, NULL key,
            # or a dictionary entry with no surviving rows): NULL-pad, factor 1.
            factors = np.where(svals > 0, svals, 1)
            if partner_sums.dtype == object:
                factors = _as_object(factors)
            roww[parent] = _checked_mul(roww[parent], factors)
            rev = db.bridge(child, kc, parent, pc)
            parent_key_counts = db.index(parent, pc).counts
            unmatched = parent_key_counts[rev[kc_tokens]] == 0
            z[parent] += _checked_sum(roww[child][unmatched]) + z[child]
            _checked_limit(z[parent], "null-descend weight")
    result = {}
    for t in order:
        keys = table_key_columns(db, t)
        result[t] = JoinCountTable(
            table=t,
            key_columns=keys,
            row_weights=roww[t],
            null_descend=z[t],
            _key_tokens=tuple(db.stores[t].tokens[c] for c in keys),
        )
    return result


def full_join_size(root_counts: JoinCountTable) -> int:
    """Exact row count of the full outer join, NULL-padded rows included."""
    return root_counts.row_weight_sum + root_counts.null_descend


# --- snapshot serialization ------------------------------------------------


def pack_counts(counts: dict[str, JoinCountTable]) -> list[tuple[str, bytes]]:
    sections = []
    for name, jct in counts.items():
        meta = {
            "key_columns": list(jct.key_columns),
            "null_descend": str(jct.null_descend),
        }
        sections.append((f"jct:{name}", container.pack_json(meta)))
        rw = jct.row_weights
        if rw.dtype == object:
            sections.append((f"jctwbig:{name}", container.pack_json([str(w) for w in rw.tolist()])))
        else:
            sections.append((f"jctw:{name}", container.pack_array(rw)))
    return sections


def unpack_counts(db: Database, sections: list[tuple[str, bytes]]) -> dict[str, JoinCountTable]:
    metas = {}
    weights = {}
    for tag, payload in sections:
        if tag.startswith("jct:"):
            metas[tag[4:]] = container.unpack_json(payload)
        elif tag.startswith("jctwbig:"):
            weights[tag[8:]] = np.array(
                [int(w) for w in container.unpack_json(payload)], dtype=object
            )
        elif tag.startswith("jctw:"):
            weights[tag[5:]] = container.unpack_array(payload)
    out = {}
    for name, meta in metas.items():
        keys = tuple(meta["key_columns"])
        out[name] = JoinCountTable(
            table=name,
            key_columns=keys,
            row_weights=weights[name],
            null_descend=int(meta["null_descend"]),
            _key_tokens=tuple(db.stores[name].tokens[c] for c in keys),
        )
    return out
