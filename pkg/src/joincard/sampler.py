"""Uniform i.i.d. samples of the full outer join, drawn without materializing it.

Sampling walks the schema tree top-down.  The root tuple is drawn with
probability proportional to its join-count weight (the NULL root with
weight z); each descendant is drawn among the rows joining its parent slot,
again weighted by join counts, and slots without a partner become NULL for
the whole subtree below.  All weighted choices use exact integer arithmetic
over cumulative-weight arrays.

Reproducibility: the stream is partitioned into fixed-size chunks and chunk
i is generated by a counter-based generator keyed on (seed, i).  A sample's
value therefore depends only on the seed and its absolute position, so any
worker count, batch size, or thread schedule yields the same rows.
"""

from __future__ import annotations

import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .counts import JoinCountTable, _checked_sum
from .ingest import Database, NULL_TOKEN
from .layout import Layout, build_layout, rows_from_slots

CHUNK = 1024
_INT64_SAFE = 1 << 62


class IndexMissError(RuntimeError):
    """Internal inconsistency between counts and indexes."""


@dataclass(frozen=True)
class SamplerConfig:
    batch_size: int = 2048
    worker_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


def _rand_below_scalar(rng: np.random.Generator, high: int) -> int:
    """Exact uniform integer in [0, high) for arbitrarily large high."""
    if high <= _INT64_SAFE:
        return int(rng.integers(0, high))
    bits = high.bit_length()
    words = -(-bits // 32)
    while True:
        val = 0
        for w in rng.integers(0, 1 << 32, size=words, dtype=np.int64).tolist():
            val = (val << 32) | int(w)
        val &= (1 << bits) - 1
        if val < high:
            return val


def _rand_below(rng: np.random.Generator, high: int, size: int) -> np.ndarray:
    if high <= _INT64_SAFE:
        return rng.integers(0, high, size=size, dtype=np.int64)
    return np.array([_rand_below_scalar(rng, high) for _ in range(size)], dtype=object)


def _rand_below_vec(rng: np.random.Generator, highs: np.ndarray) -> np.ndarray:
    if highs.dtype != object:
        return rng.integers(0, highs, dtype=np.int64)
    return np.array([_rand_below_scalar(rng, int(h)) for h in highs], dtype=object)


def _exact_cumsum(arr: np.ndarray) -> np.ndarray:
    if arr.dtype != object and _checked_sum(arr) < _INT64_SAFE:
        return np.cumsum(arr.astype(np.int64))
    return np.cumsum(arr.astype(object))


@dataclass
class _Branch:
    kind: str  # "rows" | "null"
    child: str
    weight: int
    rows: np.ndarray | None = None
    cum: np.ndarray | None = None


@dataclass
class _ChildTable:
    parent: str
    parent_column: str
    key_column: str
    bridge: np.ndarray
    flat_rows: np.ndarray
    flat_cum: np.ndarray
    seg_base: np.ndarray
    seg_total: np.ndarray


class JoinSampler:
    """Simple random samples (with replacement) of the full outer join."""

    def __init__(
        self,
        db: Database,
        counts: dict[str, JoinCountTable],
        config: SamplerConfig = SamplerConfig(),
        layout: Layout | None = None,
    ):
        self.db = db
        self.counts = counts
        self.config = config
        self.layout = layout if layout is not None else build_layout(db)
        self.order = db.schema.tables_root_first()
        root = db.schema.root
        self.total_normal = counts[root].row_weight_sum
        self.z_root = counts[root].null_descend
        self.total = self.total_normal + self.z_root
        self.root_cum = _exact_cumsum(counts[root].row_weights)
        self._children: dict[str, _ChildTable] = {}
        self._branches: dict[str, list[_Branch]] = {t: [] for t in self.order}
        for table in self.order:
            for edge, child in db.schema.children_of(table):
                pc = edge.column_on(table)
                kc = edge.column_on(child)
                idx = db.index(child, kc)
                w = counts[child].row_weights[idx.sorted_rows]
                flat_cum = _exact_cumsum(w) if len(w) else np.zeros(0, dtype=np.int64)
                cum0 = np.concatenate([[0], flat_cum]) if len(w) else np.zeros(1, dtype=np.int64)
                seg_base = cum0[idx.starts[:-1]]
                seg_total = cum0[idx.starts[1:]] - seg_base
                self._children[child] = _ChildTable(
                    parent=table,
                    parent_column=pc,
                    key_column=kc,
                    bridge=db.bridge(table, pc, child, kc),
                    flat_rows=idx.sorted_rows,
                    flat_cum=flat_cum,
                    seg_base=seg_base,
                    seg_total=seg_total,
                )
                rev = db.bridge(child, kc, table, pc)
                parent_key_counts = db.index(table, pc).counts
                unmatched = np.flatnonzero(
                    parent_key_counts[rev[db.stores[child].tokens[kc]]] == 0
                )
                u_total = _checked_sum(counts[child].row_weights[unmatched])
                if u_total > 0:
                    self._branches[table].append(
                        _Branch(
                            kind="rows",
                            child=child,
                            weight=u_total,
                            rows=unmatched,
                            cum=_exact_cumsum(counts[child].row_weights[unmatched]),
                        )
                    )
                if counts[child].null_descend > 0:
                    self._branches[table].append(
                        _Branch(kind="null", child=child, weight=counts[child].null_descend)
                    )
        self._cursor = 0

    # -- drawing ------------------------------------------------------------

    def draw_keys(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        """Per-table slot choices for n independent full-join samples.

        A slot is the index of the concrete row drawn for that table (which
        carries its join-key tokens), or -1 when the slot is NULL-padded.
        """
        slots = {t: np.full(n, -1, dtype=np.int64) for t in self.order}
        if n == 0:
            return slots
        if self.total <= 0:
            raise IndexMissError("cannot sample from an empty full join")
        root = self.order[0]
        u = _rand_below(rng, self.total, n)
        normal = u < self.total_normal
        if normal.any():
            picks = np.searchsorted(self.root_cum, u[normal], side="right")
            slots[root][np.flatnonzero(normal)] = picks
        for i in np.flatnonzero(~normal):
            self._descend(slots, int(i), int(u[i]) - self.total_normal)
        for child in self.order[1:]:
            info = self._children[child]
            prow = slots[info.parent]
            todo = np.flatnonzero((slots[child] == -1) & (prow >= 0))
            if todo.size == 0:
                continue
            ptok = self.db.stores[info.parent].tokens[info.parent_column][prow[todo]]
            kt = info.bridge[ptok]
            # Zero segment total means no partner rows; the subtree stays NULL.
            live = info.seg_total[kt] > 0
            sel = todo[live]
            if sel.size == 0:
                continue
            ktt = kt[live]
            r = _rand_below_vec(rng, info.seg_total[ktt])
            pos = np.searchsorted(info.flat_cum, info.seg_base[ktt] + r, side="right")
            slots[child][sel] = info.flat_rows[pos]
        return slots

    def _descend(self, slots, i: int, r: int) -> None:
        # The NULL-root remainder r < z(table) walks down to the one child
        # subtree that carries the row's non-NULL content.
        table = self.db.schema.root
        while True:
            branch = None
            for br in self._branches[table]:
                if r < br.weight:
                    branch = br
                    break
                r -= br.weight
            if branch is None:
                raise IndexMissError(f"null-descend weight mismatch at table {table!r}")
            if branch.kind == "rows":
                pos = int(np.searchsorted(branch.cum, r, side="right"))
                slots[branch.child][i] = branch.rows[pos]
                return
            table = branch.child

    def key_tokens(self, slots: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Join-key token matrix per table for drawn slots (NULL_TOKEN when padded)."""
        out = {}
        for t in self.order:
            cols = self.counts[t].key_columns
            rows = slots[t]
            safe = np.where(rows >= 0, rows, 0)
            mat = np.zeros((len(rows), len(cols)), dtype=np.int64)
            for j, c in enumerate(cols):
                toks = self.db.stores[t].tokens[c][safe]
                mat[:, j] = np.where(rows >= 0, toks, NULL_TOKEN)
            out[t] = mat
        return out

    def complete_rows(self, slots: dict[str, np.ndarray]) -> np.ndarray:
        """Layout-token rows (content, indicators, fanouts) for drawn slots."""
        return rows_from_slots(self.db, self.layout, slots)

    # -- batched, reproducible stream ----------------------------------------

    def _chunk_rows(self, chunk_idx: int) -> np.ndarray:
        seq = np.random.SeedSequence(entropy=self.config.seed, spawn_key=(chunk_idx,))
        rng = np.random.Generator(np.random.Philox(seq))
        return self.complete_rows(self.draw_keys(rng, CHUNK))

    def rows_at(self, start: int, stop: int) -> np.ndarray:
        """Samples for absolute stream positions [start, stop)."""
        if stop <= start:
            return np.zeros((0, len(self.layout)), dtype=np.int64)
        first = start // CHUNK
        last = (stop - 1) // CHUNK
        chunks = list(range(first, last + 1))
        if self.config.worker_count > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.config.worker_count) as pool:
                parts = list(pool.map(self._chunk_rows, chunks))
        else:
            parts = [self._chunk_rows(c) for c in chunks]
        rows = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
        base = first * CHUNK
        return rows[start - base : stop - base]

    def sample_batch(self, n: int | None = None) -> np.ndarray:
        n = self.config.batch_size if n is None else n
        start = self._cursor
        self._cursor += n
        return self.rows_at(start, start + n)

    def reset(self) -> None:
        self._cursor = 0

    def batches(self, n_batches: int, batch_size: int | None = None, prefetch: int = 2):
        """Generator of sample batches, produced ahead by a bounded queue."""
        q: queue.Queue = queue.Queue(maxsize=prefetch)

        def produce():
            for _ in range(n_batches):
                q.put(self.sample_batch(batch_size))
            q.put(None)

        worker = threading.Thread(target=produce, daemon=True)
        worker.start()
        while True:
            item = q.get()
            if item is None:
                break
            yield item
        worker.join()
