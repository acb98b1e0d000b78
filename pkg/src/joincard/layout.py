"""Model-facing column layout of the full outer join.

Order: every content and join-key column of every table (tables and columns
in declared order), then one indicator column per table, then one fanout
column per join-key column.  Virtual columns are plain integer columns:
indicators take values {0, 1}; a fanout column's tokens index its sorted
set of possible occurrence counts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .counts import table_key_columns
from .ingest import Database, NULL_TOKEN

ROLE_BASE = "base"
ROLE_INDICATOR = "indicator"
ROLE_FANOUT = "fanout"


@dataclass(frozen=True)
class LayoutColumn:
    name: str
    table: str
    role: str
    source: str | None  # table column behind base/fanout columns
    domain: int
    values: tuple  # token -> value; None marks NULL

    def decode(self, token: int):
        return self.values[token]


@dataclass
class Layout:
    columns: list[LayoutColumn]

    def __post_init__(self):
        self._by_name = {c.name: i for i, c in enumerate(self.columns)}

    def __len__(self) -> int:
        return len(self.columns)

    def index(self, name: str) -> int:
        return self._by_name[name]

    def base_index(self, table: str, column: str) -> int:
        return self._by_name[f"{table}.{column}"]

    def indicator_index(self, table: str) -> int:
        return self._by_name[indicator_name(table)]

    def fanout_index(self, table: str, column: str) -> int:
        return self._by_name[fanout_name(table, column)]

    @property
    def domains(self) -> list[int]:
        return [c.domain for c in self.columns]

    def digest(self) -> str:
        doc = [[c.name, c.table, c.role, c.source, c.domain, list(c.values)] for c in self.columns]
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "columns": [
                {
                    "name": c.name,
                    "table": c.table,
                    "role": c.role,
                    "source": c.source,
                    "domain": c.domain,
                    "values": list(c.values),
                }
                for c in self.columns
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Layout":
        cols = [
            LayoutColumn(
                name=c["name"],
                table=c["table"],
                role=c["role"],
                source=c["source"],
                domain=int(c["domain"]),
                values=tuple(c["values"]),
            )
            for c in doc["columns"]
        ]
        return cls(cols)


def indicator_name(table: str) -> str:
    return f"__in__:{table}"


def fanout_name(table: str, column: str) -> str:
    return f"__fanout__:{table}.{column}"


def build_layout(db: Database) -> Layout:
    cols: list[LayoutColumn] = []
    for t in db.schema.tables:
        store = db.stores[t.name]
        for c in t.columns:
            d = store.dictionaries[c.name]
            cols.append(
                LayoutColumn(
                    name=f"{t.name}.{c.name}",
                    table=t.name,
                    role=ROLE_BASE,
                    source=c.name,
                    domain=d.size,
                    values=(None, *d.values),
                )
            )
    for t in db.schema.tables:
        cols.append(
            LayoutColumn(
                name=indicator_name(t.name),
                table=t.name,
                role=ROLE_INDICATOR,
                source=None,
                domain=2,
                values=(0, 1),
            )
        )
    for t in db.schema.tables:
        for c in table_key_columns(db, t.name):
            idx = db.index(t.name, c)
            counts = sorted(set(idx.counts[1:].tolist()) | {1})
            cols.append(
                LayoutColumn(
                    name=fanout_name(t.name, c),
                    table=t.name,
                    role=ROLE_FANOUT,
                    source=c,
                    domain=len(counts),
                    values=tuple(counts),
                )
            )
    return Layout(cols)


def rows_from_slots(db: Database, layout: Layout, slots: dict[str, np.ndarray]) -> np.ndarray:
    """Assemble layout-token rows from per-table row choices (-1 marks NULL slots)."""
    n = len(next(iter(slots.values())))
    out = np.zeros((n, len(layout)), dtype=np.int64)
    for j, col in enumerate(layout.columns):
        rows = slots[col.table]
        present = rows >= 0
        safe = np.where(present, rows, 0)
        if col.role == ROLE_BASE:
            toks = db.stores[col.table].tokens[col.source][safe]
            toks = np.where(present, toks, NULL_TOKEN)
        elif col.role == ROLE_INDICATOR:
            toks = present.astype(np.int64)
        else:
            key_toks = db.stores[col.table].tokens[col.source][safe]
            key_toks = np.where(present, key_toks, NULL_TOKEN)
            counts = db.index(col.table, col.source).fanout_array[key_toks]
            toks = np.searchsorted(np.asarray(col.values), counts)
        out[:, j] = toks
    return out


def decode_rows(layout: Layout, rows: np.ndarray) -> list[tuple]:
    return [
        tuple(layout.columns[j].decode(int(rows[i, j])) for j in range(len(layout)))
        for i in range(rows.shape[0])
    ]


def write_rows_csv(layout: Layout, rows: np.ndarray, fileobj) -> None:
    import csv

    w = csv.writer(fileobj)
    w.writerow([c.name for c in layout.columns])
    for tup in decode_rows(layout, rows):
        w.writerow(["" if v is None else v for v in tup])
