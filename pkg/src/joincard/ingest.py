"""CSV ingestion into dictionary-encoded columnar stores with join-key indexes.

Every column is encoded into dense integer tokens.  Token 0 is reserved for
NULL in every dictionary; non-null tokens are assigned in value order, so a
range predicate in value space is exactly a token-range predicate.  CSV
dialect: UTF-8, comma separated, double-quote escaping, mandatory header
row, empty field = NULL.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import container
from .schema import JoinSchema, TableDef, load_schema_config, schema_from_dict, schema_to_dict

NULL_TOKEN = 0

SNAPSHOT_MAGIC = b"JCSN"


class IngestError(ValueError):
    pass


class MissingColumnError(IngestError):
    pass


class TypeParseError(IngestError):
    pass


@dataclass
class Dictionary:
    """Order-preserving bijection between distinct non-null values and tokens."""

    column: str
    values: list  # sorted distinct non-null values; token = position + 1

    def __post_init__(self):
        self._lookup = {v: i + 1 for i, v in enumerate(self.values)}
        self._int_values = None
        if self.values and isinstance(self.values[0], int):
            self._int_values = np.asarray(self.values, dtype=np.int64)

    @classmethod
    def from_iterable(cls, column: str, values) -> "Dictionary":
        distinct = {v for v in values if v is not None}
        return cls(column, sorted(distinct))

    @property
    def size(self) -> int:
        """Token domain size, including the NULL token."""
        return len(self.values) + 1

    def encode(self, value):
        """Token for a value; None for NULL, raises KeyError when absent."""
        if value is None:
            return NULL_TOKEN
        return self._lookup[value]

    def try_encode(self, value):
        if value is None:
            return NULL_TOKEN
        return self._lookup.get(value)

    def decode(self, token: int):
        if token == NULL_TOKEN:
            return None
        return self.values[token - 1]

    def encode_array(self, values) -> np.ndarray:
        out = np.zeros(len(values), dtype=np.int64)
        if self._int_values is not None and not any(v is None for v in values):
            arr = np.asarray(values, dtype=np.int64)
            pos = np.searchsorted(self._int_values, arr)
            if np.any(pos >= len(self._int_values)) or np.any(self._int_values[pos] != arr):
                raise KeyError(f"{self.column}: value outside dictionary")
            return pos.astype(np.int64) + 1
        for i, v in enumerate(values):
            out[i] = NULL_TOKEN if v is None else self._lookup[v]
        return out

    def value_count_below(self, value) -> int:
        """Number of dictionary values strictly less than `value`."""
        import bisect

        return bisect.bisect_left(self.values, value)

    def value_count_at_most(self, value) -> int:
        import bisect

        return bisect.bisect_right(self.values, value)


@dataclass
class ColumnStore:
    """Row-aligned token arrays for one table."""

    table: str
    n_rows: int
    tokens: dict[str, np.ndarray]
    dictionaries: dict[str, Dictionary]

    @classmethod
    def from_values(cls, table_def: TableDef, columns: dict[str, list]) -> "ColumnStore":
        missing = [c.name for c in table_def.columns if c.name not in columns]
        if missing:
            raise MissingColumnError(f"table {table_def.name!r}: missing columns {missing}")
        lengths = {len(columns[c.name]) for c in table_def.columns}
        if len(lengths) > 1:
            raise IngestError(f"table {table_def.name!r}: ragged columns {sorted(lengths)}")
        n = lengths.pop() if lengths else 0
        dicts = {}
        tokens = {}
        for cdef in table_def.columns:
            vals = columns[cdef.name]
            d = Dictionary.from_iterable(cdef.name, vals)
            dicts[cdef.name] = d
            tokens[cdef.name] = d.encode_array(vals)
        return cls(table=table_def.name, n_rows=n, tokens=tokens, dictionaries=dicts)

    def restricted(self, mask: np.ndarray) -> "ColumnStore":
        """Row subset that keeps the original dictionaries (and token meanings)."""
        toks = {c: arr[mask] for c, arr in self.tokens.items()}
        n = int(next(iter(toks.values())).shape[0]) if toks else 0
        return ColumnStore(self.table, n, toks, self.dictionaries)

    def decode_column(self, column: str) -> list:
        d = self.dictionaries[column]
        return [d.decode(int(t)) for t in self.tokens[column]]


def _parse_field(raw: str, value_type: str, where: str):
    if raw == "":
        return None
    if value_type == "integer":
        try:
            return int(raw)
        except ValueError:
            raise TypeParseError(f"{where}: cannot parse {raw!r} as integer") from None
    return raw


def load_table(path, table_def: TableDef) -> ColumnStore:
    """Load one CSV file into a dictionary-encoded store."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumnError(f"{path}: empty file, expected a header row") from None
        declared = [c.name for c in table_def.columns]
        missing = [c for c in declared if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: header lacks declared columns {missing}")
        extra = [c for c in header if c not in declared]
        if extra:
            raise IngestError(f"{path}: header has undeclared columns {extra}")
        pos = {c: header.index(c) for c in declared}
        types = {c.name: c.value_type for c in table_def.columns}
        columns: dict[str, list] = {c: [] for c in declared}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for c in declared:
                columns[c].append(_parse_field(row[pos[c]], types[c], f"{path}:{lineno}:{c}"))
    return ColumnStore.from_values(table_def, columns)


@dataclass
class KeyIndex:
    """Postings from join-key token to sorted row positions; NULLs excluded."""

    table: str
    column: str
    sorted_rows: np.ndarray  # rows holding non-null tokens, grouped by token
    starts: np.ndarray  # len = domain + 1; postings(t) = sorted_rows[starts[t]:starts[t+1]]

    def postings(self, token: int) -> np.ndarray:
        return self.sorted_rows[self.starts[token] : self.starts[token + 1]]

    def frequency(self, token: int) -> int:
        return int(self.starts[token + 1] - self.starts[token])

    @property
    def counts(self) -> np.ndarray:
        return (self.starts[1:] - self.starts[:-1]).astype(np.int64)

    @property
    def fanout_array(self) -> np.ndarray:
        """Per-token fanout with the NULL convention baked in (token 0 -> 1)."""
        c = self.counts.copy()
        c[NULL_TOKEN] = 1
        return c


def build_index(store: ColumnStore, key_column: str) -> KeyIndex:
    tokens = store.tokens[key_column]
    domain = store.dictionaries[key_column].size
    counts = np.bincount(tokens, minlength=domain)
    counts[NULL_TOKEN] = 0
    starts = np.zeros(domain + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    nonnull = np.flatnonzero(tokens != NULL_TOKEN)
    order = np.argsort(tokens[nonnull], kind="stable")
    return KeyIndex(store.table, key_column, nonnull[order].astype(np.int64), starts)


def fanout(index: KeyIndex, token: int) -> int:
    """Occurrences of the token's value in the key column; 1 for NULL."""
    if token == NULL_TOKEN:
        return 1
    return index.frequency(token)


@dataclass
class Database:
    """A loaded instance: schema, per-table stores, and join-key indexes."""

    schema: JoinSchema
    stores: dict[str, ColumnStore]
    indexes: dict[tuple[str, str], KeyIndex]
    _bridges: dict = field(default_factory=dict, repr=False)

    @classmethod
    def assemble(cls, schema: JoinSchema, stores: dict[str, ColumnStore]) -> "Database":
        for t in schema.tables:
            if t.name not in stores:
                raise MissingColumnError(f"no store loaded for table {t.name!r}")
        indexes = {}
        for t in schema.tables:
            for col in t.join_key_columns:
                indexes[(t.name, col)] = build_index(stores[t.name], col)
        return cls(schema=schema, stores=stores, indexes=indexes)

    @classmethod
    def from_values(cls, schema: JoinSchema, data: dict[str, dict[str, list]]) -> "Database":
        stores = {
            t.name: ColumnStore.from_values(t, data.get(t.name, {})) for t in schema.tables
        }
        return cls.assemble(schema, stores)

    @classmethod
    def from_csv_dir(cls, schema: JoinSchema, data_dir) -> "Database":
        import os

        stores = {}
        for t in schema.tables:
            stores[t.name] = load_table(os.path.join(data_dir, f"{t.name}.csv"), t)
        return cls.assemble(schema, stores)

    def index(self, table: str, column: str) -> KeyIndex:
        return self.indexes[(table, column)]

    def dictionary(self, table: str, column: str) -> Dictionary:
        return self.stores[table].dictionaries[column]

    def bridge(self, from_table: str, from_col: str, to_table: str, to_col: str) -> np.ndarray:
        """Token translation array: token of from_col -> matching token of to_col (0 if absent)."""
        key = (from_table, from_col, to_table, to_col)
        if key not in self._bridges:
            src = self.dictionary(from_table, from_col)
            dst = self.dictionary(to_table, to_col)
            out = np.zeros(src.size, dtype=np.int64)
            for tok, v in enumerate(src.values, start=1):
                out[tok] = dst.try_encode(v) or 0
            self._bridges[key] = out
        return self._bridges[key]

    def restricted(self, masks: dict[str, np.ndarray]) -> "Database":
        """Row-subset view with unchanged dictionaries; indexes are rebuilt."""
        stores = {}
        for name, store in self.stores.items():
            if name in masks:
                stores[name] = store.restricted(masks[name])
            else:
                stores[name] = store
        return Database.assemble(self.schema, stores)


# --- snapshot persistence -------------------------------------------------


def save_database(db: Database, path, counts=None) -> None:
    """Write a reloadable snapshot (dictionaries + columns + indexes, optional counts)."""
    sections: list[tuple[str, bytes]] = []
    meta = {
        "kind": "snapshot",
        "schema": schema_to_dict(db.schema),
        "rows": {t: db.stores[t].n_rows for t in db.stores},
    }
    sections.append(("meta", container.pack_json(meta)))
    for t in db.schema.tables:
        store = db.stores[t.name]
        for c in t.columns:
            sections.append((f"dict:{t.name}.{c.name}", container.pack_json(store.dictionaries[c.name].values)))
            sections.append((f"col:{t.name}.{c.name}", container.pack_array(store.tokens[c.name])))
    for (tname, cname), idx in db.indexes.items():
        sections.append((f"idxrows:{tname}.{cname}", container.pack_array(idx.sorted_rows)))
        sections.append((f"idxstarts:{tname}.{cname}", container.pack_array(idx.starts)))
    if counts is not None:
        from .counts import pack_counts

        sections.extend(pack_counts(counts))
    container.write_container(path, SNAPSHOT_MAGIC, sections)


def load_database(path):
    """Load a snapshot; returns (Database, counts-or-None)."""
    sections = dict_sections = container.read_container(path, SNAPSHOT_MAGIC)
    by_tag = {tag: payload for tag, payload in dict_sections}
    meta = container.unpack_json(by_tag["meta"])
    schema = schema_from_dict(meta["schema"])
    stores = {}
    for t in schema.tables:
        tokens = {}
        dicts = {}
        for c in t.columns:
            values = container.unpack_json(by_tag[f"dict:{t.name}.{c.name}"])
            dicts[c.name] = Dictionary(c.name, values)
            tokens[c.name] = container.unpack_array(by_tag[f"col:{t.name}.{c.name}"])
        stores[t.name] = ColumnStore(t.name, meta["rows"][t.name], tokens, dicts)
    indexes = {}
    for t in schema.tables:
        for col in t.join_key_columns:
            indexes[(t.name, col)] = KeyIndex(
                t.name,
                col,
                container.unpack_array(by_tag[f"idxrows:{t.name}.{col}"]),
                container.unpack_array(by_tag[f"idxstarts:{t.name}.{col}"]),
            )
    db = Database(schema=schema, stores=stores, indexes=indexes)
    counts = None
    if any(tag.startswith("jct:") for tag in by_tag):
        from .counts import unpack_counts

        counts = unpack_counts(db, sections)
    return db, counts
