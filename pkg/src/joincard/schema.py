"""Join schemas: tables, equi-join edges, and query specifications.

A schema is a tree of tables connected by equi-join edges.  The declared
root table anchors the join-count recursion and the model's column order.
Queries select a connected subtree of the schema and attach per-column
predicates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import yaml

COLUMN_KINDS = ("content", "join_key")
VALUE_TYPES = ("integer", "string")
OPERATORS = ("<", ">", "<=", ">=", "=", "in")


class SchemaError(ValueError):
    """A schema or query violates a structural invariant."""


class DuplicateNameError(SchemaError):
    pass


class UnknownColumnError(SchemaError):
    pass


class CycleError(SchemaError):
    pass


class DisconnectedError(SchemaError):
    pass


class QueryNotSubtreeError(SchemaError):
    pass


class LiteralTypeError(SchemaError):
    pass


@dataclass(frozen=True)
class ColumnDef:
    name: str
    kind: str = "content"
    value_type: str = "integer"
    range_filterable: bool = False


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]

    def column(self, name: str) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumnError(f"table {self.name!r} has no column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def join_key_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.kind == "join_key")


@dataclass(frozen=True)
class JoinEdge:
    parent_table: str
    parent_column: str
    child_table: str
    child_column: str

    def column_on(self, table: str) -> str:
        if table == self.parent_table:
            return self.parent_column
        if table == self.child_table:
            return self.child_column
        raise KeyError(f"edge {self} does not touch table {table!r}")

    def other(self, table: str) -> str:
        if table == self.parent_table:
            return self.child_table
        if table == self.child_table:
            return self.parent_table
        raise KeyError(f"edge {self} does not touch table {table!r}")


@dataclass(frozen=True)
class Predicate:
    column: str  # qualified "table.column"
    op: str
    value: object

    def split(self) -> tuple[str, str]:
        table, _, col = self.column.partition(".")
        if not col:
            raise UnknownColumnError(f"predicate column {self.column!r} is not table-qualified")
        return table, col


@dataclass(frozen=True)
class QuerySpec:
    tables: tuple[str, ...]
    predicates: tuple[Predicate, ...] = ()

    @classmethod
    def make(cls, tables, predicates=()) -> "QuerySpec":
        preds = tuple(
            p if isinstance(p, Predicate) else Predicate(p[0], normalize_op(p[1]), p[2])
            for p in predicates
        )
        return cls(tuple(tables), preds)


def normalize_op(op: str) -> str:
    mapped = {"==": "=", "=<": "<=", "=>": ">="}.get(op, op.lower() if op.isalpha() else op)
    return mapped


@dataclass
class JoinSchema:
    tables: list[TableDef]
    edges: list[JoinEdge]
    root: str
    _adjacency: dict = field(default_factory=dict, repr=False)
    _parents: dict = field(default_factory=dict, repr=False)
    _order: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        validate_schema(self)
        adj: dict[str, list[tuple[JoinEdge, str]]] = {t.name: [] for t in self.tables}
        for e in self.edges:
            adj[e.parent_table].append((e, e.child_table))
            adj[e.child_table].append((e, e.parent_table))
        self._adjacency = adj
        # Rooted orientation, breadth first from the declared root.
        parents: dict[str, tuple[JoinEdge, str] | None] = {self.root: None}
        order = [self.root]
        frontier = [self.root]
        while frontier:
            nxt = []
            for t in frontier:
                for e, nb in adj[t]:
                    if nb not in parents:
                        parents[nb] = (e, t)
                        order.append(nb)
                        nxt.append(nb)
            frontier = nxt
        self._parents = parents
        self._order = order

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise UnknownColumnError(f"unknown table {name!r}")

    def has_table(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)

    def adjacency(self, table: str) -> list[tuple[JoinEdge, str]]:
        return self._adjacency[table]

    def parent_of(self, table: str) -> tuple[JoinEdge, str] | None:
        """Edge and parent table under the rooted orientation; None at the root."""
        return self._parents[table]

    def children_of(self, table: str) -> list[tuple[JoinEdge, str]]:
        out = []
        for e, nb in self._adjacency[table]:
            p = self._parents[nb]
            if p is not None and p[1] == table and p[0] is e:
                out.append((e, nb))
        return out

    def tables_root_first(self) -> list[str]:
        return list(self._order)

    def resolve(self, qualified: str) -> tuple[TableDef, ColumnDef]:
        table, _, col = qualified.partition(".")
        if not col:
            raise UnknownColumnError(f"column {qualified!r} is not table-qualified")
        tdef = self.table(table)
        return tdef, tdef.column(col)


def validate_schema(schema: JoinSchema) -> None:
    """Check structural invariants; raises on the first violated one."""
    names = [t.name for t in schema.tables]
    if len(set(names)) != len(names):
        dup = next(n for i, n in enumerate(names) if n in names[:i])
        raise DuplicateNameError(f"duplicate table name {dup!r}")
    for t in schema.tables:
        if not t.columns:
            raise SchemaError(f"table {t.name!r} declares no columns")
        cols = [c.name for c in t.columns]
        if len(set(cols)) != len(cols):
            dup = next(c for i, c in enumerate(cols) if c in cols[:i])
            raise DuplicateNameError(f"duplicate column {dup!r} in table {t.name!r}")
        for c in t.columns:
            if c.kind not in COLUMN_KINDS:
                raise SchemaError(f"{t.name}.{c.name}: unknown column kind {c.kind!r}")
            if c.value_type not in VALUE_TYPES:
                raise SchemaError(f"{t.name}.{c.name}: unknown value type {c.value_type!r}")
    if not any(t.name == schema.root for t in schema.tables):
        raise SchemaError(f"root table {schema.root!r} is not declared")

    by_name = {t.name: t for t in schema.tables}
    for e in schema.edges:
        for tname, cname in ((e.parent_table, e.parent_column), (e.child_table, e.child_column)):
            if tname not in by_name:
                raise UnknownColumnError(f"edge references unknown table {tname!r}")
            tdef = by_name[tname]
            if not tdef.has_column(cname):
                raise UnknownColumnError(f"edge references unknown column {tname}.{cname}")
            if tdef.column(cname).kind != "join_key":
                raise SchemaError(f"edge column {tname}.{cname} is not a join_key column")
        if e.parent_table == e.child_table:
            raise SchemaError(f"edge joins table {e.parent_table!r} with itself")
        pt = by_name[e.parent_table].column(e.parent_column).value_type
        ct = by_name[e.child_table].column(e.child_column).value_type
        if pt != ct:
            raise SchemaError(
                f"edge {e.parent_table}.{e.parent_column} = {e.child_table}.{e.child_column}"
                f" mixes value types {pt}/{ct}"
            )

    # Union-find over declared edges: a redundant union means a cycle.
    comp = {n: n for n in names}

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    for e in schema.edges:
        a, b = find(e.parent_table), find(e.child_table)
        if a == b:
            raise CycleError(
                f"edge {e.parent_table}.{e.parent_column} = {e.child_table}.{e.child_column}"
                " closes a cycle"
            )
        comp[a] = b
    roots = {find(n) for n in names}
    if len(roots) > 1:
        raise DisconnectedError(f"schema splits into {len(roots)} disconnected components")


def validate_query(schema: JoinSchema, query: QuerySpec) -> None:
    """Check that the query selects a connected subtree and predicates are well formed."""
    if not query.tables:
        raise QueryNotSubtreeError("query selects no tables")
    if len(set(query.tables)) != len(query.tables):
        raise QueryNotSubtreeError("query lists a table twice")
    for t in query.tables:
        if not schema.has_table(t):
            raise UnknownColumnError(f"query references unknown table {t!r}")
    selected = set(query.tables)
    seen = {query.tables[0]}
    frontier = [query.tables[0]]
    while frontier:
        t = frontier.pop()
        for _, nb in schema.adjacency(t):
            if nb in selected and nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    if seen != selected:
        raise QueryNotSubtreeError(
            f"tables {sorted(selected - seen)} are not connected to {query.tables[0]!r}"
        )
    for p in query.predicates:
        table, col = p.split()
        if table not in selected:
            raise UnknownColumnError(f"predicate on column {p.column!r} of unselected table")
        cdef = schema.table(table).column(col)
        if p.op not in OPERATORS:
            raise SchemaError(f"unsupported operator {p.op!r}")
        values = p.value if p.op == "in" else [p.value]
        if p.op == "in" and (not isinstance(p.value, (list, tuple)) or not p.value):
            raise LiteralTypeError(f"'in' predicate on {p.column} needs a non-empty list")
        for v in values:
            if cdef.value_type == "integer" and not (isinstance(v, int) and not isinstance(v, bool)):
                raise LiteralTypeError(f"{p.column} expects integer literals, got {v!r}")
            if cdef.value_type == "string" and not isinstance(v, str):
                raise LiteralTypeError(f"{p.column} expects string literals, got {v!r}")


def resolve_fanout_keys(schema: JoinSchema, query: QuerySpec) -> dict[str, str]:
    """Map every omitted table to its single downscaling join key.

    For each table outside the query, the key is that table's own join-key
    column on the first edge of the (unique) tree path toward the query
    subtree.
    """
    validate_query(schema, query)
    present = set(query.tables)
    result: dict[str, str] = {}
    visited = set(present)
    frontier = [t for t in schema.tables_root_first() if t in present]
    while frontier:
        nxt = []
        for t in frontier:
            for e, nb in schema.adjacency(t):
                if nb not in visited:
                    visited.add(nb)
                    result[nb] = f"{nb}.{e.column_on(nb)}"
                    nxt.append(nb)
        frontier = nxt
    return result


# --- schema config files ------------------------------------------------
#
# A schema config is a YAML document with exactly three top-level keys:
#   root:   name of the root table
#   tables: list of {name, columns}, each column being
#           {name, kind, value_type, range_filterable?}
#   edges:  list of "parent.column = child.column" strings
# Unknown keys anywhere are errors.

_EDGE_RE = re.compile(r"^\s*(\w+)\.(\w+)\s*=\s*(\w+)\.(\w+)\s*$")


def _require_keys(mapping: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(mapping, dict):
        raise SchemaError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(mapping)
    if missing:
        raise SchemaError(f"{where}: missing keys {sorted(missing)}")


def schema_from_dict(doc: dict) -> JoinSchema:
    _require_keys(doc, {"root", "tables", "edges"}, {"root", "tables"}, "schema config")
    tables = []
    for i, tdoc in enumerate(doc["tables"]):
        _require_keys(tdoc, {"name", "columns"}, {"name", "columns"}, f"tables[{i}]")
        cols = []
        for j, cdoc in enumerate(tdoc["columns"]):
            _require_keys(
                cdoc,
                {"name", "kind", "value_type", "range_filterable"},
                {"name"},
                f"tables[{i}].columns[{j}]",
            )
            cols.append(
                ColumnDef(
                    name=str(cdoc["name"]),
                    kind=cdoc.get("kind", "content"),
                    value_type=cdoc.get("value_type", "integer"),
                    range_filterable=bool(cdoc.get("range_filterable", False)),
                )
            )
        tables.append(TableDef(name=str(tdoc["name"]), columns=tuple(cols)))
    edges = []
    for spec in doc.get("edges") or []:
        m = _EDGE_RE.match(spec)
        if not m:
            raise SchemaError(f"bad edge spec {spec!r}, expected 'parent.col = child.col'")
        edges.append(JoinEdge(m.group(1), m.group(2), m.group(3), m.group(4)))
    return JoinSchema(tables=tables, edges=edges, root=str(doc["root"]))


def schema_to_dict(schema: JoinSchema) -> dict:
    return {
        "root": schema.root,
        "tables": [
            {
                "name": t.name,
                "columns": [
                    {
                        "name": c.name,
                        "kind": c.kind,
                        "value_type": c.value_type,
                        "range_filterable": c.range_filterable,
                    }
                    for c in t.columns
                ],
            }
            for t in schema.tables
        ],
        "edges": [
            f"{e.parent_table}.{e.parent_column} = {e.child_table}.{e.child_column}"
            for e in schema.edges
        ],
    }


def parse_schema_config(text: str) -> JoinSchema:
    doc = yaml.safe_load(text)
    return schema_from_dict(doc)


def load_schema_config(path) -> JoinSchema:
    with open(path, "r", encoding="utf-8") as f:
        return parse_schema_config(f.read())


def dump_schema_config(schema: JoinSchema) -> str:
    return yaml.safe_dump(schema_to_dict(schema), sort_keys=False)
