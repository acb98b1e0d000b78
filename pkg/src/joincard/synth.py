"""Synthetic star/chain datasets with controllable correlation and skew.

The root table carries an id key plus categorical content columns; child
tables reference it through a skewed (zipf-like) foreign key.  The
correlation knob couples a child's key choice and content to the parent's
attribute: at 0 the child draws keys independently of parent attributes, at
1 the child's rows concentrate on parents that share its group.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .ingest import Database
from .schema import ColumnDef, JoinEdge, JoinSchema, TableDef, dump_schema_config


@dataclass(frozen=True)
class SynthParams:
    shape: str = "star"  # or "chain"
    tables: int = 3
    rows: int = 1000
    attr_domain: int = 10
    child_domain: int = 12
    correlation: float = 0.7
    skew: float = 1.1
    null_frac: float = 0.02
    orphan_frac: float = 0.02
    year_partitions: int = 0  # >0 adds a root "year" column for append simulations


def synth_schema(params: SynthParams) -> JoinSchema:
    root_cols = [
        ColumnDef("id", "join_key", "integer", True),
        ColumnDef("a", "content", "integer", True),
        ColumnDef("b", "content", "string", False),
    ]
    if params.year_partitions > 0:
        root_cols.insert(1, ColumnDef("year", "content", "integer", True))
    tables = [TableDef("t1", tuple(root_cols))]
    edges = []
    for i in range(2, params.tables + 1):
        name = f"t{i}"
        cols = [
            ColumnDef("fk", "join_key", "integer", True),
            ColumnDef("u", "content", "integer", True),
            ColumnDef("v", "content", "string", False),
        ]
        if params.shape == "chain" and i < params.tables:
            cols.insert(1, ColumnDef("id", "join_key", "integer", True))
        tables.append(TableDef(name, tuple(cols)))
        if params.shape == "star":
            edges.append(JoinEdge("t1", "id", name, "fk"))
        else:
            prev = f"t{i - 1}"
            prev_key = "id"
            edges.append(JoinEdge(prev, prev_key, name, "fk"))
    return JoinSchema(tables=tables, edges=edges, root="t1")


def _zipf_weights(n: int, skew: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** skew
    return w / w.sum()


def synth_tables(seed: int, params: SynthParams) -> dict[str, dict[str, list]]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(505,)))
    n = params.rows
    A = params.attr_domain
    ids = list(range(1, n + 1))
    # Attribute distribution drifts with the year when partitions are requested,
    # so appended partitions shift the joint distribution.
    if params.year_partitions > 0:
        year = np.repeat(np.arange(params.year_partitions), -(-n // params.year_partitions))[:n]
        a = ((year * 3 + rng.integers(0, A // 2, size=n)) % A).astype(np.int64)
    else:
        year = None
        a = rng.choice(A, size=n, p=_zipf_weights(A, 0.7))
    b = [f"s{(int(v) * 7 + int(rng.integers(0, 3))) % 8}" for v in a]
    data: dict[str, dict[str, list]] = {
        "t1": {"id": ids, "a": [int(v) for v in a], "b": b}
    }
    if year is not None:
        data["t1"]["year"] = [int(v) for v in year]

    popularity = _zipf_weights(n, params.skew)
    by_attr = {g: np.flatnonzero(a == g) for g in range(A)}
    parent_a = a
    prev_ids = np.asarray(ids)
    for i in range(2, params.tables + 1):
        name = f"t{i}"
        m = params.rows
        group = rng.integers(0, A, size=m)
        corr_pick = rng.random(m) < params.correlation
        fk_idx = rng.choice(n, size=m, p=popularity)
        for r in range(m):
            if corr_pick[r]:
                pool = by_attr.get(int(group[r]))
                if pool is not None and len(pool):
                    fk_idx[r] = pool[int(rng.integers(0, len(pool)))]
        fk = prev_ids[fk_idx].astype(object)
        u = np.where(
            corr_pick,
            (parent_a[fk_idx] + rng.integers(0, 3, size=m)) % params.child_domain,
            rng.integers(0, params.child_domain, size=m),
        ).astype(np.int64)
        v = [f"w{(int(x) * 5 + int(rng.integers(0, 2))) % 6}" for x in u]
        fk = [int(x) for x in fk.tolist()]
        for r in range(m):
            roll = rng.random()
            if roll < params.null_frac:
                fk[r] = None
            elif roll < params.null_frac + params.orphan_frac:
                fk[r] = n + 1 + int(rng.integers(0, 50))
        cols = {"fk": fk, "u": [int(x) for x in u], "v": v}
        if params.shape == "chain" and i < params.tables:
            cols["id"] = list(range(1, m + 1))
            # The chain's next hop keys on this table; keep its attribute link.
            prev_ids = np.asarray(cols["id"])
            parent_a = u
            by_attr = {g: np.flatnonzero(u % A == g) for g in range(A)}
            popularity = _zipf_weights(m, params.skew)
        data[name] = cols
    return data


def synth_database(seed: int, params: SynthParams) -> Database:
    schema = synth_schema(params)
    return Database.from_values(schema, synth_tables(seed, params))


def write_dataset(out_dir, seed: int, params: SynthParams) -> str:
    """Write CSV tables plus the schema config; returns the schema path."""
    os.makedirs(out_dir, exist_ok=True)
    schema = synth_schema(params)
    data = synth_tables(seed, params)
    for t in schema.tables:
        path = os.path.join(out_dir, f"{t.name}.csv")
        cols = [c.name for c in t.columns]
        with open(path, "w", encoding="utf-8", newline="") as f:
            import csv

            w = csv.writer(f)
            w.writerow(cols)
            n = len(data[t.name][cols[0]])
            for r in range(n):
                w.writerow(
                    ["" if data[t.name][c][r] is None else data[t.name][c][r] for c in cols]
                )
    schema_path = os.path.join(out_dir, "schema.yaml")
    with open(schema_path, "w", encoding="utf-8") as f:
        f.write(dump_schema_config(schema))
    return schema_path
