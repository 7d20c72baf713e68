"""Relational database model: typed tables, foreign keys and the target designation.

A database is described by a JSON descriptor plus one CSV file per table::

    {"tables": [{"name": "cars", "file": "cars.csv",
                 "columns": [{"name": "car_id", "kind": "key"},
                             {"name": "train_id", "kind": "foreign_key", "references": "trains"},
                             ...]}],
     "target_table": "trains",
     "target_attribute": "direction"}

Cells are kept as strings; the empty string is null.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    CyclicJoinGraph,
    DanglingForeignKey,
    HeaderMismatch,
    MissingTableFile,
    SchemaError,
    TargetNotCategorical,
    UnknownTable,
)

KINDS = ("numeric", "categorical", "key", "foreign_key")
NULL = ""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    references: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if (self.kind == "foreign_key") != (self.references is not None):
            raise SchemaError(f"column {self.name!r}: 'references' is required exactly for foreign keys")


@dataclass
class TableSpec:
    name: str
    columns: list[ColumnSpec]
    row_count: int = 0
    file: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate column names")
        if sum(c.kind == "key" for c in self.columns) > 1:
            raise SchemaError(f"table {self.name!r}: more than one key column")

    @property
    def key(self) -> str | None:
        for c in self.columns:
            if c.kind == "key":
                return c.name
        return None

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"table {self.name!r} has no column {name!r}")

    def foreign_keys(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind == "foreign_key"]


@dataclass(frozen=True)
class JoinEdge:
    """A foreign key `child.column -> parent.key`."""

    child: str
    column: str
    parent: str


@dataclass
class RelationalDatabase:
    tables: dict[str, TableSpec]
    rows: dict[str, list[list[str]]]
    target_table: str
    target_attribute: str
    _key_index: dict[str, dict[str, int]] = field(default_factory=dict, repr=False, compare=False)
    _adjacency: dict = field(default_factory=dict, repr=False, compare=False)

    def table(self, name: str) -> TableSpec:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTable(f"unknown table {name!r}") from None

    def column(self, table: str, name: str) -> list[str]:
        i = self.table(table).column_index(name)
        return [r[i] for r in self.rows[table]]

    def key_index(self, table: str) -> dict[str, int]:
        """Map key value -> row index for `table`."""
        if table not in self._key_index:
            spec = self.table(table)
            if spec.key is None:
                raise SchemaError(f"table {table!r} has no key column")
            self._key_index[table] = {v: i for i, v in enumerate(self.column(table, spec.key))}
        return self._key_index[table]

    def edges(self) -> list[JoinEdge]:
        return [
            JoinEdge(t.name, c.name, c.references)
            for t in self.tables.values()
            for c in t.foreign_keys()
        ]

    def edge_between(self, a: str, b: str) -> JoinEdge:
        for e in self.edges():
            if {e.child, e.parent} == {a, b}:
                return e
        raise SchemaError(f"tables {a!r} and {b!r} are not joined")

    def instance_keys(self) -> list[str]:
        spec = self.table(self.target_table)
        if spec.key is None:
            return [str(i) for i in range(len(self.rows[self.target_table]))]
        return self.column(self.target_table, spec.key)

    def labels(self) -> list[str]:
        return self.column(self.target_table, self.target_attribute)

    def to_descriptor(self) -> dict:
        tables = []
        for t in self.tables.values():
            cols = []
            for c in t.columns:
                d = {"name": c.name, "kind": c.kind}
                if c.references is not None:
                    d["references"] = c.references
                cols.append(d)
            tables.append({"name": t.name, "file": t.file or f"{t.name}.csv", "columns": cols})
        return {"tables": tables, "target_table": self.target_table, "target_attribute": self.target_attribute}

    def validate(self) -> None:
        for t in self.tables.values():
            for c in t.foreign_keys():
                if c.references not in self.tables:
                    raise SchemaError(f"{t.name}.{c.name} references unknown table {c.references!r}")
                if self.tables[c.references].key is None:
                    raise SchemaError(f"{t.name}.{c.name} references keyless table {c.references!r}")
            width = len(t.columns)
            for r in self.rows[t.name]:
                if len(r) != width:
                    raise SchemaError(f"table {t.name!r}: row of width {len(r)}, expected {width}")
        if self.target_table not in self.tables:
            raise SchemaError(f"target table {self.target_table!r} is not declared")
        _check_tree(self)
        for e in self.edges():
            keys = self.key_index(e.parent)
            for v in self.column(e.child, e.column):
                if v != NULL and v not in keys:
                    raise DanglingForeignKey(e.child, e.column, v)
        target = self.table(self.target_table)
        try:
            col = target.columns[target.column_index(self.target_attribute)]
        except SchemaError:
            raise TargetNotCategorical(f"{self.target_attribute!r} is not a column of {self.target_table!r}") from None
        if col.kind != "categorical":
            raise TargetNotCategorical(f"target attribute {self.target_attribute!r} has kind {col.kind!r}")
        if len(set(self.labels()) - {NULL}) < 2:
            raise TargetNotCategorical("target attribute needs at least two distinct values")


def reachable_tables(db: RelationalDatabase) -> list[str]:
    seen = {db.target_table}
    frontier = [db.target_table]
    while frontier:
        nxt = []
        for t in frontier:
            for n in join_children(db, t):
                if n not in seen:
                    seen.add(n)
                    nxt.append(n)
        frontier = nxt
    return [t for t in db.tables if t in seen]


def _check_tree(db: RelationalDatabase) -> None:
    nodes = set(reachable_tables(db))
    edges = [e for e in db.edges() if e.child in nodes]
    if any(e.child == e.parent for e in edges):
        raise CyclicJoinGraph("self-referencing foreign key")
    # connected by construction, so a tree iff |E| = |V| - 1
    if len(edges) != len(nodes) - 1:
        raise CyclicJoinGraph(
            f"join graph reachable from {db.target_table!r} has {len(edges)} edges over {len(nodes)} tables"
        )


def join_children(db: RelationalDatabase, table: str) -> list[str]:
    """Tables joined to `table` by a foreign key in either direction, in declaration order."""
    spec = db.table(table)
    out_refs = {c.references for c in spec.foreign_keys()}
    result = []
    for other in db.tables.values():
        if other.name == table:
            continue
        if other.name in out_refs or any(c.references == table for c in other.foreign_keys()):
            result.append(other.name)
    return result


def class_distribution(db: RelationalDatabase) -> dict[str, int]:
    counts = Counter(v for v in db.labels() if v != NULL)
    return dict(sorted(counts.items()))


def table_statistics(db: RelationalDatabase) -> list[tuple[str, int, int]]:
    """(name, #columns, #rows) per table, sorted by name."""
    return sorted((t.name, len(t.columns), len(db.rows[t.name])) for t in db.tables.values())


def parse_descriptor(descriptor: dict) -> tuple[list[TableSpec], str, str]:
    try:
        tables = [
            TableSpec(
                name=t["name"],
                columns=[ColumnSpec(c["name"], c["kind"], c.get("references")) for c in t["columns"]],
                file=t.get("file", f"{t['name']}.csv"),
            )
            for t in descriptor["tables"]
        ]
        return tables, descriptor["target_table"], descriptor["target_attribute"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema descriptor: {exc}") from exc


def _read_csv(path: Path, spec: TableSpec) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = [c.name for c in spec.columns]
        if header != expected:
            raise HeaderMismatch(f"{path.name}: header {header} does not match {expected}")
        return [row for row in reader if row]


def load_database(schema_descriptor: str | Path, data_dir: str | Path | None = None) -> RelationalDatabase:
    """Load and validate a database from a JSON descriptor and a directory of CSV files.

    `data_dir` defaults to the descriptor's directory.
    """
    schema_descriptor = Path(schema_descriptor)
    data_dir = Path(data_dir) if data_dir is not None else schema_descriptor.parent
    descriptor = json.loads(schema_descriptor.read_text(encoding="utf-8"))
    specs, target_table, target_attribute = parse_descriptor(descriptor)
    rows = {}
    for spec in specs:
        path = data_dir / spec.file
        if not path.is_file():
            raise MissingTableFile(f"table {spec.name!r}: {path} does not exist")
        rows[spec.name] = _read_csv(path, spec)
        spec.row_count = len(rows[spec.name])
    db = RelationalDatabase({s.name: s for s in specs}, rows, target_table, target_attribute)
    db.validate()
    return db


def database_from_rows(
    tables: Iterable[TableSpec],
    rows: dict[str, list[list]],
    target_table: str,
    target_attribute: str,
    validate: bool = True,
) -> RelationalDatabase:
    """Build a database from in-memory rows (cells are converted to strings, None to null)."""
    specs = list(tables)
    str_rows = {
        s.name: [[NULL if v is None else str(v) for v in r] for r in rows.get(s.name, [])] for s in specs
    }
    for s in specs:
        s.row_count = len(str_rows[s.name])
    db = RelationalDatabase({s.name: s for s in specs}, str_rows, target_table, target_attribute)
    if validate:
        db.validate()
    return db
