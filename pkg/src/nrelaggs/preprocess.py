"""Value encoding, aggregation plans and per-instance bundles.

Every table reachable from the target table is numbered: index 0 is the target
table, the rest follow breadth-first discovery order. An instance is the set of
rows reached from one target row, stored per table index as an encoded matrix
(`x_data`) together with the local index of each row's parent row (`x_ids`).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyTrainSet,
    IncompatibleWidths,
    LabelDomain,
    PlanMismatch,
    SchemaError,
    UnknownInstanceKey,
    UnknownTable,
)
from .schema import NULL, RelationalDatabase, join_children

EPS = 1e-12
DTYPE = np.float32


# --------------------------------------------------------------------------- plan


@dataclass(frozen=True)
class AggregationPlan:
    """Ordered (nexts, current) steps over table indices.

    `inverted=True` is execution order (deepest tables first); `inverted=False`
    is the breadth-first traversal order used to collect instance rows.
    """

    steps: tuple[tuple[tuple[int, ...], int], ...]
    table_order: tuple[str, ...]
    inverted: bool = True

    def depth(self) -> dict[int, int]:
        """Join distance of every table from the target (index 0)."""
        parent = self.parent
        out = {0: 0}

        def walk(t):
            if t not in out:
                out[t] = walk(parent[t]) + 1
            return out[t]

        for t in range(len(self.table_order)):
            if t == 0 or t in parent:
                walk(t)
        return out

    def invert(self) -> "AggregationPlan":
        """Reverse the order of BFS levels; steps within one level keep their relative order.

        Stable sorting by depth makes this an involution.
        """
        depth = self.depth()
        if self.inverted:
            steps = sorted(self.steps, key=lambda s: depth[s[1]])
        else:
            steps = sorted(self.steps, key=lambda s: -depth[s[1]])
        return AggregationPlan(tuple(steps), self.table_order, not self.inverted)

    def bfs_steps(self):
        return self.invert().steps if self.inverted else self.steps

    def execution_steps(self):
        if not self.inverted:
            raise PlanMismatch("plan is in traversal order; invert it before aggregating")
        return self.steps

    @property
    def parent(self) -> dict[int, int]:
        return {t: current for nexts, current in self.steps for t in nexts}

    def index(self, table: str) -> int:
        try:
            return self.table_order.index(table)
        except ValueError:
            raise UnknownTable(f"table {table!r} is not part of the plan") from None

    def as_names(self) -> list[tuple[list[str], str]]:
        names = self.table_order
        return [([names[i] for i in nexts], names[current]) for nexts, current in self.steps]

    def fingerprint(self) -> str:
        return json.dumps({"tables": list(self.table_order), "steps": self.as_names()}, separators=(",", ":"))


def generate_aggregation_plan(db: RelationalDatabase) -> AggregationPlan:
    """Breadth-first search from the target table, returned in execution (inverted) order."""
    order = [db.target_table]
    visited = {db.target_table}
    queue = [db.target_table]
    steps = []
    while queue:
        current = queue.pop(0)
        nexts = [t for t in join_children(db, current) if t not in visited]
        if not nexts:
            continue
        for t in nexts:
            visited.add(t)
            order.append(t)
            queue.append(t)
        steps.append((tuple(order.index(t) for t in nexts), order.index(current)))
    return AggregationPlan(tuple(steps), tuple(order), inverted=False).invert()


# --------------------------------------------------------------------------- encoding


@dataclass
class PreprocessorState:
    """Train-set statistics: (mean, std) per numeric column, sorted vocabulary per categorical column."""

    numeric: dict[str, dict[str, tuple[float, float]]]
    vocabularies: dict[str, dict[str, list[str]]]
    layout: dict[str, list[tuple[str, str]]]

    def width(self, table: str) -> int:
        if table not in self.layout:
            raise UnknownTable(f"unknown table {table!r}")
        return sum(
            1 if kind == "numeric" else len(self.vocabularies[table][col]) for col, kind in self.layout[table]
        )

    def feature_names(self, table: str) -> list[str]:
        names = []
        for col, kind in self.layout[table]:
            if kind == "numeric":
                names.append(f"{table}.{col}")
            else:
                names.extend(f"{table}.{col}={v}" for v in self.vocabularies[table][col])
        return names

    def to_dict(self) -> dict:
        return {
            "numeric": {t: {c: list(v) for c, v in cols.items()} for t, cols in self.numeric.items()},
            "vocabularies": self.vocabularies,
            "layout": {t: [list(p) for p in cols] for t, cols in self.layout.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessorState":
        return cls(
            numeric={t: {c: (float(v[0]), float(v[1])) for c, v in cols.items()} for t, cols in d["numeric"].items()},
            vocabularies={t: {c: list(v) for c, v in cols.items()} for t, cols in d["vocabularies"].items()},
            layout={t: [(c, k) for c, k in cols] for t, cols in d["layout"].items()},
        )


def _feature_layout(db: RelationalDatabase, table: str) -> list[tuple[str, str]]:
    out = []
    for c in db.table(table).columns:
        if c.kind not in ("numeric", "categorical"):
            continue
        if table == db.target_table and c.name == db.target_attribute:
            continue
        out.append((c.name, c.kind))
    return out


def _parse_numeric(values: list[str], where: str) -> np.ndarray:
    try:
        return np.array([np.nan if v == NULL else float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def fit_preprocessor(db: RelationalDatabase, train_instance_keys) -> PreprocessorState:
    train_instance_keys = list(train_instance_keys)
    if not train_instance_keys:
        raise EmptyTrainSet("no training instances")
    plan = generate_aggregation_plan(db)
    reached = {t: set() for t in plan.table_order}
    for key in train_instance_keys:
        for i, rows in enumerate(_instance_rows(db, plan, key)):
            reached[plan.table_order[i]].update(rows.tolist())

    numeric, vocabularies, layout = {}, {}, {}
    for table in plan.table_order:
        rows = sorted(reached[table])
        layout[table] = _feature_layout(db, table)
        numeric[table], vocabularies[table] = {}, {}
        spec = db.table(table)
        for col, kind in layout[table]:
            j = spec.column_index(col)
            values = [db.rows[table][r][j] for r in rows]
            if kind == "numeric":
                x = _parse_numeric(values, f"{table}.{col}")
                x = x[~np.isnan(x)]
                mean = float(x.mean()) if x.size else 0.0
                std = float(x.std()) if x.size else 0.0
                numeric[table][col] = (mean, max(std, EPS))
            else:
                vocabularies[table][col] = sorted(set(values) - {NULL})
    return PreprocessorState(numeric, vocabularies, layout)


def encode_rows(state: PreprocessorState, db: RelationalDatabase, table: str, rows: list[list[str]]) -> np.ndarray:
    """Encode raw rows of `table`: z-scored numerics, one-hot categoricals, keys dropped."""
    if table not in state.layout:
        raise UnknownTable(f"unknown table {table!r}")
    spec = db.table(table)
    blocks = []
    for col, kind in state.layout[table]:
        j = spec.column_index(col)
        values = [r[j] for r in rows]
        if kind == "numeric":
            mean, std = state.numeric[table][col]
            x = (_parse_numeric(values, f"{table}.{col}") - mean) / std
            blocks.append(np.nan_to_num(x, nan=0.0)[:, None])
        else:
            vocab = state.vocabularies[table][col]
            lookup = {v: i for i, v in enumerate(vocab)}
            onehot = np.zeros((len(rows), len(vocab)))
            hit = [(r, lookup[v]) for r, v in enumerate(values) if v in lookup]
            if hit:
                r, c = zip(*hit)
                onehot[list(r), list(c)] = 1.0
            blocks.append(onehot)
    if not blocks:
        return np.zeros((len(rows), 0), dtype=DTYPE)
    return np.hstack(blocks).astype(DTYPE)


def encode_row(state: PreprocessorState, db: RelationalDatabase, table: str, row: list[str]) -> np.ndarray:
    return encode_rows(state, db, table, [row])[0]


def encode_table(state: PreprocessorState, db: RelationalDatabase, table: str) -> np.ndarray:
    return encode_rows(state, db, table, db.rows[table])


# --------------------------------------------------------------------------- traversal


def _adjacency(db: RelationalDatabase, current: str, nxt: str) -> tuple[np.ndarray, np.ndarray]:
    """CSR (offsets, targets): rows of `nxt` connected to each row of `current`."""
    cache_key = (current, nxt)
    if cache_key in db._adjacency:
        return db._adjacency[cache_key]
    edge = db.edge_between(current, nxt)
    n_cur = len(db.rows[current])
    buckets: list[list[int]] = [[] for _ in range(n_cur)]
    if edge.child == nxt:
        keys = db.key_index(current)
        for r, v in enumerate(db.column(nxt, edge.column)):
            if v != NULL:
                buckets[keys[v]].append(r)
    else:
        keys = db.key_index(nxt)
        for r, v in enumerate(db.column(current, edge.column)):
            if v != NULL:
                buckets[r].append(keys[v])
    counts = np.array([len(b) for b in buckets], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    targets = np.array([t for b in buckets for t in b], dtype=np.int64)
    db._adjacency[cache_key] = (offsets, targets)
    return offsets, targets


def _expand(offsets: np.ndarray, targets: np.ndarray, selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Connected rows of every selected parent row, plus each one's local parent index."""
    counts = offsets[selected + 1] - offsets[selected]
    total = int(counts.sum())
    local_parent = np.repeat(np.arange(len(selected)), counts)
    if total == 0:
        return np.zeros(0, dtype=np.int64), local_parent
    starts = np.repeat(offsets[selected], counts)
    within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return targets[starts + within], local_parent


def _target_row(db: RelationalDatabase, key) -> int:
    spec = db.table(db.target_table)
    if spec.key is None:
        try:
            r = int(key)
        except (TypeError, ValueError):
            raise UnknownInstanceKey(f"unknown instance {key!r}") from None
        if not 0 <= r < len(db.rows[db.target_table]):
            raise UnknownInstanceKey(f"unknown instance {key!r}")
        return r
    try:
        return db.key_index(db.target_table)[str(key)]
    except KeyError:
        raise UnknownInstanceKey(f"unknown instance {key!r}") from None


def _instance_rows(db, plan, key, with_ids=False):
    names = plan.table_order
    rows = [np.zeros(0, dtype=np.int64) for _ in names]
    ids = [np.zeros(0, dtype=np.int64) for _ in names]
    rows[0] = np.array([_target_row(db, key)], dtype=np.int64)
    for nexts, current in plan.bfs_steps():
        for t in nexts:
            offsets, targets = _adjacency(db, names[current], names[t])
            rows[t], ids[t] = _expand(offsets, targets, rows[current])
    return (rows, ids) if with_ids else rows


# --------------------------------------------------------------------------- bundles


def class_labels(db: RelationalDatabase) -> tuple[str, str]:
    """(negative, positive) class labels; the lexicographically larger one is positive."""
    classes = sorted(set(db.labels()) - {NULL})
    if len(classes) != 2:
        raise LabelDomain(f"binary target required, found classes {classes}")
    return classes[0], classes[1]


@dataclass
class InstanceBundle:
    key: str
    x_data: list[np.ndarray]
    x_ids: list[np.ndarray]
    y: int
    parents: tuple[int, ...]
    rows: list[np.ndarray] = field(default_factory=list, repr=False, compare=False)


@dataclass
class BatchBundle:
    x_data: list[np.ndarray]
    x_ids: list[np.ndarray]
    instance_of: list[np.ndarray]
    y: np.ndarray
    keys: list[str]
    parents: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def widths(self) -> list[int]:
        return [x.shape[1] for x in self.x_data]

    @property
    def total_rows(self) -> list[int]:
        return [x.shape[0] for x in self.x_data]


def _parents(plan: AggregationPlan) -> tuple[int, ...]:
    p = plan.parent
    return tuple(p.get(t, -1) for t in range(len(plan.table_order)))


def build_instance(
    db: RelationalDatabase,
    state: PreprocessorState,
    plan: AggregationPlan,
    instance_key,
    encoded: dict[str, np.ndarray] | None = None,
) -> InstanceBundle:
    rows, ids = _instance_rows(db, plan, instance_key, with_ids=True)
    names = plan.table_order
    x_data = []
    for t, r in enumerate(rows):
        if encoded is not None:
            x_data.append(encoded[names[t]][r])
        else:
            x_data.append(encode_rows(state, db, names[t], [db.rows[names[t]][i] for i in r]))
    _, positive = class_labels(db)
    target = db.table(db.target_table)
    label = db.rows[db.target_table][rows[0][0]][target.column_index(db.target_attribute)]
    y = 1 if label == positive else -1
    return InstanceBundle(str(instance_key), x_data, ids, y, _parents(plan), rows)


def build_instances(db, state, plan, keys) -> list[InstanceBundle]:
    """build_instance over many keys, encoding each table once."""
    encoded = {t: encode_table(state, db, t) for t in plan.table_order}
    return [build_instance(db, state, plan, k, encoded) for k in keys]


def collate(instances: list[InstanceBundle], widths: list[int] | None = None, parents=None) -> BatchBundle:
    """Concatenate instances table by table, re-basing parent indices into the concatenated parent rows.

    An empty list yields an n=0 batch (with 0-row matrices when `widths` is given).
    """
    if not instances:
        widths = list(widths or [])
        return BatchBundle(
            [np.zeros((0, w), dtype=DTYPE) for w in widths],
            [np.zeros(0, dtype=np.int64) for _ in widths],
            [np.zeros(0, dtype=np.int64) for _ in widths],
            np.zeros(0, dtype=np.int64),
            [],
            tuple(parents or ()),
        )
    ref = [x.shape[1] for x in instances[0].x_data]
    if widths is not None and list(widths) != ref:
        raise IncompatibleWidths(f"expected widths {list(widths)}, got {ref}")
    parents = instances[0].parents
    for inst in instances:
        if [x.shape[1] for x in inst.x_data] != ref or inst.parents != parents:
            raise IncompatibleWidths(f"instance {inst.key!r} does not match the batch layout")

    n_tables = len(ref)
    x_data = [np.concatenate([inst.x_data[t] for inst in instances]).astype(DTYPE, copy=False) for t in range(n_tables)]
    instance_of = [
        np.concatenate([np.full(len(inst.x_data[t]), i, dtype=np.int64) for i, inst in enumerate(instances)])
        for t in range(n_tables)
    ]
    x_ids = [np.zeros(0, dtype=np.int64)]
    for t in range(1, n_tables):
        p = parents[t]
        offset = 0
        parts = []
        for inst in instances:
            parts.append(np.asarray(inst.x_ids[t], dtype=np.int64) + offset)
            offset += len(inst.x_data[p])
        x_ids.append(np.concatenate(parts))
    y = np.array([inst.y for inst in instances], dtype=np.int64)
    return BatchBundle(x_data, x_ids, instance_of, y, [inst.key for inst in instances], parents)


# --------------------------------------------------------------------------- container

MAGIC = b"NRLB"
VERSION = 1


def write_bundle(path: str | Path, batch: BatchBundle) -> None:
    """Binary container, little-endian throughout.

    header: magic "NRLB", u32 version, u32 n, u32 n_tables, u32 len + UTF-8 JSON {keys, parents};
    then int32[n] labels; then per table: u32 rows, u32 width, float32[rows*width] row-major data,
    int32[rows] parent ids, int32[rows] instance ids.
    """
    buf = io.BytesIO()
    meta = json.dumps({"keys": batch.keys, "parents": list(batch.parents)}).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<III", VERSION, batch.n, len(batch.x_data)))
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(np.asarray(batch.y, dtype="<i4").tobytes())
    for t, x in enumerate(batch.x_data):
        rows, width = x.shape
        buf.write(struct.pack("<II", rows, width))
        buf.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        ids = batch.x_ids[t] if t > 0 else np.full(rows, -1)
        buf.write(np.asarray(ids, dtype="<i4").tobytes())
        buf.write(np.asarray(batch.instance_of[t], dtype="<i4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_bundle(path: str | Path) -> BatchBundle:
    data = memoryview(Path(path).read_bytes())
    if bytes(data[:4]) != MAGIC:
        raise ValueError(f"{path}: not a bundle container")
    version, n, n_tables = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 16)
    pos = 20
    meta = json.loads(bytes(data[pos : pos + meta_len]).decode("utf-8"))
    pos += meta_len
    y = np.frombuffer(data, dtype="<i4", count=n, offset=pos).astype(np.int64)
    pos += 4 * n
    x_data, x_ids, instance_of = [], [], []
    for t in range(n_tables):
        rows, width = struct.unpack_from("<II", data, pos)
        pos += 8
        x_data.append(np.frombuffer(data, dtype="<f4", count=rows * width, offset=pos).reshape(rows, width).astype(DTYPE))
        pos += 4 * rows * width
        ids = np.frombuffer(data, dtype="<i4", count=rows, offset=pos).astype(np.int64)
        x_ids.append(ids if t > 0 else np.zeros(0, dtype=np.int64))
        pos += 4 * rows
        instance_of.append(np.frombuffer(data, dtype="<i4", count=rows, offset=pos).astype(np.int64))
        pos += 4 * rows
    return BatchBundle(x_data, x_ids, instance_of, y, list(meta["keys"]), tuple(meta["parents"]))
