"""Trainable nested aggregation network.

Each table that gets aggregated into its parent owns one composite aggregate
function: a dense feature-generation map, the four segment reductions
(sum, mean, min, max) concatenated, and a dense feature-selection map. Tables
are collapsed into their parents following the execution plan until only the
target table remains; its rows feed a ReLU multilayer perceptron with a single
linear output scored by hinge loss.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    NonFiniteLoss,
    OversizeBatch,
    PlanMismatch,
    UnknownLayer,
    WidthChainBroken,
)
from .neural import (
    AGGREGATES,
    AdamState,
    DenseLayer,
    SegmentIndex,
    adam_step,
    dense_backward,
    dense_forward,
    glorot_dense,
    hinge_loss,
    identity_dense,
    segment_aggregate,
    segment_aggregate_backward,
)
from .preprocess import AggregationPlan, BatchBundle, InstanceBundle, collate

K = len(AGGREGATES)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NRelaggsConfig:
    generation_factor: float = 1.0
    selection_factor: float = 1.0
    predictor_layers: tuple[int, ...] = (100,)
    epochs: int = 100
    patience: int = 10
    tol: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 32
    # full-batch training while total batch rows x widest feature fit this budget
    max_batch_elements: int = 4_000_000
    validation_fraction: float = 0.1
    freeze_aggregation: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.generation_factor <= 0 or self.selection_factor <= 0:
            raise ValueError("width factors must be positive")
        object.__setattr__(self, "predictor_layers", tuple(int(h) for h in self.predictor_layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predictor_layers"] = list(self.predictor_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NRelaggsConfig":
        return cls(**{k: (tuple(v) if k == "predictor_layers" else v) for k, v in d.items()})


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def aggregation_widths(l: int, generation_factor: float, selection_factor: float) -> tuple[int, int]:
    """(l*, l-bar): widths after feature generation and after feature selection."""
    l_star = max(1, _round_half_up(generation_factor * l))
    l_bar = max(1, _round_half_up(selection_factor * K * l_star))
    return l_star, l_bar


@dataclass
class AggregationLayer:
    generation: DenseLayer
    selection: DenseLayer

    @property
    def n_in(self) -> int:
        return self.generation.n_in

    @property
    def n_out(self) -> int:
        return self.selection.n_out

    def parameters(self) -> list[np.ndarray]:
        return self.generation.parameters() + self.selection.parameters()

    def forward(self, X: np.ndarray, seg: SegmentIndex):
        Z = dense_forward(self.generation, X)
        parts = [segment_aggregate(Z, seg, kind) for kind in AGGREGATES]
        A = np.hstack(parts)
        out = dense_forward(self.selection, A)
        return out, (X, seg, Z, parts, A, out)

    def backward(self, grad_out: np.ndarray, cache):
        X, seg, Z, parts, A, out = cache
        grad_A, gw_sel, gb_sel = dense_backward(self.selection, A, out, grad_out)
        l_star = Z.shape[1]
        grad_Z = np.zeros_like(Z)
        for k, kind in enumerate(AGGREGATES):
            block = grad_A[:, k * l_star : (k + 1) * l_star]
            grad_Z += segment_aggregate_backward(block, Z, seg, kind, parts[k])
        grad_X, gw_gen, gb_gen = dense_backward(self.generation, X, Z, grad_Z)
        return grad_X, [gw_gen, gb_gen, gw_sel, gb_sel]


@dataclass
class NRelaggsModel:
    plan: AggregationPlan
    widths: tuple[int, ...]
    config: NRelaggsConfig
    layers: dict[int, AggregationLayer]
    predictor: list[DenseLayer]
    dtype: type = np.float32
    history: dict = field(default_factory=dict)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for t in sorted(self.layers):
            params.extend(self.layers[t].parameters())
        for layer in self.predictor:
            params.extend(layer.parameters())
        return params

    def trainable_mask(self) -> list[bool]:
        n_agg = 4 * len(self.layers)
        frozen = self.config.freeze_aggregation
        return [not frozen] * n_agg + [True] * (2 * len(self.predictor))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def astype(self, dtype) -> "NRelaggsModel":
        def cast(d: DenseLayer) -> DenseLayer:
            return DenseLayer(d.weights.astype(dtype), d.bias.astype(dtype), d.activation)

        return replace(
            self,
            layers={t: AggregationLayer(cast(a.generation), cast(a.selection)) for t, a in self.layers.items()},
            predictor=[cast(d) for d in self.predictor],
            dtype=dtype,
            history=dict(self.history),
        )

    @property
    def input_widths(self) -> dict[int, int]:
        return _input_widths(self.plan, self.widths, {t: a.n_out for t, a in self.layers.items()})

    @property
    def pre_predictor_width(self) -> int:
        return self.input_widths[0]


def _input_widths(plan: AggregationPlan, widths, out_widths: dict[int, int]) -> dict[int, int]:
    """Width of each table's rows after its children have been appended."""
    full = {t: widths[t] for t in range(len(plan.table_order))}
    for nexts, current in plan.execution_steps():
        full[current] = widths[current] + sum(out_widths[c] for c in nexts)
    return full


def build_model(widths, plan: AggregationPlan, config: NRelaggsConfig, seed: int | None = None, dtype=np.float32) -> NRelaggsModel:
    """Initialise aggregation layers along the plan plus the predictor MLP.

    `widths` are the encoded feature widths per table index.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) != len(plan.table_order):
        raise WidthChainBroken(f"{len(widths)} widths for {len(plan.table_order)} tables")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    layers: dict[int, AggregationLayer] = {}
    full = {t: widths[t] for t in range(len(widths))}
    for nexts, current in plan.execution_steps():
        for c in nexts:
            if c in layers:
                raise WidthChainBroken(f"table {plan.table_order[c]!r} is aggregated twice")
            l = full[c]
            l_star, l_bar = aggregation_widths(l, config.generation_factor, config.selection_factor)
            if config.freeze_aggregation:
                if l_star != l or l_bar != K * l_star:
                    raise WidthChainBroken("frozen identity aggregation needs both factors at 1.0")
                layers[c] = AggregationLayer(identity_dense(l, dtype), identity_dense(K * l, dtype))
            else:
                layers[c] = AggregationLayer(
                    glorot_dense(rng, l, l_star, dtype=dtype), glorot_dense(rng, K * l_star, l_bar, dtype=dtype)
                )
        full[current] = widths[current] + sum(layers[c].n_out for c in nexts)
    if full[0] == 0:
        raise WidthChainBroken("the target table has no features to predict from")
    predictor = []
    n_in = full[0]
    for h in config.predictor_layers:
        predictor.append(glorot_dense(rng, n_in, h, "relu", dtype))
        n_in = h
    predictor.append(glorot_dense(rng, n_in, 1, "linear", dtype))
    return NRelaggsModel(plan, widths, config, layers, predictor, dtype)


def set_identity_aggregation(model: NRelaggsModel) -> None:
    """Overwrite every aggregation layer with identity maps (needs factors 1.0)."""
    for t, layer in model.layers.items():
        l = layer.n_in
        if layer.generation.n_out != l or layer.n_out != K * l:
            raise WidthChainBroken("identity aggregation needs both factors at 1.0")
        model.layers[t] = AggregationLayer(identity_dense(l, model.dtype), identity_dense(K * l, model.dtype))


def _check_batch(model: NRelaggsModel, batch: BatchBundle) -> None:
    if list(batch.widths) != list(model.widths):
        raise PlanMismatch(f"batch widths {batch.widths} do not match model widths {list(model.widths)}")
    parents = model.plan.parent
    for t in range(1, len(model.widths)):
        if batch.parents[t] != parents.get(t, -1):
            raise PlanMismatch("batch was collated with a different plan")


def _cast(batch: BatchBundle, dtype) -> list[np.ndarray]:
    return [x.astype(dtype, copy=False) for x in batch.x_data]


def _aggregate_tables(model: NRelaggsModel, batch: BatchBundle, caches: dict | None = None) -> list[np.ndarray]:
    x_data = _cast(batch, model.dtype)
    agg = list(x_data)
    for nexts, current in model.plan.execution_steps():
        n_parent = x_data[current].shape[0]
        parts = []
        for c in nexts:
            seg = SegmentIndex(batch.x_ids[c], n_parent)
            out, cache = model.layers[c].forward(agg[c], seg)
            if caches is not None:
                caches[c] = cache
            parts.append(out)
        parts.append(x_data[current])
        agg[current] = np.hstack(parts)
    return agg


def _predictor_forward(model: NRelaggsModel, h: np.ndarray):
    acts = [h]
    for layer in model.predictor:
        acts.append(dense_forward(layer, acts[-1]))
    return acts


def forward(model: NRelaggsModel, batch: BatchBundle, return_cache: bool = False):
    """Raw scores (one per instance); with `return_cache`, also the intermediates for backward."""
    _check_batch(model, batch)
    caches: dict = {}
    agg = _aggregate_tables(model, batch, caches)
    acts = _predictor_forward(model, agg[0])
    scores = acts[-1][:, 0]
    if return_cache:
        return scores, {"agg": agg, "acts": acts, "layers": caches}
    return scores


def backward(model: NRelaggsModel, batch: BatchBundle, cache: dict, grad_scores: np.ndarray) -> list[np.ndarray]:
    """Gradients of every parameter, in `model.parameters()` order."""
    acts = cache["acts"]
    grad = grad_scores[:, None].astype(model.dtype)
    pred_grads = []
    for i in range(len(model.predictor) - 1, -1, -1):
        grad, gw, gb = dense_backward(model.predictor[i], acts[i], acts[i + 1], grad)
        pred_grads = [gw, gb] + pred_grads

    agg = cache["agg"]
    grad_agg = {0: grad}
    layer_grads: dict[int, list[np.ndarray]] = {}
    for nexts, current in reversed(model.plan.execution_steps()):
        g = grad_agg.get(current)
        pos = 0
        for c in nexts:
            width = model.layers[c].n_out
            block = g[:, pos : pos + width] if g is not None else np.zeros((agg[current].shape[0], width), model.dtype)
            pos += width
            grad_agg[c], layer_grads[c] = model.layers[c].backward(block, cache["layers"][c])
    grads = []
    for t in sorted(model.layers):
        grads.extend(layer_grads[t])
    return grads + pred_grads


def loss_and_grad(model: NRelaggsModel, batch: BatchBundle) -> tuple[float, list[np.ndarray]]:
    scores, cache = forward(model, batch, return_cache=True)
    loss, g = hinge_loss(scores, batch.y)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}; scores contain {np.count_nonzero(~np.isfinite(scores))} non-finite values")
    return loss, backward(model, batch, cache, g)


# --------------------------------------------------------------------------- dense oracle


def _masked_aggregate(Z: np.ndarray, ids: np.ndarray, n: int, kind: str) -> np.ndarray:
    """Span rows into an (m, l, n) tensor with a 0/1 mask and reduce over rows."""
    m = Z.shape[0]
    if m == 0:
        return np.zeros((n, Z.shape[1]), dtype=Z.dtype)
    mask = (ids[:, None] == np.arange(n)[None, :]).astype(Z.dtype)[:, None, :]  # (m, 1, n)
    spanned = Z[:, :, None] * mask  # (m, l, n)
    present = mask.astype(bool)
    count = mask.sum(axis=0)  # (1, n)
    if kind == "sum":
        red = spanned.sum(axis=0)
    elif kind == "mean":
        red = np.where(count > 0, spanned.sum(axis=0) / np.maximum(count, 1), 0)
    elif kind in ("min", "max"):
        fill = np.inf if kind == "min" else -np.inf
        full = np.where(present, Z[:, :, None], fill)
        red = full.min(axis=0) if kind == "min" else full.max(axis=0)
        red = np.where(count > 0, red, 0)
    else:
        raise ValueError(kind)
    return red.T.astype(Z.dtype)  # (l, n) -> (n, l)


def forward_dense_oracle(model: NRelaggsModel, batch: BatchBundle, max_elements: int = 20_000_000) -> np.ndarray:
    """Same function as `forward`, aggregating through explicit mask-and-span tensors."""
    _check_batch(model, batch)
    x_data = _cast(batch, model.dtype)
    agg = list(x_data)
    for nexts, current in model.plan.execution_steps():
        n_parent = x_data[current].shape[0]
        parts = []
        for c in nexts:
            layer = model.layers[c]
            Z = dense_forward(layer.generation, agg[c])
            if Z.shape[0] * Z.shape[1] * max(n_parent, 1) > max_elements:
                raise OversizeBatch(f"spanned tensor {Z.shape[0]}x{Z.shape[1]}x{n_parent} exceeds {max_elements}")
            A = np.hstack([_masked_aggregate(Z, batch.x_ids[c], n_parent, kind) for kind in AGGREGATES])
            parts.append(dense_forward(layer.selection, A))
        parts.append(x_data[current])
        agg[current] = np.hstack(parts)
    return _predictor_forward(model, agg[0])[-1][:, 0]


# --------------------------------------------------------------------------- inference


def predict(model: NRelaggsModel, batch: BatchBundle) -> tuple[np.ndarray, np.ndarray]:
    """Labels in {-1, +1} (a zero score counts as +1) and raw scores."""
    scores = forward(model, batch)
    return np.where(scores >= 0, 1, -1), scores


_HIDDEN = re.compile(r"predictor_hidden\((\d+)\)$")


def extract_features(model: NRelaggsModel, batch: BatchBundle, layer: str = "pre_predictor") -> np.ndarray:
    """Intermediate representation per instance.

    `pre_predictor` is the fully aggregated target-table row;
    `predictor_hidden(i)` is the activation of hidden predictor layer i.
    """
    _check_batch(model, batch)
    agg = _aggregate_tables(model, batch)
    if layer == "pre_predictor":
        return agg[0]
    match = _HIDDEN.match(layer)
    if match is None or int(match.group(1)) >= len(model.predictor) - 1:
        raise UnknownLayer(f"unknown layer {layer!r}")
    return _predictor_forward(model, agg[0])[int(match.group(1)) + 1]


def feature_names(model: NRelaggsModel, table_feature_names: dict[str, list[str]]) -> list[str]:
    """Names of the pre-predictor columns when every aggregation layer is the identity."""
    names = {t: list(table_feature_names[n]) for t, n in enumerate(model.plan.table_order)}
    for nexts, current in model.plan.execution_steps():
        cols = []
        for c in nexts:
            child = model.plan.table_order[c]
            cols += [f"{kind}[{child}]({f})" for kind in AGGREGATES for f in names[c]]
        names[current] = cols + names[current]
    return names[0]


# --------------------------------------------------------------------------- training


def _batches(instances: list[InstanceBundle], config: NRelaggsConfig, rng: np.random.Generator) -> list[BatchBundle]:
    rows = sum(sum(len(x) for x in inst.x_data) for inst in instances)
    widest = max((x.shape[1] for x in instances[0].x_data), default=1)
    if rows * max(widest, 1) <= config.max_batch_elements:
        return [collate(instances)]
    order = rng.permutation(len(instances))
    return [collate([instances[i] for i in order[s : s + config.batch_size]]) for s in range(0, len(order), config.batch_size)]


def train(
    model: NRelaggsModel,
    train_instances: list[InstanceBundle],
    validation: list[InstanceBundle] | None = None,
    config: NRelaggsConfig | None = None,
) -> NRelaggsModel:
    """Adam on hinge loss with early stopping; the best-validation parameters are restored.

    Without validation instances the training loss drives early stopping.
    `model.history` records the loss per epoch, epoch 0 being the untrained model.
    """
    config = config or model.config
    rng = np.random.default_rng(config.seed + 1)
    full_batch = _batches(train_instances, config, rng)
    monitor = collate(validation) if validation else None
    mask = model.trainable_mask()
    params = model.parameters()
    trainable = [p for p, m in zip(params, mask) if m]
    adam = AdamState.for_params(trainable, learning_rate=config.learning_rate)

    def evaluate() -> tuple[float, float]:
        train_loss = float(np.mean([hinge_loss(forward(model, b), b.y)[0] for b in full_batch]))
        val_loss = hinge_loss(forward(model, monitor), monitor.y)[0] if monitor is not None else train_loss
        return train_loss, val_loss

    train_loss, val_loss = evaluate()
    history = {"train_loss": [train_loss], "val_loss": [val_loss]}
    best, best_epoch, best_params = val_loss, 0, [p.copy() for p in params]
    stale = 0
    batches = full_batch
    for epoch in range(1, config.epochs + 1):
        if len(full_batch) > 1:
            batches = _batches(train_instances, config, rng)
        for batch in batches:
            try:
                loss, grads = loss_and_grad(model, batch)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(f"epoch {epoch}: {exc}") from None
            adam_step(adam, trainable, [g for g, m in zip(grads, mask) if m])
        train_loss, val_loss = evaluate()
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: train {train_loss}, validation {val_loss}")
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best - config.tol:
            best, best_epoch, best_params = val_loss, epoch, [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for p, b in zip(params, best_params):
        p[...] = b
    history["best_epoch"] = best_epoch
    history["epochs_run"] = len(history["train_loss"]) - 1
    model.history = history
    return model


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, model: NRelaggsModel, extra: dict | None = None) -> None:
    """npz archive: JSON header (version, plan fingerprint, widths, config, extra) + flat parameter arrays."""
    header = {
        "version": CHECKPOINT_VERSION,
        "plan": model.plan.fingerprint(),
        "plan_steps": [[list(n), c] for n, c in model.plan.steps],
        "table_order": list(model.plan.table_order),
        "widths": list(model.widths),
        "config": model.config.to_dict(),
        "extra": extra or {},
    }
    arrays = {f"p{i:03d}": p for i, p in enumerate(model.parameters())}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path: str | Path, plan: AggregationPlan | None = None) -> tuple[NRelaggsModel, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        stored = AggregationPlan(
            tuple((tuple(n), c) for n, c in header["plan_steps"]), tuple(header["table_order"]), True
        )
        if plan is not None and plan.fingerprint() != header["plan"]:
            raise PlanMismatch("checkpoint was trained on a different aggregation plan")
        config = NRelaggsConfig.from_dict(header["config"])
        model = build_model(header["widths"], stored, config)
        params = model.parameters()
        keys = sorted(k for k in data.files if k.startswith("p"))
        if len(keys) != len(params):
            raise PlanMismatch("checkpoint parameter count does not match the model layout")
        for p, k in zip(params, keys):
            p[...] = data[k]
    return model, header["extra"]
