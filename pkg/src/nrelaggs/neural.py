"""Differentiable primitives with hand-written backward passes.

All functions are dtype-preserving: models run in float32, gradient checks
run the same code in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadSegmentIndex, LabelDomain, ShapeMismatch

AGGREGATES = ("sum", "mean", "min", "max")


# --------------------------------------------------------------------------- dense


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ("linear", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch(f"weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.bias]


def glorot_dense(rng: np.random.Generator, n_in: int, n_out: int, activation="linear", dtype=np.float32) -> DenseLayer:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero bias."""
    a = np.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-a, a, size=(n_in, n_out)).astype(dtype)
    return DenseLayer(w, np.zeros(n_out, dtype=dtype), activation)


def identity_dense(n: int, dtype=np.float32) -> DenseLayer:
    return DenseLayer(np.eye(n, dtype=dtype), np.zeros(n, dtype=dtype), "linear")


def dense_forward(layer: DenseLayer, X: np.ndarray) -> np.ndarray:
    if X.ndim != 2 or X.shape[1] != layer.n_in:
        raise ShapeMismatch(f"input {X.shape} does not fit layer with {layer.n_in} inputs")
    out = X @ layer.weights + layer.bias
    if layer.activation == "relu":
        out = np.maximum(out, 0)
    return out


def dense_backward(layer: DenseLayer, X: np.ndarray, out: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_X, grad_weights, grad_bias) given the forward input and output."""
    if grad_out.shape != out.shape:
        raise ShapeMismatch(f"gradient {grad_out.shape} vs output {out.shape}")
    if layer.activation == "relu":
        grad_out = grad_out * (out > 0)
    return grad_out @ layer.weights.T, X.T @ grad_out, grad_out.sum(axis=0)


# --------------------------------------------------------------------------- segments


@dataclass(frozen=True)
class SegmentIndex:
    """Nondecreasing segment id per row; segments may be empty."""

    ids: np.ndarray
    n_segments: int
    counts: np.ndarray = field(init=False, repr=False, compare=False)
    starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 1 or (ids.size and not np.issubdtype(ids.dtype, np.integer)):
            raise BadSegmentIndex("segment ids must be a 1-d integer vector")
        ids = ids.astype(np.int64)
        if ids.size:
            if ids[0] < 0 or ids[-1] >= self.n_segments:
                raise BadSegmentIndex(f"segment ids outside [0, {self.n_segments})")
            if np.any(np.diff(ids) < 0):
                raise BadSegmentIndex("segment ids must be nondecreasing")
        counts = np.bincount(ids, minlength=self.n_segments)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "starts", np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64))

    @property
    def nonempty(self) -> np.ndarray:
        return self.counts > 0


def _check_rows(X: np.ndarray, seg: SegmentIndex) -> None:
    if X.ndim != 2 or X.shape[0] != len(seg.ids):
        raise BadSegmentIndex(f"{len(seg.ids)} segment ids for input of shape {X.shape}")


def segment_aggregate(X: np.ndarray, seg: SegmentIndex, kind: str) -> np.ndarray:
    """Per-segment column reduction; empty segments give zeros for every kind."""
    _check_rows(X, seg)
    out = np.zeros((seg.n_segments, X.shape[1]), dtype=X.dtype)
    nonempty = seg.nonempty
    if not nonempty.any() or X.shape[1] == 0:
        return out
    starts = seg.starts[nonempty]
    if kind == "sum":
        out[nonempty] = np.add.reduceat(X, starts, axis=0)
    elif kind == "mean":
        out[nonempty] = np.add.reduceat(X, starts, axis=0) / seg.counts[nonempty, None].astype(X.dtype)
    elif kind == "min":
        out[nonempty] = np.minimum.reduceat(X, starts, axis=0)
    elif kind == "max":
        out[nonempty] = np.maximum.reduceat(X, starts, axis=0)
    else:
        raise ValueError(f"unknown aggregate {kind!r}")
    return out


def segment_aggregate_backward(
    grad_out: np.ndarray, X: np.ndarray, seg: SegmentIndex, kind: str, out: np.ndarray | None = None
) -> np.ndarray:
    """Adjoint of segment_aggregate.

    min/max route each segment's gradient to the first row attaining the
    extremum in that column.
    """
    _check_rows(X, seg)
    if grad_out.shape != (seg.n_segments, X.shape[1]):
        raise ShapeMismatch(f"gradient {grad_out.shape}, expected {(seg.n_segments, X.shape[1])}")
    if kind == "sum":
        return grad_out[seg.ids]
    if kind == "mean":
        return grad_out[seg.ids] / seg.counts[seg.ids, None].astype(grad_out.dtype)
    if kind not in ("min", "max"):
        raise ValueError(f"unknown aggregate {kind!r}")
    if out is None:
        out = segment_aggregate(X, seg, kind)
    grad_X = np.zeros_like(X, dtype=grad_out.dtype)
    m, l = X.shape
    if m == 0 or l == 0:
        return grad_X
    nonempty = seg.nonempty
    row = np.where(X == out[seg.ids], np.arange(m)[:, None], m)
    first = np.minimum.reduceat(row, seg.starts[nonempty], axis=0)
    cols = np.broadcast_to(np.arange(l), first.shape)
    hit = first < m  # false only when the column holds NaN
    grad_X[first[hit], cols[hit]] = grad_out[nonempty][hit]
    return grad_X


# --------------------------------------------------------------------------- loss


def hinge_loss(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of max(0, 1 - y*s) and its (sub)gradient w.r.t. the scores."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs labels {labels.shape}")
    if not np.all((labels == 1) | (labels == -1)):
        raise LabelDomain("labels must be -1 or +1")
    n = len(scores)
    if n == 0:
        return 0.0, np.zeros_like(scores)
    y = labels.astype(scores.dtype)
    margin = 1 - y * scores
    violated = margin > 0
    loss = float(np.maximum(margin, 0).sum() / n)  # np.maximum keeps NaN visible
    grad = np.where(violated, -y / n, 0).astype(scores.dtype)
    return loss, grad


# --------------------------------------------------------------------------- adam


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ShapeMismatch("parameter, gradient and moment lists differ in length")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if p.shape != g.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= (state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params
