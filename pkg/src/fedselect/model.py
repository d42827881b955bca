"""Flat-parameter MLP with analytic gradients.

Every parameter of the network lives in one contiguous float64 vector so
masks, aggregation and SGD steps can all be expressed as elementwise
operations over a single index space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


class Batch(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"

    @property
    def n_params(self) -> int:
        return self.input_dim * self.output_dim + self.output_dim


@dataclass(frozen=True)
class Span:
    layer: int
    weight: tuple[int, int]
    bias: tuple[int, int]

    @property
    def start(self) -> int:
        return self.weight[0]

    @property
    def stop(self) -> int:
        return self.bias[1]


def mlp_arch(input_dim: int, hidden: Sequence[int], n_classes: int) -> list[LayerSpec]:
    dims = [input_dim, *hidden, n_classes]
    return [
        LayerSpec(a, b, "relu" if i < len(dims) - 2 else "identity")
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
    ]


@dataclass(frozen=True)
class Model:
    """An MLP architecture plus the layout of its flat parameter vector.

    Weights of layer ``l`` are stored row-major with shape
    ``(input_dim, output_dim)`` followed by the layer's bias.
    """

    arch: tuple[LayerSpec, ...]
    spans: tuple[Span, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        arch = tuple(self.arch)
        if not arch:
            raise ConfigError("architecture must have at least one layer")
        for i, layer in enumerate(arch):
            if layer.input_dim <= 0 or layer.output_dim <= 0:
                raise ConfigError(f"layer {i}: dimensions must be positive")
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {layer.activation!r}")
        for i, (a, b) in enumerate(zip(arch[:-1], arch[1:])):
            if a.output_dim != b.input_dim:
                raise ConfigError(
                    f"layer {i} outputs {a.output_dim} but layer {i + 1} expects {b.input_dim}"
                )
        if arch[-1].activation != "identity":
            raise ConfigError("final layer must produce logits (identity activation)")
        spans = []
        offset = 0
        for i, layer in enumerate(arch):
            w_end = offset + layer.input_dim * layer.output_dim
            spans.append(Span(i, (offset, w_end), (w_end, w_end + layer.output_dim)))
            offset = w_end + layer.output_dim
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "spans", tuple(spans))

    @property
    def d(self) -> int:
        return self.spans[-1].stop

    @property
    def input_dim(self) -> int:
        return self.arch[0].input_dim

    @property
    def n_classes(self) -> int:
        return self.arch[-1].output_dim

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` per layer into ``params`` (no copies)."""
        if params.shape != (self.d,):
            raise ValueError(f"expected {self.d} parameters, got shape {params.shape}")
        out = []
        for layer, span in zip(self.arch, self.spans):
            w = params[span.weight[0] : span.weight[1]].reshape(layer.input_dim, layer.output_dim)
            out.append((w, params[span.bias[0] : span.bias[1]]))
        return out

    def flatten(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])

    def init_params(self, seed: int) -> np.ndarray:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = np.zeros(self.d)
        for (w, _), layer in zip(self.unflatten(params), self.arch):
            bound = 1.0 / np.sqrt(layer.input_dim)
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        return params

    def _check(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(batch.inputs, dtype=np.float64)
        y = np.asarray(batch.labels)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"inputs must have shape (n, {self.input_dim}), got {x.shape}")
        if len(y) != len(x) or len(y) == 0:
            raise ValueError("batch must be non-empty with one label per row")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        return x, y.astype(np.intp)

    def logits(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        a = np.asarray(inputs, dtype=np.float64)
        for (w, b), layer in zip(self.unflatten(params), self.arch):
            a = a @ w + b
            if layer.activation == "relu":
                a = np.maximum(a, 0.0)
        return a

    def forward_loss(self, params: np.ndarray, batch: Batch) -> float:
        x, y = self._check(batch)
        z = self.logits(params, x)
        zmax = z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
        return float(np.mean(lse - z[np.arange(len(y)), y]))

    def gradient(self, params: np.ndarray, batch: Batch) -> np.ndarray:
        """Exact gradient of :meth:`forward_loss` by backpropagation."""
        x, y = self._check(batch)
        layers = self.unflatten(params)
        acts = [x]
        pre = []
        a = x
        for (w, b), layer in zip(layers, self.arch):
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0) if layer.activation == "relu" else z
            acts.append(a)

        z = acts[-1]
        probs = np.exp(z - z.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(len(y)), y] -= 1.0
        delta = probs / len(y)

        grad = np.empty(self.d)
        grads = self.unflatten(grad)
        for i in reversed(range(len(layers))):
            if self.arch[i].activation == "relu":
                delta = delta * (pre[i] > 0)
            gw, gb = grads[i]
            gw[...] = acts[i].T @ delta
            gb[...] = delta.sum(axis=0)
            if i:
                delta = delta @ layers[i][0].T
        return grad

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. lowest class index on ties
        return np.argmax(self.logits(params, inputs), axis=1)


def masked_sgd_step(
    params: np.ndarray, grad: np.ndarray, active: np.ndarray, lr: float
) -> np.ndarray:
    """One SGD step applied only where ``active`` is set."""
    if not (params.shape == grad.shape == active.shape):
        raise ValueError("params, grad and active mask must share one dimension")
    return np.where(active, params - lr * grad, params)
