"""Binary parameter masks.

A mask is a boolean numpy array aligned with a flat parameter vector.
``True`` marks a personalized position, ``False`` a global (shared) one.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .model import Model


class EmptySelectionWarning(RuntimeWarning):
    """Selection was requested over an empty set of eligible positions."""


def zeros(d: int) -> np.ndarray:
    return np.zeros(d, dtype=bool)


def ones(d: int) -> np.ndarray:
    return np.ones(d, dtype=bool)


def _same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask length mismatch: {a.shape} vs {b.shape}")


def invert(m: np.ndarray) -> np.ndarray:
    return ~np.asarray(m, dtype=bool)


def union(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_length(a, b)
    return np.logical_or(a, b)


def is_subset(a: np.ndarray, b: np.ndarray) -> bool:
    """True when every set bit of ``a`` is also set in ``b``."""
    _same_length(a, b)
    return not np.any(a & ~b)


def personalized_fraction(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    return int(np.count_nonzero(m)) / m.size


def selection_count(n_eligible: int, p: float) -> int:
    if n_eligible == 0:
        return 0
    return max(1, min(n_eligible, math.ceil(p * n_eligible)))


def _select(delta: np.ndarray, eligible: np.ndarray, p: float, largest: bool) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    _same_length(delta, eligible)
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    idx = np.flatnonzero(eligible)
    out = zeros(delta.size)
    if idx.size == 0:
        warnings.warn("no eligible positions to select from", EmptySelectionWarning, stacklevel=3)
        return out
    c = selection_count(idx.size, p)
    keys = -delta[idx] if largest else delta[idx]
    # stable sort keeps ascending index order among equal keys
    order = np.argsort(keys, kind="stable")
    out[idx[order[:c]]] = True
    return out


def select_top_p(delta: np.ndarray, eligible: np.ndarray, p: float) -> np.ndarray:
    """Mask of the ``ceil(p * |eligible|)`` eligible positions with largest ``delta``.

    Ties go to the lower index. At least one position is selected whenever
    any position is eligible.
    """
    return _select(delta, eligible, p, largest=True)


def select_bottom_p(delta: np.ndarray, eligible: np.ndarray, p: float) -> np.ndarray:
    """Like :func:`select_top_p` but picks the smallest ``delta`` values."""
    return _select(delta, eligible, p, largest=False)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    _same_length(a, b)
    union_count = int(np.count_nonzero(a | b))
    if union_count == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union_count


def layer_mask(model: Model, layer: int) -> np.ndarray:
    """Ones over one layer's weights and bias. Negative ids count from the end."""
    n = len(model.spans)
    if not -n <= layer < n:
        raise KeyError(f"unknown layer {layer}; model has {n} layers")
    span = model.spans[layer]
    out = zeros(model.d)
    out[span.start : span.stop] = True
    return out


def to_rle(m: np.ndarray) -> str:
    """Run-length text form: ``"<first bit>:<run>,<run>,..."``."""
    m = np.asarray(m, dtype=bool)
    if m.size == 0:
        return "0:"
    edges = np.flatnonzero(m[1:] != m[:-1]) + 1
    bounds = np.concatenate([[0], edges, [m.size]])
    return f"{int(m[0])}:" + ",".join(str(n) for n in np.diff(bounds))


def from_rle(text: str) -> np.ndarray:
    head, _, body = text.partition(":")
    if head not in ("0", "1"):
        raise ValueError(f"bad run-length mask {text!r}")
    if not body:
        return zeros(0)
    runs = [int(r) for r in body.split(",")]
    if any(r <= 0 for r in runs):
        raise ValueError(f"bad run-length mask {text!r}")
    bit = head == "1"
    parts = []
    for r in runs:
        parts.append(np.full(r, bit))
        bit = not bit
    return np.concatenate(parts)
