"""Client-side training: alternating block SGD and gradient-based mask growth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import mask as masks
from .data import Dataset, batches
from .model import Batch, ConfigError, Model, masked_sgd_step

Selector = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class LocalConfig:
    local_epochs: int = 3
    batch_size: int = 20
    gamma_v: float = 0.1
    gamma_u: float = 0.001
    p: float = 0.05
    alpha: float = 0.5
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("local_epochs and batch_size must be >= 1")
        if self.gamma_v < 0 or self.gamma_u < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"p must lie in (0, 1], got {self.p}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")


def epoch_batches(
    ds: Dataset, batch_size: int, n_epochs: int, rng: np.random.Generator
) -> list[list[Batch]]:
    """One freshly shuffled pass over ``ds`` per epoch."""
    return [batches(ds, batch_size, rng) for _ in range(n_epochs)]


def sgd_pass(
    model: Model,
    theta: np.ndarray,
    active: np.ndarray,
    batch_seq: Sequence[Batch],
    lr: float,
    momentum: float = 0.0,
) -> np.ndarray:
    """One step per batch on the ``active`` block, full gradient projected onto it."""
    if not active.any():
        return theta
    velocity = None
    for b in batch_seq:
        g = model.gradient(theta, b)
        if momentum:
            velocity = g if velocity is None else momentum * velocity + g
            g = velocity
        theta = masked_sgd_step(theta, g, active, lr)
    return theta


def local_alt(
    model: Model,
    theta: np.ndarray,
    m: np.ndarray,
    batch_seq: Sequence[Batch],
    cfg: LocalConfig,
) -> np.ndarray:
    """Personalized block pass at ``gamma_v`` then global block pass at ``gamma_u``.

    Both passes walk the same batch sequence; the global pass sees the
    already updated personalized values.
    """
    if len(batch_seq) == 0:
        raise ValueError("local_alt needs at least one batch")
    if m.shape != theta.shape:
        raise ValueError("mask and parameters differ in length")
    theta = sgd_pass(model, theta, m, batch_seq, cfg.gamma_v, cfg.momentum)
    return sgd_pass(model, theta, ~m, batch_seq, cfg.gamma_u, cfg.momentum)


def grad_select(
    model: Model,
    theta: np.ndarray,
    m: np.ndarray,
    epochs: Sequence[Sequence[Batch]],
    cfg: LocalConfig,
    select: Selector = masks.select_top_p,
    grow: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Train for ``len(epochs)`` LocalAlt epochs, then grow the mask.

    The mask grows only while the personalized fraction is below ``alpha``;
    candidates are the currently global positions ranked by how far they
    moved over the whole call. Returns the trained parameters (still
    partitioned by ``m``) and the next-round mask.
    """
    u0 = theta.copy()
    for batch_seq in epochs:
        theta = local_alt(model, theta, m, batch_seq, cfg)
    if grow and masks.personalized_fraction(m) < cfg.alpha:
        eligible = ~m
        delta = np.where(eligible, np.abs(theta - u0), 0.0)
        m_next = masks.union(m, select(delta, eligible, cfg.p))
    else:
        m_next = m.copy()
    return theta, m_next
