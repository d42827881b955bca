"""Comparison algorithms and ablations on the shared engine.

The mask-based ablations (fixed partition, Personalize-Least, random
partition) run through :func:`fedselect.server.run_round`; this module holds
the algorithms that do not use client masks plus the selection variants.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import replace
from typing import Sequence

import numpy as np

from . import mask as masks
from .config import FLConfig
from .local_update import epoch_batches, sgd_pass
from .model import Model
from .server import (
    BatchProvider,
    ClientState,
    RoundReport,
    client_rng,
    default_batches,
    make_report,
    map_clients,
)

personalize_least_select = masks.select_bottom_p


def random_partition(d: int, fraction: float, seed: int) -> np.ndarray:
    """``ceil(fraction * d)`` personalized positions sampled without replacement."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out = masks.zeros(d)
    out[rng.choice(d, size=math.ceil(fraction * d), replace=False)] = True
    return out


def fedavg_round(
    model: Model,
    clients: Sequence[ClientState],
    cfg: FLConfig,
    round_index: int,
    executor: Executor | None = None,
    batch_provider: BatchProvider | None = None,
) -> tuple[list[ClientState], RoundReport]:
    """Plain local SGD at ``gamma_u`` on every parameter, then a uniform average."""
    provide = batch_provider or default_batches(cfg)
    everything = masks.ones(model.d)

    def work(c: ClientState) -> np.ndarray:
        theta = c.theta
        for batch_seq in provide(c, round_index):
            theta = sgd_pass(model, theta, everything, batch_seq, cfg.local.gamma_u, cfg.local.momentum)
        return theta

    thetas = map_clients(work, clients, executor)
    total = np.zeros(model.d)
    for theta in thetas:
        total = total + theta
    theta_g = total / len(thetas)
    new_clients = [replace(c, theta=theta_g.copy()) for c in clients]
    report = make_report(
        model, round_index, new_clients, [theta_g] * len(clients), [model.d] * len(clients), theta_g
    )
    return new_clients, report


def local_only_round(
    model: Model,
    clients: Sequence[ClientState],
    cfg: FLConfig,
    round_index: int,
    executor: Executor | None = None,
    batch_provider: BatchProvider | None = None,
) -> tuple[list[ClientState], RoundReport]:
    """Independent local SGD at ``gamma_v``; nothing is uploaded."""
    provide = batch_provider or default_batches(cfg)
    everything = masks.ones(model.d)

    def work(c: ClientState) -> ClientState:
        theta = c.theta
        for batch_seq in provide(c, round_index):
            theta = sgd_pass(model, theta, everything, batch_seq, cfg.local.gamma_v, cfg.local.momentum)
        return replace(c, theta=theta, mask=everything)

    new_clients = map_clients(work, clients, executor)
    report = make_report(
        model, round_index, new_clients, [c.theta for c in new_clients], [0] * len(clients), np.zeros(model.d)
    )
    return new_clients, report


def fedavg_ft(
    model: Model,
    clients: Sequence[ClientState],
    ft_epochs: int,
    lr: float,
    batch_size: int,
    round_index: int,
    executor: Executor | None = None,
) -> list[ClientState]:
    """Fine-tune each client's copy of the final global model on its own data."""
    everything = masks.ones(model.d)

    def work(c: ClientState) -> ClientState:
        theta = c.theta
        for batch_seq in epoch_batches(c.train, batch_size, ft_epochs, client_rng(c, round_index)):
            theta = sgd_pass(model, theta, everything, batch_seq, lr)
        return replace(c, theta=theta)

    return map_clients(work, clients, executor)
