"""Independent checks: finite-difference gradients, mask convergence, and
equivalence of frozen-mask rounds with centralized block SGD.

The block-SGD oracle re-derives every update from the union problem over
shared and personalized coordinates; it shares only the model's gradient
routine with the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mask as masks
from .config import FLConfig
from .local_update import epoch_batches
from .model import Batch, Model
from .server import ClientState, build_federation, client_rng, run_federation, run_round


class PreconditionError(RuntimeError):
    """An oracle was invoked on a state it does not cover."""


def finite_difference_gradient(model: Model, params: np.ndarray, batch: Batch, step: float = 1e-5) -> np.ndarray:
    if step <= 0:
        raise ValueError("step must be positive")
    out = np.empty_like(params)
    probe = params.copy()
    for i in range(params.size):
        orig = probe[i]
        probe[i] = orig + step
        up = model.forward_loss(probe, batch)
        probe[i] = orig - step
        down = model.forward_loss(probe, batch)
        probe[i] = orig
        out[i] = (up - down) / (2 * step)
    return out


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest coordinate error scaled by the gradient's max-norm."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


# -- mask convergence ---------------------------------------------------------


def growth_steps(d: int, p: float, alpha: float) -> int:
    """Exact number of growth rounds under the ceiling selection rule."""
    remaining, steps = d, 0
    while (d - remaining) / d < alpha:
        remaining -= masks.selection_count(remaining, p)
        steps += 1
    return steps


def mask_convergence_bound(p: float, alpha: float, d: int | None = None) -> int:
    """``ceil(log(1-alpha)/log(1-p)) + 1``.

    The degenerate ``alpha = 1`` case has no finite geometric bound; the exact
    step count for dimension ``d`` is used instead.
    """
    if alpha <= 0:
        return 1
    if p >= 1:
        return 2
    if alpha >= 1:
        if d is None:
            raise ValueError("alpha = 1 needs the parameter dimension")
        return growth_steps(d, p, alpha) + 1
    return math.ceil(math.log(1 - alpha) / math.log(1 - p)) + 1


@dataclass
class Theorem1Result:
    convergence_round: int
    bound: int
    monotone: bool
    final_fractions: list[float]
    alpha: float
    p: float

    @property
    def fractions_in_range(self) -> bool:
        lo, hi = self.alpha, self.alpha + self.p
        if self.alpha == 0:
            return all(f == 0 for f in self.final_fractions)
        return all(lo <= f <= hi + 1e-12 for f in self.final_fractions)

    @property
    def passed(self) -> bool:
        return self.convergence_round <= self.bound and self.monotone and self.fractions_in_range


def mask_convergence_round(mask_history: Sequence[np.ndarray]) -> int:
    """First index after which the stacked masks never change again."""
    last = len(mask_history) - 1
    t = last
    while t > 0 and np.array_equal(mask_history[t - 1], mask_history[last]):
        t -= 1
    return t


def verify_theorem1(cfg: FLConfig) -> Theorem1Result:
    """Run FedSelect long enough to observe the masks settle and check the bound."""
    model, clients = build_federation(cfg)
    bound = mask_convergence_bound(cfg.local.p, cfg.local.alpha, model.d)
    rounds = max(cfg.rounds, bound + 2)
    hist = run_federation(cfg.replace(rounds=rounds), model, clients, record_trajectory=True)
    monotone = all(
        masks.is_subset(a, b) for prev, cur in zip(hist.masks, hist.masks[1:]) for a, b in zip(prev, cur)
    )
    return Theorem1Result(
        convergence_round=mask_convergence_round(hist.masks),
        bound=bound,
        monotone=monotone,
        final_fractions=[masks.personalized_fraction(m) for m in hist.masks[-1]],
        alpha=cfg.local.alpha,
        p=cfg.local.p,
    )


# -- block SGD equivalence -----------------------------------------------------


@dataclass
class UnionProblem:
    """Shared coordinates ``U`` plus per-client personalized coordinates ``V``.

    ``shared`` holds one value per index (meaningful where some client's mask
    is 0); ``personal[k]`` holds client ``k``'s values where its mask is 1.
    """

    model: Model
    frozen_masks: np.ndarray
    shared: np.ndarray
    personal: np.ndarray
    gamma_u: float
    gamma_v: float
    effective_lr: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        n = len(self.frozen_masks)
        contributors = (~self.frozen_masks).sum(axis=0)
        self.effective_lr = np.zeros(self.shared.shape)
        has = contributors > 0
        self.effective_lr[has] = self.gamma_u * n / contributors[has]

    @property
    def n_clients(self) -> int:
        return len(self.frozen_masks)

    @property
    def shared_index(self) -> np.ndarray:
        return ~self.frozen_masks.all(axis=0)

    def client_theta(self, k: int) -> np.ndarray:
        return np.where(self.frozen_masks[k], self.personal[k], self.shared)

    @classmethod
    def from_clients(cls, model: Model, clients: Sequence[ClientState], gamma_u: float, gamma_v: float) -> "UnionProblem":
        m = np.stack([c.mask for c in clients])
        thetas = np.stack([c.theta for c in clients])
        shared = np.zeros(model.d)
        for i in np.flatnonzero(~m.all(axis=0)):
            vals = thetas[~m[:, i], i]
            if not np.all(vals == vals[0]):
                raise PreconditionError(f"clients disagree on shared coordinate {i}")
            shared[i] = vals[0]
        personal = np.where(m, thetas, 0.0)
        return cls(model, m, shared, personal, gamma_u, gamma_v)


def centralized_block_sgd_round(
    prob: UnionProblem, client_batches: Sequence[Batch], lr_perturbation: float = 0.0
) -> UnionProblem:
    """V-block SGD per client at ``gamma_v``, then one U-block SGD step on
    ``F = (1/N) sum_k f_k`` at the per-index rate ``gamma_u * N / contributors``.
    """
    n = prob.n_clients
    personal = prob.personal.copy()
    for k in range(n):
        g = prob.model.gradient(prob.client_theta(k), client_batches[k])
        personal[k] = np.where(prob.frozen_masks[k], personal[k] - prob.gamma_v * g, personal[k])
    stepped = UnionProblem(prob.model, prob.frozen_masks, prob.shared, personal, prob.gamma_u, prob.gamma_v)

    dF_dU = np.zeros(prob.model.d)
    for k in range(n):
        g = prob.model.gradient(stepped.client_theta(k), client_batches[k])
        dF_dU += np.where(prob.frozen_masks[k], 0.0, g)
    dF_dU /= n
    lr = np.where(prob.effective_lr > 0, prob.effective_lr + lr_perturbation, 0.0)
    shared = prob.shared - lr * dF_dU
    return UnionProblem(prob.model, prob.frozen_masks, shared, personal, prob.gamma_u, prob.gamma_v)


@dataclass
class Theorem2Result:
    max_deviation: float
    per_round: list[float]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tol


def appendix_masks(d: int, n_clients: int = 3) -> np.ndarray:
    """Tile the 3-client, 4-index example: index group 0 is personalized by all
    clients, group ``k+1`` only by client ``k``."""
    group = np.arange(d) % (n_clients + 1)
    return np.stack([(group == 0) | (group == k + 1) for k in range(n_clients)])


def minibatch_tape(cfg: FLConfig, batch_size: int):
    """One shared minibatch per (client, round), drawn from the client's stream."""

    def provide(client: ClientState, round_index: int) -> list[list[Batch]]:
        rng = client_rng(client, round_index)
        idx = rng.choice(len(client.train), size=min(batch_size, len(client.train)), replace=False)
        return [[Batch(client.train.inputs[idx], client.train.labels[idx])]]

    return provide


def full_batch_tape(client: ClientState, round_index: int) -> list[list[Batch]]:
    return [[client.train.as_batch()]]


def verify_theorem2(
    cfg: FLConfig,
    rounds: int,
    tol: float = 1e-10,
    model: Model | None = None,
    clients: Sequence[ClientState] | None = None,
    minibatch: int | None = None,
    lr_perturbation: float = 0.0,
) -> Theorem2Result:
    """Run engine rounds and oracle rounds in lockstep from the same frozen state.

    Both sides consume the same batch tape: full local data by default, or a
    seeded minibatch of size ``minibatch`` per client and round.
    """
    if cfg.local.local_epochs != 1:
        raise PreconditionError("equivalence holds for one LocalAlt epoch per round")
    if clients is None:
        model, clients = build_federation(cfg)
    elif model is None:
        raise ValueError("pass the model together with clients")
    for c in clients:
        if cfg.algorithm.kind in ("fedselect", "personalize_least") and masks.personalized_fraction(c.mask) < cfg.local.alpha:
            raise PreconditionError(f"client {c.id} mask is still growing")
    tape = full_batch_tape if minibatch is None else minibatch_tape(cfg, minibatch)

    prob = UnionProblem.from_clients(model, clients, cfg.local.gamma_u, cfg.local.gamma_v)
    clients = list(clients)
    per_round = []
    for t in range(rounds):
        batches = [tape(c, t)[0][0] for c in clients]
        clients, _ = run_round(model, clients, cfg, t, batch_provider=tape)
        prob = centralized_block_sgd_round(prob, batches, lr_perturbation)
        dev = max(float(np.abs(c.theta - prob.client_theta(k)).max()) for k, c in enumerate(clients))
        per_round.append(dev)
    return Theorem2Result(max(per_round, default=0.0), per_round, tol)


def freeze_masks(cfg: FLConfig, max_rounds: int = 1000) -> tuple[Model, list[ClientState], int]:
    """Run FedSelect from scratch until no client mask can grow any more."""
    model, clients = build_federation(cfg)
    for t in range(max_rounds):
        if all(masks.personalized_fraction(c.mask) >= cfg.local.alpha for c in clients):
            return model, clients, t
        clients, _ = run_round(model, clients, cfg, t, batch_provider=full_batch_tape)
    raise PreconditionError(f"masks still growing after {max_rounds} rounds")
