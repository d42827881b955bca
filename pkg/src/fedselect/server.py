"""Round orchestration: dispatch local training, masked aggregation, distribution."""

from __future__ import annotations

import json
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import mask as masks
from .config import FLConfig
from .data import Dataset, PartitionSpec, apply_feature_shift, class_assignment, load_csv, shard_partition, synth_blobs
from .local_update import epoch_batches, grad_select
from .metrics import checksum, evaluate_client
from .model import Batch, Model, mlp_arch


@dataclass(frozen=True)
class ClientState:
    id: int
    theta: np.ndarray
    mask: np.ndarray
    train: Dataset
    test: Dataset
    rng_seed: int
    classes: tuple[int, ...] = ()


@dataclass(frozen=True)
class AggregationScratch:
    theta_g: np.ndarray
    omega: np.ndarray
    m_g: np.ndarray


@dataclass
class RoundReport:
    round: int
    per_client_accuracy: list[float]
    per_client_sparsity: list[float]
    per_client_upload: list[int]
    theta_g_checksum: int
    # kept in memory only, for tests and oracles
    theta_g: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.per_client_accuracy))

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "per_client_accuracy": self.per_client_accuracy,
                "mean_accuracy": self.mean_accuracy,
                "per_client_sparsity": self.per_client_sparsity,
                "per_client_upload": self.per_client_upload,
                "theta_g_checksum": self.theta_g_checksum,
            }
        )


@dataclass
class History:
    initial: list[ClientState]
    reports: list[RoundReport] = field(default_factory=list)
    clients: list[ClientState] = field(default_factory=list)
    # per-round (N, d) parameter and mask stacks; index 0 is the initial state
    thetas: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)


BatchProvider = Callable[[ClientState, int], Sequence[Sequence[Batch]]]
RoundHook = Callable[[int, list[ClientState], RoundReport], None]


def client_rng(client: ClientState, round_index: int) -> np.random.Generator:
    """Private stream per (client, round); independent of execution order."""
    return np.random.default_rng([client.rng_seed, round_index])


def default_batches(cfg: FLConfig) -> BatchProvider:
    def provide(client: ClientState, round_index: int) -> list[list[Batch]]:
        rng = client_rng(client, round_index)
        return epoch_batches(client.train, cfg.local.batch_size, cfg.local.local_epochs, rng)

    return provide


def map_clients(fn: Callable, clients: Sequence[ClientState], executor: Executor | None) -> list:
    if executor is None:
        return [fn(c) for c in clients]
    return list(executor.map(fn, clients))


def aggregate(updates: Sequence[tuple[np.ndarray, np.ndarray]]) -> AggregationScratch:
    """Average each position over the clients whose mask is 0 there.

    Sums run in list order so results are reproducible bit for bit.
    """
    if not updates:
        raise ValueError("aggregate needs at least one client update")
    d = updates[0][0].shape[0]
    theta_g = np.zeros(d)
    omega = np.zeros(d, dtype=np.int64)
    for theta, m in updates:
        if theta.shape != (d,) or m.shape != (d,):
            raise ValueError("all client parameters and masks must share dimension d")
        theta_g = theta_g + np.where(m, 0.0, theta)
        omega += ~m
    m_g = omega != 0
    theta_g = np.divide(theta_g, omega, out=np.zeros(d), where=m_g)
    return AggregationScratch(theta_g, omega, m_g)


def distribute(
    scratch: AggregationScratch,
    client: ClientState,
    v_plus: np.ndarray,
    m_old: np.ndarray,
    m_new: np.ndarray,
) -> ClientState:
    """Install global values on the client's old global positions and switch masks.

    ``v_plus`` is the client's locally trained parameter vector; its
    personalized entries are kept, and its global entries survive only where
    no client contributed a global value.
    """
    if not masks.is_subset(m_old, m_new):
        raise ValueError(f"client {client.id}: new mask drops personalized positions")
    theta = np.where(m_old, v_plus, np.where(scratch.m_g, scratch.theta_g, v_plus))
    return replace(client, theta=theta, mask=m_new)


def make_report(
    model: Model,
    round_index: int,
    clients: Sequence[ClientState],
    eval_thetas: Sequence[np.ndarray],
    uploads: Sequence[int],
    theta_g: np.ndarray,
) -> RoundReport:
    return RoundReport(
        round=round_index,
        per_client_accuracy=[evaluate_client(model, th, c.test) for c, th in zip(clients, eval_thetas)],
        per_client_sparsity=[masks.personalized_fraction(c.mask) for c in clients],
        per_client_upload=[int(u) for u in uploads],
        theta_g_checksum=checksum(theta_g),
        theta_g=theta_g,
    )


def run_round(
    model: Model,
    clients: Sequence[ClientState],
    cfg: FLConfig,
    round_index: int,
    executor: Executor | None = None,
    batch_provider: BatchProvider | None = None,
) -> tuple[list[ClientState], RoundReport]:
    """One communication round for the mask-based algorithm family.

    Covers FedSelect and its ablations: the selection rule and whether
    masks grow at all depend on ``cfg.algorithm.kind``.
    """
    kind = cfg.algorithm.kind
    select = masks.select_bottom_p if kind == "personalize_least" else masks.select_top_p
    grow = kind in ("fedselect", "personalize_least")
    provide = batch_provider or default_batches(cfg)

    def work(c: ClientState) -> tuple[np.ndarray, np.ndarray]:
        return grad_select(model, c.theta, c.mask, provide(c, round_index), cfg.local, select, grow)

    results = map_clients(work, clients, executor)
    scratch = aggregate([(theta, c.mask) for (theta, _), c in zip(results, clients)])
    uploads = [int(np.count_nonzero(~c.mask)) for c in clients]
    new_clients = [
        distribute(scratch, c, theta, c.mask, m_next) for (theta, m_next), c in zip(results, clients)
    ]
    report = make_report(model, round_index, new_clients, [c.theta for c in new_clients], uploads, scratch.theta_g)
    return new_clients, report


def build_model(cfg: FLConfig, input_dim: int, n_classes: int) -> Model:
    return Model(tuple(mlp_arch(input_dim, cfg.hidden, n_classes)))


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


def initial_masks(model: Model, cfg: FLConfig) -> np.ndarray:
    spec = cfg.algorithm
    if spec.kind == "fixed_partition":
        return masks.layer_mask(model, spec.partition_layer)
    if spec.kind == "random_partition":
        from .baselines import random_partition

        return random_partition(model.d, spec.partition_fraction, derive_seed(cfg.seed, 5))
    return masks.zeros(model.d)


def build_federation(cfg: FLConfig) -> tuple[Model, list[ClientState]]:
    """Synthesize or load data, partition it and initialize every client identically."""
    dc = cfg.data
    if dc.source == "csv":
        pool = load_csv(dc.csv_path)
    else:
        n_per_class = dc.n_per_class
        if n_per_class == 0:
            per_class = np.zeros(dc.n_classes, dtype=int)
            for cls in class_assignment(cfg.n_clients, dc.n_classes, dc.shard):
                for c in cls:
                    per_class[c] += -(-(dc.train_size + dc.test_size) // len(cls))
            n_per_class = max(int(per_class.max()), 1)
        pool = synth_blobs(dc.n_classes, dc.input_dim, n_per_class, dc.spread, derive_seed(cfg.seed, 1), dc.latent_dim)
    spec = PartitionSpec(cfg.n_clients, dc.shard, dc.train_size, dc.test_size, derive_seed(cfg.seed, 4))
    parts = shard_partition(pool, spec)
    model = build_model(cfg, pool.input_dim, pool.class_count)
    theta0 = model.init_params(derive_seed(cfg.seed, 2))
    m0 = initial_masks(model, cfg)
    clients = []
    for k, part in enumerate(parts):
        train, test = part.train, part.test
        if dc.feature_shift > 0:
            shift_seed = derive_seed(cfg.seed, 6)
            train = apply_feature_shift(train, k, dc.feature_shift, shift_seed, noise_stream=0)
            test = apply_feature_shift(test, k, dc.feature_shift, shift_seed, noise_stream=1)
        clients.append(
            ClientState(k, theta0.copy(), m0.copy(), train, test, derive_seed(cfg.seed, 3, k), part.classes)
        )
    return model, clients


def run_federation(
    cfg: FLConfig,
    model: Model | None = None,
    clients: Sequence[ClientState] | None = None,
    start_round: int = 0,
    record_trajectory: bool = False,
    on_round: RoundHook | None = None,
    batch_provider: BatchProvider | None = None,
) -> History:
    """Run ``cfg.rounds`` rounds of the configured algorithm.

    ``model``/``clients`` default to :func:`build_federation`; passing them
    lets a run resume from an existing state at ``start_round``.
    """
    from . import baselines

    if clients is None:
        model, clients = build_federation(cfg)
    elif model is None:
        raise ValueError("pass the model together with clients")
    clients = list(clients)
    history = History(initial=clients)
    if record_trajectory:
        history.thetas.append(np.stack([c.theta for c in clients]))
        history.masks.append(np.stack([c.mask for c in clients]))

    kind = cfg.algorithm.kind
    if kind in ("fedavg", "fedavg_ft"):
        step = baselines.fedavg_round
    elif kind == "local_only":
        step = baselines.local_only_round
    else:
        step = run_round

    executor = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(start_round, start_round + cfg.rounds):
            clients, report = step(model, clients, cfg, t, executor, batch_provider)
            history.reports.append(report)
            if record_trajectory:
                history.thetas.append(np.stack([c.theta for c in clients]))
                history.masks.append(np.stack([c.mask for c in clients]))
            if on_round is not None:
                on_round(t, clients, report)
        if kind == "fedavg_ft" and cfg.algorithm.ft_epochs:
            lr = cfg.algorithm.ft_lr if cfg.algorithm.ft_lr is not None else cfg.local.gamma_v
            clients = baselines.fedavg_ft(
                model, clients, cfg.algorithm.ft_epochs, lr, cfg.local.batch_size,
                start_round + cfg.rounds, executor,
            )
            last = history.reports[-1] if history.reports else None
            report = make_report(
                model, start_round + cfg.rounds, clients, [c.theta for c in clients],
                [0] * len(clients), last.theta_g if last is not None else np.zeros(model.d),
            )
            history.reports.append(report)
            if on_round is not None:
                on_round(start_round + cfg.rounds, clients, report)
    finally:
        if executor is not None:
            executor.shutdown()
    history.clients = clients
    return history
