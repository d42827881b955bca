import numpy as np
import pytest

from fedselect import AlgorithmSpec, DataConfig, FLConfig, LocalConfig
from fedselect.model import Model, mlp_arch


@pytest.fixture
def tiny_model() -> Model:
    # 2 -> 3 relu -> 2 logits, d = 17
    return Model(tuple(mlp_arch(2, (3,), 2)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def small_cfg(**local) -> FLConfig:
    kind = local.pop("kind", "fedselect")
    n_clients = local.pop("n_clients", 3)
    rounds = local.pop("rounds", 3)
    defaults = dict(local_epochs=1, batch_size=8, gamma_u=0.05, gamma_v=0.1, p=0.2, alpha=0.5)
    defaults.update(local)
    return FLConfig(
        n_clients=n_clients,
        rounds=rounds,
        hidden=(8,),
        algorithm=AlgorithmSpec(kind),
        local=LocalConfig(**defaults),
        data=DataConfig(n_classes=4, input_dim=5, shard=2, train_size=16, test_size=8),
    )


@pytest.fixture
def cfg() -> FLConfig:
    return small_cfg()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
