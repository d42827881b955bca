"""Personalized federated learning with gradient-selected parameter masks."""

from .config import AlgorithmSpec, DataConfig, FLConfig, load_config
from .local_update import LocalConfig, grad_select, local_alt
from .model import Batch, ConfigError, LayerSpec, Model, masked_sgd_step, mlp_arch
from .server import ClientState, History, RoundReport, aggregate, distribute, run_federation, run_round

__all__ = [
    "AlgorithmSpec",
    "Batch",
    "ClientState",
    "ConfigError",
    "DataConfig",
    "FLConfig",
    "History",
    "LayerSpec",
    "LocalConfig",
    "Model",
    "RoundReport",
    "aggregate",
    "distribute",
    "grad_select",
    "load_config",
    "local_alt",
    "masked_sgd_step",
    "mlp_arch",
    "run_federation",
    "run_round",
]
