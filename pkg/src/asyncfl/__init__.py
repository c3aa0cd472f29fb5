"""Deterministic simulator for asynchronous federated learning with periodic
aggregation: device scheduling policies, staleness-aware aggregation, and the
synchronous FedAvg baseline."""

from .config import ExperimentConfig, load_config
from .data import Dataset, Partition, gen_synthetic, load_idx
from .engine import MetricsTrace, SimConfig, run_simulation
from .model import ModelParams, TrainingHyper
from .server import GAMMA_FRESH, GAMMA_OLD, PolicyConfig

__all__ = [
    "Dataset", "ExperimentConfig", "GAMMA_FRESH", "GAMMA_OLD", "MetricsTrace",
    "ModelParams", "Partition", "PolicyConfig", "SimConfig", "TrainingHyper",
    "gen_synthetic", "load_config", "load_idx", "run_simulation",
]
