"""Deterministic federated-learning simulator with fake-client model
poisoning, robust aggregation rules, and norm clipping."""

from .aggregation import AggregationRule, ClientUpdate
from .attacks import AttackSpec, AttackerState
from .data import Dataset, PartitionPlan
from .engine import DataConfig, RoundRecord, SimConfig, run_simulation, summarize
from .model import Batch, MlpSpec
from .vectors import NonFiniteError, derive_stream

__all__ = [
    "AggregationRule",
    "AttackSpec",
    "AttackerState",
    "Batch",
    "ClientUpdate",
    "DataConfig",
    "Dataset",
    "MlpSpec",
    "NonFiniteError",
    "PartitionPlan",
    "RoundRecord",
    "SimConfig",
    "derive_stream",
    "run_simulation",
    "summarize",
]
