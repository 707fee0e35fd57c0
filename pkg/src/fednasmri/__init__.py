"""Federated differentiable architecture search for unrolled MRI reconstruction,
simulated in a single process on synthetic phantoms."""

from .federation import FederationConfig, searcher_run, trainer_run, update_fair_weights
from .reconstructor import UnrolledModel, data_consistency
from .search_space import CellStack, DiscreteArch, OpKind, discretize

__version__ = "0.1.0"

__all__ = ["FederationConfig", "searcher_run", "trainer_run", "update_fair_weights",
           "UnrolledModel", "data_consistency", "CellStack", "DiscreteArch", "OpKind", "discretize"]
