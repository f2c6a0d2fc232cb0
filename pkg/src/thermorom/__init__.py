"""Thermodynamics-aware reduced-order modelling.

A sparse autoencoder finds a small latent description of full-order
snapshots; a structure-preserving network integrates that latent state with
a metriplectic (energy-conserving, entropy-producing) update.
"""

from .baseline import UnconstrainedIntegrator
from .dataset import Trajectory, load_trajectory, save_trajectory, split
from .pod import PODReducer
from .rollout import rollout
from .sae import BlockSparseAutoencoder, SparseAutoencoder
from .spnn import StructurePreservingIntegrator

__all__ = [
    "BlockSparseAutoencoder",
    "PODReducer",
    "SparseAutoencoder",
    "StructurePreservingIntegrator",
    "Trajectory",
    "UnconstrainedIntegrator",
    "load_trajectory",
    "rollout",
    "save_trajectory",
    "split",
]

__version__ = "0.1.0"
