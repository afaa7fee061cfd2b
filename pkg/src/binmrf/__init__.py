"""Fully Bayesian binary Markov random fields with template maximal cliques.

Configuration classes of a template clique carry the clique potentials; a
partition prior groups classes with shared values and reversible jump MCMC
explores the groupings.
"""

__version__ = "0.1.0"

from .configsets import ConfigCatalog, build_catalog, classify
from .errors import BinMRFError, CapExceededError, DataIOError, ValidationError
from .lattice import Boundary, LatticeSpec, TemplateClique
from .likelihood import gibbs_sample, log_z_brute, log_z_transfer, make_engine
from .model import BinaryImage, CovariateField, PartitionState, energy, phi_of
from .param import beta_to_phi, build_conversion_table, independence_phi, ising_phi, phi_to_beta
from .prior import PriorConfig, log_prior_partition, log_prior_values, stirling2
from .sampler import SamplerConfig, run_chain, run_chain_tree

__all__ = [
    "BinMRFError",
    "BinaryImage",
    "Boundary",
    "CapExceededError",
    "ConfigCatalog",
    "CovariateField",
    "DataIOError",
    "LatticeSpec",
    "PartitionState",
    "PriorConfig",
    "SamplerConfig",
    "TemplateClique",
    "ValidationError",
    "beta_to_phi",
    "build_catalog",
    "build_conversion_table",
    "classify",
    "energy",
    "gibbs_sample",
    "independence_phi",
    "ising_phi",
    "log_prior_partition",
    "log_prior_values",
    "log_z_brute",
    "log_z_transfer",
    "make_engine",
    "phi_of",
    "phi_to_beta",
    "run_chain",
    "run_chain_tree",
    "stirling2",
]
