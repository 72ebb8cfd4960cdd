"""Spike-and-slab posterior sampling by measure decomposition.

The posterior of ``y = X theta + eps`` under a product spike-and-slab prior
is written as a log-concave marginal over an auxiliary field ``phi`` and a
product conditional for ``theta`` given ``phi``; the field is sampled with
MALA or HMC and ``theta`` drawn coordinatewise.
"""

from ._backend import BACKEND
from .errors import (ChainError, ConfigError, InfeasibleError, ModeFindingError,
                     NonConvergenceError, PreconditionError, QuadratureError, SlabdecompError)
from .experiments import (CoverageResult, CoverageSetting, DiagnosticsBundle, chain_diagnostics,
                          coverage_experiment, credible_intervals)
from .feasibility import (AsymptoticPoint, FeasibilityReport, asymptotic_feasibility,
                          empirical_feasibility, mp_density, scan_region)
from .oracle import (ExactPosterior, decomposition_consistency_check, enumerate_exact_posterior,
                     exact_marginal_query)
from .potential import (Decomposition, SlabTransform, field_hamiltonian, inf_v_second,
                        potential_terms, slab_transform)
from .priors import (CorrelatedGaussian, GaussianSlab, GenericSlab, IidGaussian, IidGeneric,
                     LaplaceSlab, RegressionInstance, SpikeSlabPrior, generate_design,
                     generate_response, sample_prior)
from .samplers import (HMC, MALA, ChainConfig, RejectionPolicy, SampleSet, find_mode, run_hmc,
                       run_mala, sample_theta_given_phi, two_stage_sample)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
