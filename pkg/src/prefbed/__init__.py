"""Preference-guided Bayesian experimental design for scenario-based system testing.

A hierarchical surrogate pairs an objective GP (scenario -> observables) with a
preference GP (observables -> latent utility learned from pairwise verdicts);
the acquisition trades information about both layers against predicted
utility when proposing the next pair of scenarios.
"""

__version__ = "0.1.0"

from .acquisition import AcquisitionConfig, AcquisitionMode, pair_score, propose_pair, single_score
from .benchmarks import BenchmarkId, get_benchmark
from .errors import (
    ConfigError,
    ContractViolation,
    FittingError,
    NumericalError,
    OracleError,
    PrefBedError,
    TransportError,
)
from .kernels import KernelFamily, KernelSpec
from .metrics import MetricWeights, coverage_score, preference_score, rank_candidates, trueskill_update
from .objective import GPMode, ObjectiveDataset, OptConfig, fit_exact, fit_svgp, predict
from .oracle import Choice, SyntheticOracle, SyntheticOracleSpec, Verdict
from .preference import PreferenceDataset, fit_laplace, predict_preference
from .runner import ExperimentConfig, Method, OracleConfig, RunRecord, aggregate, run_bed
from .space import ScenarioSpace
