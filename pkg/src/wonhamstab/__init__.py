"""Filter-stability workbench for finite-state continuous-time hidden Markov models."""
from .chain import ChainDecomposition, decompose, forward_flow, indicator_in_O_check
from .model import (
    FiniteHmm,
    InitialPair,
    InvalidModel,
    LevelSetStructure,
    ObsKind,
    builtin_presets,
    level_sets,
    validate_model,
)
from .numlin import Subspace
from .observability import ObservabilityResult, brute_force_O, observable_space
from .verdict import StabilityReport, assess
from .wonham import SimConfig, kappa_sweep, run_pair

__version__ = "0.1.0"
