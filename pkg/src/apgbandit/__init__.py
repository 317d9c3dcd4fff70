"""Kernel bandits via P-greedy reduction to misspecified linear bandits."""
from .kernels import Kernel, evaluate, benchmark_kernel
from .numerics import SpdTracker
from .pgreedy import NewtonBasis, build_basis, decay_diagnostics, feature_of, power_function
from .misspec import (
    Exp3State,
    LinBanditState,
    LinParams,
    LinTS,
    LinUCB,
    PhasedElimination,
    g_optimal_design,
)
from .environments import AdversarialSeq, NoiseStream, SyntheticEnv, generate_adversarial, generate_env, pull
from .rkhs import ApgConfig, IgpUcb, RegretCurve, apg_exp3_run, apg_run, igp_ucb_run

__version__ = "0.1.0"
