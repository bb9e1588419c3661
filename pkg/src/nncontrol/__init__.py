"""Neural-network dynamic programming for finite-horizon stochastic control."""

from .algos import (
    SolvedPolicySequence,
    SolverConfig,
    NetworkShape,
    TrainingDistribution,
    design_training_sets,
    estimate_value_pi,
    policy_suboptimality,
    solve,
    solve_classification_pi,
    solve_hybrid_laterq,
    solve_hybrid_now,
    solve_nncontpi,
)
from .optim import GdConfig, Schedule, run_gd
from .oracle import GridSpec, LqSpec, grid_dp_solve, riccati_solve
from .problem import ControlProblem, martingale_drift, rollout, simulate, step
from .quantize import Quantizer, clvq_train

__version__ = "0.1.0"
