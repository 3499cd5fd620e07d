"""Oversmoothing Tikhonov regularization with the discrepancy principle.

The package works on finite sections of scale models: diagonal operators on
sequence spaces, a weighted ``l1`` model, and a one-dimensional radiative
elliptic problem.  It picks the regularization parameter by the discrepancy
equality and measures convergence rates and intermediate inequalities.
"""

from .spaces import FracDomain, ScaleKind, ScaleModel, SpaceTag, U, V, WeightSequence, X, Xs, norm
from .calculus import DecompositionFamily, SmoothingFn
from .forward import (EllipticConfig, EllipticRadiative, L1Embedding, LinearDiagonal, NonlinearDiagonal,
                      forward_apply, forward_gradient, two_sided_constants_estimate)
from .solver import SolverOptions, TikhonovProblem, solve
from .discrepancy import DiscrepancyConfig, DPStatus, find_kappa_dp, find_t_aux
from .harness import ExperimentConfig, ModelSpec, TruthSpec, preset_experiment, run_rate_experiment

__version__ = "0.1.0"
