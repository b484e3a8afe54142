"""Linearly constrained kernelized movement primitives with a batch linear-MPC cross-check."""

from .exceptions import DataFileError, LcKmpError, NumericalError, ValidationError
from .gmm import (GaussianMixtureRegression, GmmModel, RefTrajectory, build_reference, fit_em,
                  gmr_condition)
from .kernel import KernelSpec, RandomFeatureMap, cross_gram, gram, k_block
from .model import (LCKMP, ConstraintRow, ConstraintSet, DesiredPoint, LcKmpModel, adapt,
                    constraint_slack, predict, train)
from .mpc import LinearSystem, MpcProblem, equivalence_check, solve_batch
from .qp import DualProblem, kkt_enumerate, solve
from .trajdata import DemoSet, TimeGrid, load_demos, uniform_grid, write_demos

__version__ = "0.1.0"

__all__ = [
    "LCKMP", "ConstraintRow", "ConstraintSet", "DataFileError", "DemoSet", "DesiredPoint",
    "DualProblem", "GaussianMixtureRegression", "GmmModel", "KernelSpec", "LcKmpError",
    "LcKmpModel", "LinearSystem", "MpcProblem", "NumericalError", "RandomFeatureMap",
    "RefTrajectory", "TimeGrid", "ValidationError", "adapt", "build_reference",
    "constraint_slack", "cross_gram", "equivalence_check", "fit_em", "gmr_condition", "gram",
    "k_block", "kkt_enumerate", "load_demos", "predict", "solve", "solve_batch", "train",
    "uniform_grid", "write_demos",
]
