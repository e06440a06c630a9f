"""Mean-field SGD dynamics of a one-hidden-layer network and its large deviations."""

from .model import (
    Activation,
    ConditionError,
    DataAtomSet,
    InitialWeightAtomSet,
    ParamMeasure,
    SimConfig,
    gradient_A,
    loss_residual_g,
    readout_F,
)
from .functionals import TestFunctional, get_functional, register_functional
from .sgd import TrajectoryMeasure, growth_bound_report, pushforward_eta_n, simulate_theta_n
from .tilt import StepKernelSequence, TiltedKernel, discretize_kernel, relative_entropy_R
from .meanfield import MeanFieldSolution, PicardReport, lln_reference, picard_solve, wasserstein_D, zeta_map
from .ldp import EventSpec, OptConfig, RateEstimate, estimate_I, estimate_J, importance_sample, naive_mc

__version__ = "0.1.0"
