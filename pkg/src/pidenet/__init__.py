"""ReLU-network emulation of jump-diffusion expectations.

Submodules: ``relu_net`` (network calculus), ``model`` (coefficients and
Levy measures), ``simulate`` (Euler schemes from frozen randomness),
``builder`` (compiling realizations into networks), ``pricing`` (payoffs,
Monte Carlo, schedules) and ``ratelab`` (studies and CLI).
"""

from .builder import AssembledApproximator, Schedule, SizeLedger, assemble_approximator
from .errors import (ConfigError, InvalidArgument, LoadError, ModelError, NumericFailure,
                     SelectionFailure)
from .model import CoefficientNets, JumpDiffusionSpec, builtin_model, validate_assumptions
from .pricing import mc_price, payoff_network, schedule_from_epsilon
from .relu_net import ReluNetwork, load_network, save_network
from .simulate import euler_path, sample_realization

__version__ = "0.1.0"

__all__ = [
    "AssembledApproximator", "CoefficientNets", "ConfigError", "InvalidArgument",
    "JumpDiffusionSpec", "LoadError", "ModelError", "NumericFailure", "ReluNetwork",
    "Schedule", "SelectionFailure", "SizeLedger", "assemble_approximator", "builtin_model",
    "euler_path", "load_network", "mc_price", "payoff_network", "sample_realization",
    "save_network", "schedule_from_epsilon", "validate_assumptions",
]
