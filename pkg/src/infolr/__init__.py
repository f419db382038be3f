"""Learning-rate scheduling driven by mutual information between layer activations and labels."""

from .mi_estimator import MiEstimate, digamma, ksg_mi
from .runner import RunConfig, run_experiment
from .scheduler import PolicyConstants, default_constants, policy1_step, policy2_step

__version__ = "0.1.0"

__all__ = [
    "MiEstimate",
    "PolicyConstants",
    "RunConfig",
    "default_constants",
    "digamma",
    "ksg_mi",
    "policy1_step",
    "policy2_step",
    "run_experiment",
]
