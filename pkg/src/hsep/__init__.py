"""Higher-spin exclusion process: simulation, microscopic Hopf-Cole transform
and weak-scaling checks against the stochastic heat equation."""

from hsep.model import INF_GAP, DerivedConstants, ModelParams, derive_constants, jump_probs
from hsep.env import BernoulliEnv

__version__ = "0.1.0"

__all__ = [
    "INF_GAP",
    "BernoulliEnv",
    "DerivedConstants",
    "ModelParams",
    "derive_constants",
    "jump_probs",
    "__version__",
]
