"""Safe RL toolkit: trust-region policy optimization under cost constraints,
with an adaptive constraint-loosening scheme for efficient early exploration.
"""

__version__ = "0.1.0"

from esbcpo.cmdp import CmdpConfig, Trajectory, Transition

__all__ = ["CmdpConfig", "Trajectory", "Transition", "__version__"]
