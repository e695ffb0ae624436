"""Proprioceptive state estimation toolkit for quadruped robots.

Library layout:

* :mod:`robust_inekf.lie` -- SO(3) / SE_K(3) group operations.
* :mod:`robust_inekf.kinematics` -- 3-DOF leg forward/inverse kinematics.
* :mod:`robust_inekf.inekf` -- right-invariant EKF with contact lifecycle.
* :mod:`robust_inekf.robust` -- M-estimator (Huber/Tukey) IRLS update.
* :mod:`robust_inekf.sim` -- synthetic gait/slip scenario generator.
* :mod:`robust_inekf.evaluation` -- trajectory association, ATE and RPE.
* :mod:`robust_inekf.io` -- measurement-log / trajectory / config files.
* :mod:`robust_inekf.runner` -- log-to-trajectory filter driver.
* :mod:`robust_inekf.cli` -- ``robust-inekf`` command line front end.
"""

from . import lie
from .lie import GroupElement

__all__ = [
    "GroupElement",
    "lie",
]

__version__ = "0.1.0"
