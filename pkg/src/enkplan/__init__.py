"""enkplan: receding-horizon motion planning by ensemble Kalman smoothing.

The planner treats the finite-horizon tracking problem as a Bayesian
trajectory-estimation problem over an augmented state (vehicle state plus
control) and solves it with a one-pass sequential ensemble Kalman smoother.
Inequality constraints enter through a softplus barrier observed as a
pseudo-measurement pinned at zero.
"""

__version__ = "0.1.0"
