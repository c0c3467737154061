"""Local input-to-state stability of a disturbed reaction-diffusion equation
with respect to its global attractor.

``dy/dt = y_xx + g(y) + h u(t)`` on ``(0, L)`` with Dirichlet boundary values,
discretized by finite differences and integrated with IMEX Euler. The package
approximates the attractor, builds a Lyapunov function from the undisturbed
flow, derives ISS comparison functions and falsifies the resulting estimate by
Monte Carlo sampling.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .attractor import (AttractorCloud, AttractorError, FitError, KLEnvelope,
                        approximate_attractor, dist_to_attractor, fit_beta0, hausdorff,
                        near_invariance)
from .certify import (Certificate, EmptyCertificateError, FalsificationReport,
                      build_certificate, certify_liss, check_invariance_Mu, falsify,
                      membership_Mu)
from .comparison import (DecaySolution, KLBound, MonotoneCurve, build_beta_gamma, compose,
                         invert, make_curve, solve_decay)
from .evolve import BlowUpError, Stepper, Trajectory, evolve, step
from .field import Grid, StateVector, apply_laplacian, build_grid, inner, l2_norm
from .lyapunov import (IssLyapunovData, LyapunovOracle, OutOfBallError, dini_estimate,
                       psi_bounds, time_to_shrink)
from .system import (ControlShape, Disturbance, NonlinearSpec, chafee_infante,
                     polynomial_spec, validate_conditions)

__all__ = [name for name in dir() if not name.startswith("_")]
