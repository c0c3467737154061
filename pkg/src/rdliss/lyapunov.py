"""Lyapunov function built from the undisturbed flow and a KL envelope.

For ``eps > 0`` let ``T(eps)`` be the time after which ``beta0(r0, t) <= eps``
and ``eta_eps(r) = max(0, r - eps)``. Then

    V_eps(x) = exp(-(lam + c0) T(eps)) * sup_{0 <= t <= T(eps)} exp(c0 t) eta_eps(|S0(t) x|_Theta)
    V(x)     = sum_{k=1}^{K} 2^{-k} V_{1/k}(x)

is 1-Lipschitz on the ``r0``-ball around the attractor, decays like
``exp(-c0 t)`` along the undisturbed flow and is sandwiched between
``psi_lo(|x|_Theta)`` and ``psi_hi(|x|_Theta) = beta0(|x|_Theta, 0) + |x|_Theta``.
The supremum is taken over the integrator's time grid.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attractor import AttractorCloud, DistanceProfile, KLEnvelope, sample_near
from .comparison import MonotoneCurve, compose
from .evolve import Stepper
from .field import StateVector
from .system import Disturbance


class OutOfBallError(ValueError):
    """A state is farther than ``r0`` from the attractor."""


def eta(eps: float, r):
    """``max(0, r - eps)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    y = np.maximum(0.0, np.asarray(r, dtype=float) - eps)
    return float(y) if np.ndim(y) == 0 else y


def time_to_shrink(beta0: KLEnvelope, r0: float, eps: float) -> float:
    """Smallest ``t`` with ``beta0(r0, t) <= eps``."""
    if not (eps > 0 and r0 > 0):
        raise ValueError("need eps > 0 and r0 > 0")
    return max(0.0, math.log(beta0.amplitude(r0) / eps) / beta0.a)


@dataclass(frozen=True, eq=False)
class LyapunovOracle:
    """Evaluator of ``V`` and ``V_eps`` on the ``r0``-ball around the cloud.

    Parameters
    ----------
    st : Stepper
    cloud : AttractorCloud
    beta0 : KLEnvelope
    r0 : float
        Radius of the ball on which ``V`` is used.
    c0 : float
        Decay rate of ``V`` along the undisturbed flow.
    K : int
        Number of series terms kept.
    """

    st: Stepper
    cloud: AttractorCloud
    beta0: KLEnvelope
    r0: float = 1.0
    c0: float = 0.5
    K: int = 8
    T_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.r0 > 0 and self.c0 > 0) or self.K < 1:
            raise ValueError("need r0 > 0, c0 > 0 and K >= 1")
        T = np.array([time_to_shrink(self.beta0, self.r0, 1.0 / k)
                      for k in range(1, self.K + 1)])
        T.setflags(write=False)
        object.__setattr__(self, "T_table", T)

    @property
    def lam(self) -> float:
        return self.st.spec.lam

    @property
    def tail(self) -> float:
        """Bound on the dropped series terms, ``2^-K beta0(r0, 0)``."""
        return 2.0**-self.K * self.beta0(self.r0, 0.0)

    @property
    def floor(self) -> float:
        """Numerical floor of ``V`` on the cloud, ``psi_hi(delta)``."""
        return self.beta0(self.cloud.resolution, 0.0) + self.cloud.resolution

    def _steps(self, T: float) -> int:
        # last grid time inside [0, T]
        return int(math.floor(T / self.st.dt + 1e-9))

    def _values(self, X) -> np.ndarray:
        if isinstance(X, StateVector):
            return X.values[None, :]
        return np.atleast_2d(np.asarray(X, dtype=float))

    def ball_distance(self, X) -> np.ndarray:
        """Distances to the cloud; raises if any exceeds ``r0``."""
        d = self.cloud.distances(self._values(X))
        if np.any(d > self.r0):
            raise OutOfBallError(f"state at distance {d.max():.4g} > r0 = {self.r0}")
        return d

    def profile(self, x, nsteps: Optional[int] = None) -> DistanceProfile:
        """Undisturbed run of ``nsteps`` (default: the window of ``V``) from one state."""
        n = self._steps(self.T_table[-1]) if nsteps is None else nsteps
        y0 = self._values(x)
        rec, fail = self.st.run(y0[:1], np.zeros((1, n)))
        self.st._raise_on_fail(fail, 0.0)
        return DistanceProfile(self.cloud, rec[0])

    def _sup_term(self, p: DistanceProfile, i: int, eps: float, T: float) -> float:
        s = p.weighted_sup(i, self._steps(T), eps, self.c0 * self.st.dt)
        return math.exp(-(self.lam + self.c0) * T) * s

    def v_from_profile(self, p: DistanceProfile, i: int = 0) -> float:
        """``V(S0(i dt) x)`` from the distance profile of ``x``."""
        return sum(2.0**-k * self._sup_term(p, i, 1.0 / k, self.T_table[k - 1])
                   for k in range(1, self.K + 1))

    def v_eps(self, x, eps: float) -> float:
        """``V_eps(x)`` from one simulation over ``[0, T(eps)]``."""
        self.ball_distance(x)
        T = time_to_shrink(self.beta0, self.r0, eps)
        return self._sup_term(self.profile(x, self._steps(T)), 0, eps, T)

    def v(self, x) -> float:
        return float(self.v_many(x)[0])

    def v_many(self, X) -> np.ndarray:
        """``V`` for each row of ``X``; one simulation per row serves all terms."""
        X = self._values(X)
        self.ball_distance(X)
        return np.array([self.v_from_profile(self.profile(x)) for x in X])

    def v_along(self, x, times: Sequence[float]) -> np.ndarray:
        """``V(S0(t) x)`` at grid times ``t`` from a single long run."""
        self.ball_distance(x)
        idx = [self.st.steps_between(0.0, t) for t in times]
        p = self.profile(x, self._steps(self.T_table[-1]) + max(idx, default=0))
        return np.array([self.v_from_profile(p, i) for i in idx])

    def sample_field(self, count: int, seed: int = 0, radius: Optional[float] = None):
        """Rows ``(sample id, |x|_Theta, V(x))`` for random states in the ball."""
        rng = np.random.default_rng(seed)
        X = sample_near(self.cloud, self.r0 if radius is None else radius, count, rng)
        dist = self.ball_distance(X)
        V = self.v_many(X)
        return [(j, float(dist[j]), float(V[j])) for j in range(count)]


@dataclass(frozen=True)
class IssLyapunovData:
    """Comparison functions attached to ``V``.

    ``psi_lo <= V <= psi_hi`` (in ``|x|_Theta``), ``alpha0 = c0 psi_lo`` is the
    undisturbed decay, ``sigma0`` the disturbance gain, ``chi`` the threshold
    ``alpha0^-1(2 sigma0(.))`` and ``alpha = alpha0 / 2``.
    """

    psi_lo: MonotoneCurve
    psi_hi: MonotoneCurve
    alpha0: MonotoneCurve
    sigma0: MonotoneCurve
    chi: MonotoneCurve
    alpha: MonotoneCurve

    def decay_rate(self) -> MonotoneCurve:
        """``alpha o psi_hi^-1``, the right-hand side of the scalar comparison."""
        return compose(self.alpha, self.psi_hi.invert())

    def curves(self) -> dict:
        return {"psi_lo": self.psi_lo, "psi_hi": self.psi_hi, "alpha0": self.alpha0,
                "sigma0": self.sigma0, "chi": self.chi, "alpha": self.alpha}

    def to_dict(self) -> dict:
        return {k: c.to_dict() for k, c in self.curves().items()}

    @classmethod
    def from_dict(cls, d: dict) -> "IssLyapunovData":
        return cls(**{k: MonotoneCurve.from_dict(v) for k, v in d.items()})


def psi_lo_series(beta0: KLEnvelope, r0: float, lam: float, c0: float, r) -> np.ndarray:
    """``sum_k 2^-k exp(-(lam + c0) T(1/k)) eta_{1/k}(r)`` over all ``k`` whose
    weight is representable."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    k = 1
    while True:
        T = time_to_shrink(beta0, r0, 1.0 / k)
        w = math.ldexp(math.exp(-(lam + c0) * T), -k)
        if w == 0.0:
            return out
        out += w * np.maximum(0.0, r - 1.0 / k)
        k += 1


def psi_bounds(o: LyapunovOracle, J: int = 200) -> IssLyapunovData:
    """Build the comparison functions of ``o``.

    ``psi_lo`` is the full series. It is piecewise linear with kinks at
    ``1/k``, so knots at ``1/J, ..., 1/2, 1`` represent it exactly on
    ``[1/J, inf)``; on ``[0, 1/J]`` the chord to the origin is used.
    """
    lam, c0 = o.lam, o.c0
    r = np.concatenate(([0.0], 1.0 / np.arange(J, 0, -1), [2.0]))
    psi_lo = MonotoneCurve(r, psi_lo_series(o.beta0, o.r0, lam, c0, r))
    psi_hi = o.beta0.amplitude + MonotoneCurve.identity()
    alpha0 = psi_lo.scale(c0)
    h_norm = o.st.control.norm
    sigma0 = MonotoneCurve.linear(2.0 * math.exp(2.0 * lam) * h_norm)
    chi = compose(alpha0.invert(), sigma0.scale(2.0))
    return IssLyapunovData(psi_lo, psi_hi, alpha0, sigma0, chi, alpha0.scale(0.5))


@dataclass(frozen=True)
class DiniEstimate:
    """Forward-difference quotients of ``V`` along the disturbed flow."""

    value: float
    quotients: tuple
    steps: tuple
    v0: float
    dist0: float
    left_ball: bool


def dini_estimate(o: LyapunovOracle, x, u: Disturbance,
                  ladder: Sequence[int] = (1, 2, 4)) -> DiniEstimate:
    """Max over ``dt_j = ladder[j] * dt`` of ``(V(S_u(dt_j) x) - V(x)) / dt_j``.

    ``left_ball`` flags a step that ends outside the ``r0``-ball; that step's
    quotient is skipped.
    """
    st = o.st
    x0 = o._values(x)[0]
    dist0 = float(o.ball_distance(x0)[0])
    top = max(ladder)
    rec, fail = st.run(x0[None, :], u.sample_grid(0.0, st.dt, top)[None, :])
    st._raise_on_fail(fail, 0.0)
    Y = np.concatenate([x0[None, :], rec[0, list(ladder)]])
    dist = o.cloud.distances(Y)
    inside = dist <= o.r0
    V = np.full(Y.shape[0], np.nan)
    V[inside] = [o.v_from_profile(o.profile(y)) for y in Y[inside]]
    q = tuple(float((V[j + 1] - V[0]) / (m * st.dt)) for j, m in enumerate(ladder))
    valid = [qq for qq, ok in zip(q, inside[1:]) if ok]
    return DiniEstimate(max(valid) if valid else math.nan, q,
                        tuple(int(m) for m in ladder), float(V[0]), dist0,
                        not bool(np.all(inside)))
