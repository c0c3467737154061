"""Problem data: reaction term with its growth certificate, control profile
and piecewise-constant disturbances."""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .field import Grid, StateVector, l2_norm

# a breakpoint this close after a grid time counts as reached
_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class NonlinearSpec:
    """Scalar reaction term ``g`` with certificate constants.

    The certificate asserts ``-kappa - alpha1|r|^p <= g(r) r <= kappa - alpha2|r|^p``
    and ``g'(r) <= lam``. ``coeffs`` (ascending) is set for polynomial ``g``
    and enables the compiled time stepper.
    """

    g: Callable[[np.ndarray], np.ndarray]
    g_prime: Callable[[np.ndarray], np.ndarray]
    p: float
    alpha1: float
    alpha2: float
    kappa: float
    lam: float
    coeffs: Optional[tuple] = None
    name: str = "custom"
    test_only: bool = False

    def __post_init__(self):
        if self.test_only:
            return
        if not self.p >= 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        for k in ("alpha1", "alpha2", "kappa", "lam"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive, got {getattr(self, k)}")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    def certificate(self) -> dict:
        return {"p": self.p, "q": self.q, "alpha1": self.alpha1,
                "alpha2": self.alpha2, "kappa": self.kappa, "lambda": self.lam}


def polynomial_spec(coeffs: Sequence[float], *, p, alpha1, alpha2, kappa, lam,
                    name="polynomial", test_only=False) -> NonlinearSpec:
    c = tuple(float(x) for x in coeffs)
    dc = tuple(P.polyder(np.array(c))) if len(c) > 1 else (0.0,)
    return NonlinearSpec(
        g=lambda r, c=np.array(c): P.polyval(r, c),
        g_prime=lambda r, dc=np.array(dc): P.polyval(r, dc),
        p=float(p), alpha1=alpha1, alpha2=alpha2, kappa=kappa, lam=lam,
        coeffs=c, name=name, test_only=test_only)


def chafee_infante() -> NonlinearSpec:
    """``g(r) = -r^3 + r`` with p=4, alpha1=1, alpha2=1/2, kappa=1/2, lambda=1."""
    return polynomial_spec((0.0, 1.0, 0.0, -1.0), p=4, alpha1=1.0, alpha2=0.5,
                           kappa=0.5, lam=1.0, name="chafee_infante")


def zero_reaction() -> NonlinearSpec:
    """``g = 0``: the pure heat equation. Test hook only, no certificate."""
    return polynomial_spec((0.0,), p=2, alpha1=0.0, alpha2=0.0, kappa=0.0,
                           lam=0.0, name="zero", test_only=True)


def odd_polynomial(coeffs: Sequence[float], inflation: float = 0.05,
                   n_scan: int = 20001) -> NonlinearSpec:
    """Certificate for an odd-degree polynomial with negative leading term.

    ``coeffs`` are ascending. With p = degree + 1, alpha1 = alpha2 = |c_lead|
    for a monomial, otherwise 3|c_lead|/2 and |c_lead|/2 so the sandwich holds
    on all of R; kappa and lambda come from a grid scan, inflated.
    """
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if c.size == 0:
        raise ValueError("zero polynomial")
    deg = c.size - 1
    if deg % 2 == 0:
        raise ValueError(f"degree must be odd, got {deg}")
    lead = c[-1]
    if lead >= 0:
        raise ValueError("leading coefficient must be negative")
    p = deg + 1
    if np.all(c[:-1] == 0):
        a1 = a2 = -lead
    else:
        a1, a2 = -1.5 * lead, -0.5 * lead
    R = 2.0 * (1.0 + np.max(np.abs(c[:-1] / lead))) if deg > 0 else 1.0
    r = np.linspace(-max(R, 10.0), max(R, 10.0), n_scan)
    gr = P.polyval(r, c) * r
    rp = np.abs(r) ** p
    kap = max(np.max(gr + a2 * rp), np.max(-gr - a1 * rp), 0.0)
    dmax = np.max(P.polyval(r, P.polyder(c)))
    floor = 1e-12
    return polynomial_spec(
        c, p=p, alpha1=float(a1), alpha2=float(a2),
        kappa=max(float(kap) * (1 + inflation), floor),
        lam=max(float(dmax) * (1 + inflation), floor), name="odd_polynomial")


@dataclass(frozen=True)
class ValidationReport:
    r_max: float
    n_samples: int
    slack_lower: float
    slack_upper: float
    slack_derivative: float
    worst_r: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return min(self.slack_lower, self.slack_upper, self.slack_derivative) >= 0

    def as_dict(self) -> dict:
        return {"r_max": self.r_max, "n_samples": self.n_samples,
                "slack_lower": self.slack_lower, "slack_upper": self.slack_upper,
                "slack_derivative": self.slack_derivative,
                "worst_r": self.worst_r, "passed": self.passed}


def validate_conditions(s: NonlinearSpec, r_max: float = 10.0,
                        n_samples: int = 20001) -> ValidationReport:
    """Check the growth sandwich and the derivative bound on a uniform sample."""
    if not r_max > 0 or n_samples < 2:
        raise ValueError("need r_max > 0 and n_samples >= 2")
    r = np.linspace(-r_max, r_max, int(n_samples))
    gr = np.asarray(s.g(r), dtype=float) * r
    rp = np.abs(r) ** s.p
    lower = gr + s.kappa + s.alpha1 * rp
    upper = s.kappa - s.alpha2 * rp - gr
    deriv = s.lam - np.asarray(s.g_prime(r), dtype=float)
    worst = {"lower": float(r[np.argmin(lower)]), "upper": float(r[np.argmin(upper)]),
             "derivative": float(r[np.argmin(deriv)])}
    return ValidationReport(float(r_max), int(n_samples), float(lower.min()),
                            float(upper.min()), float(deriv.min()), worst)


@dataclass(frozen=True, eq=False)
class ControlShape:
    """Spatial profile ``h`` of the disturbance input; must be nonzero."""

    profile: StateVector

    def __post_init__(self):
        if not self.norm > 0:
            raise ValueError("control profile must be nonzero")

    @property
    def grid(self) -> Grid:
        return self.profile.grid

    @property
    def norm(self) -> float:
        return l2_norm(self.profile.grid, self.profile)

    @classmethod
    def mode(cls, grid: Grid, j: int = 1, normalized: bool = True) -> "ControlShape":
        return cls(grid.mode(j, normalized))


class Disturbance:
    """Right-continuous piecewise-constant signal on ``[0, inf)``.

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``; the last
    value extends to infinity.
    """

    __slots__ = ("breakpoints", "values", "sup_norm")

    def __init__(self, breakpoints: Sequence[float], values: Sequence[float]):
        b = np.array(breakpoints, dtype=float)
        v = np.array(values, dtype=float)
        if b.ndim != 1 or b.size == 0 or b.shape != v.shape:
            raise ValueError("need one value per breakpoint")
        if b[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        b.setflags(write=False)
        v.setflags(write=False)
        self.breakpoints = b
        self.values = v
        self.sup_norm = float(np.max(np.abs(v)))

    @classmethod
    def constant(cls, c: float) -> "Disturbance":
        return cls([0.0], [c])

    @classmethod
    def zero(cls) -> "Disturbance":
        return cls.constant(0.0)

    @property
    def is_zero(self) -> bool:
        return self.sup_norm == 0.0

    def __repr__(self):
        return f"Disturbance(breakpoints={self.breakpoints.tolist()}, values={self.values.tolist()})"

    def __eq__(self, other):
        return (isinstance(other, Disturbance)
                and np.array_equal(self.breakpoints, other.breakpoints)
                and np.array_equal(self.values, other.values))

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("negative time")
        i = np.searchsorted(self.breakpoints, t, side="right") - 1
        out = self.values[i]
        return float(out) if out.ndim == 0 else out

    __call__ = eval

    def shift(self, tau: float) -> "Disturbance":
        """The signal ``t -> u(t + tau)``."""
        if tau < 0:
            raise ValueError("negative shift")
        head = self.eval(tau)
        keep = self.breakpoints > tau
        b = np.concatenate(([0.0], self.breakpoints[keep] - tau))
        v = np.concatenate(([head], self.values[keep]))
        return Disturbance(b, v)

    def scaled(self, c: float) -> "Disturbance":
        return Disturbance(self.breakpoints, c * self.values)

    def sample_grid(self, t0: float, dt: float, nsteps: int) -> np.ndarray:
        """Left-endpoint values on ``t0 + k dt``, k < nsteps.

        Breakpoints within ``1e-9 dt`` after a grid time count as reached, so
        shifted and unshifted signals sample identically on aligned grids.
        """
        if t0 < 0:
            raise ValueError("negative time")
        t = t0 + dt * np.arange(nsteps) + _SNAP * dt
        i = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.array(self.values[i], dtype=float)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Disturbance":
        return cls(d["breakpoints"], d["values"])
