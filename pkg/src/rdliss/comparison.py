"""Comparison-function calculus on piecewise-linear class-K curves.

A :class:`MonotoneCurve` is the linear interpolant of strictly increasing knots
starting at the origin, extended beyond its last knot with the final slope.
That family is closed under inversion, composition, addition and positive
scaling, and all four are exact here.
"""

import math
from typing import Sequence

import numpy as np


class MonotoneCurve:
    """Strictly increasing piecewise-linear map of ``[0, inf)`` with ``f(0) = 0``."""

    __slots__ = ("r", "f")

    def __init__(self, r: Sequence[float], f: Sequence[float]):
        r = np.array(r, dtype=float)
        f = np.array(f, dtype=float)
        if r.ndim != 1 or r.shape != f.shape or r.size < 2:
            raise ValueError("need at least two (r, f) knots")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(f))):
            raise ValueError("knots must be finite")
        if r[0] != 0.0 or f[0] != 0.0:
            raise ValueError("first knot must be (0, 0)")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("knots must be strictly increasing in both coordinates")
        r.setflags(write=False)
        f.setflags(write=False)
        self.r = r
        self.f = f

    @classmethod
    def from_knots(cls, knots) -> "MonotoneCurve":
        k = np.asarray(knots, dtype=float)
        return cls(k[:, 0], k[:, 1])

    @classmethod
    def linear(cls, slope: float, r_end: float = 1.0) -> "MonotoneCurve":
        return cls([0.0, r_end], [0.0, slope * r_end])

    @classmethod
    def identity(cls) -> "MonotoneCurve":
        return cls.linear(1.0)

    @property
    def knots(self) -> np.ndarray:
        return np.column_stack([self.r, self.f])

    @property
    def final_slope(self) -> float:
        return float((self.f[-1] - self.f[-2]) / (self.r[-1] - self.r[-2]))

    def __repr__(self):
        return f"MonotoneCurve({len(self.r)} knots, r_max={self.r[-1]:.4g})"

    def evaluate(self, x):
        """Values and a mask of queries beyond the last knot."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("class-K curves are defined on [0, inf)")
        y = np.interp(x, self.r, self.f)
        over = x > self.r[-1]
        if np.any(over):
            y = np.where(over, self.f[-1] + self.final_slope * (x - self.r[-1]), y)
        return y, over

    def __call__(self, x):
        y, _ = self.evaluate(x)
        return float(y) if np.ndim(y) == 0 else y

    def invert(self) -> "MonotoneCurve":
        return MonotoneCurve(self.f, self.r)

    def scale(self, c: float) -> "MonotoneCurve":
        if not c > 0:
            raise ValueError("scale factor must be positive")
        return MonotoneCurve(self.r, c * self.f)

    def rescale_argument(self, c: float) -> "MonotoneCurve":
        """``r -> f(c r)``."""
        if not c > 0:
            raise ValueError("scale factor must be positive")
        return MonotoneCurve(self.r / c, self.f)

    def __add__(self, other: "MonotoneCurve") -> "MonotoneCurve":
        r = np.union1d(self.r, other.r)
        return MonotoneCurve(r, self(r) + other(r))

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "f": self.f.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MonotoneCurve":
        return cls(d["r"], d["f"])

    def write_csv(self, path):
        np.savetxt(path, self.knots, delimiter=",", header="r,f", comments="")


def make_curve(knots) -> MonotoneCurve:
    return MonotoneCurve.from_knots(knots)


def invert(f: MonotoneCurve) -> MonotoneCurve:
    return f.invert()


def compose(f: MonotoneCurve, g: MonotoneCurve) -> MonotoneCurve:
    """``f o g`` with breakpoints at g's knots and the preimages of f's knots."""
    pre = g.invert()(f.r)
    r = np.union1d(g.r, pre)
    vals = f(g(r))
    # merged breakpoints can collide after rounding; keep strict increase
    keep = np.concatenate(([True], (np.diff(r) > 0) & (np.diff(vals) > 0)))
    return MonotoneCurve(r[keep], vals[keep])


class DecaySolution:
    """Flow of ``v' = -A(v)`` for a class-K ``A``, by classical RK4.

    Each output interval is integrated with a fixed step that is halved until
    two successive refinements agree to ``rtol`` (relative, with ``atol``
    guarding values near zero). A step that crosses a knot of ``A``, where
    RK4 loses order, is recursively split into ``kink_split`` substeps up to
    ``kink_depth`` levels. Solutions are clamped at 0.
    """

    def __init__(self, A: MonotoneCurve, rtol: float = 1e-8, atol: float = 1e-300,
                 h0: float = 0.05, max_halvings: int = 14, kink_split: int = 8,
                 kink_depth: int = 3):
        self.A = A
        self.kink_split = kink_split
        self.kink_depth = kink_depth
        slopes = np.append(np.diff(A.f) / np.diff(A.r), A.final_slope)
        self._knots = A.r[1:]
        # jump in slope at each interior knot, padded for reduceat
        self._jumps = np.append(np.abs(np.diff(slopes)), 0.0)
        self.rtol = rtol
        self.atol = atol
        self.h0 = h0
        self.max_halvings = max_halvings

    def _rhs(self, v):
        return -self.A(np.maximum(v, 0.0))

    def _step(self, v, h, depth=0):
        k1 = self._rhs(v)
        k2 = self._rhs(v + 0.5 * h * k1)
        k3 = self._rhs(v + 0.5 * h * k2)
        k4 = self._rhs(v + h * k3)
        out = np.maximum(v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)
        if depth < self.kink_depth:
            # a step across a knot of A loses order; resolve it with substeps
            # when the slope jump makes the local error exceed the tolerance
            lo = np.searchsorted(self._knots, out)
            hi = np.searchsorted(self._knots, v)
            cross = np.flatnonzero(hi > lo)
            if cross.size:
                idx = np.empty(2 * cross.size, dtype=np.intp)
                idx[0::2], idx[1::2] = lo[cross], hi[cross]
                jump = np.maximum.reduceat(self._jumps, idx)[0::2]
                err = jump * np.abs(k1[cross]) * h * h
                bad = cross[err > self.rtol * np.maximum(out[cross], self.atol)]
                if bad.size:
                    w = v[bad]
                    sub = h / self.kink_split
                    for _ in range(self.kink_split):
                        w = self._step(w, sub, depth + 1)
                    out[bad] = w
        return out

    def _rk4(self, v, T, nsteps):
        h = T / nsteps
        for _ in range(nsteps):
            v = self._step(v, h)
        return v

    def _advance(self, v, T):
        if T == 0:
            return v
        n = max(1, math.ceil(T / self.h0))
        coarse = self._rk4(v, T, n)
        for _ in range(self.max_halvings):
            n *= 2
            fine = self._rk4(v, T, n)
            scale = np.maximum(np.abs(fine), self.atol)
            if np.all(np.abs(fine - coarse) <= self.rtol * scale):
                return fine
            coarse = fine
        return coarse

    def flow(self, v0, times) -> np.ndarray:
        """Matrix ``out[i, j] = v(v0[i], times[j])``; ``times`` must be sorted."""
        v0 = np.atleast_1d(np.asarray(v0, dtype=float))
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(v0 < 0):
            raise ValueError("initial values must be nonnegative")
        if np.any(times < 0) or np.any(np.diff(times) < 0):
            raise ValueError("times must be nonnegative and sorted")
        out = np.empty((v0.size, times.size))
        v = v0.copy()
        t_prev = 0.0
        for j, t in enumerate(times):
            v = self._advance(v, t - t_prev)
            v[v0 == 0] = 0.0
            out[:, j] = v
            t_prev = t
        return out

    def __call__(self, v0, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        order = np.argsort(t_arr)
        vals = self.flow(v0, t_arr[order])
        res = np.empty_like(vals)
        res[:, order] = vals
        if np.ndim(v0) == 0 and np.ndim(t) == 0:
            return float(res[0, 0])
        if np.ndim(t) == 0:
            return res[:, 0]
        if np.ndim(v0) == 0:
            return res[0]
        return res


def solve_decay(A: MonotoneCurve, v0: float, t: float) -> float:
    if v0 < 0 or t < 0:
        raise ValueError("need v0 >= 0 and t >= 0")
    return DecaySolution(A)(float(v0), float(t))


class KLBound:
    """``beta(r, t) = psi_lo^{-1}(decay(psi_hi(r), t))``."""

    def __init__(self, psi_lo: MonotoneCurve, psi_hi: MonotoneCurve,
                 decay: DecaySolution):
        self.psi_lo = psi_lo
        self.psi_hi = psi_hi
        self.decay = decay
        self._lo_inv = psi_lo.invert()

    def evaluate(self, r, t):
        """Values and the overflow mask of the ``psi_lo`` inverse."""
        v = self.decay(self.psi_hi(np.asarray(r, dtype=float)), t)
        return self._lo_inv.evaluate(v)

    def __call__(self, r, t):
        y, _ = self.evaluate(r, t)
        return float(y) if np.ndim(y) == 0 else y

    def along(self, r: np.ndarray, times: np.ndarray) -> np.ndarray:
        """``beta(r[i], times[j])`` for sorted ``times``."""
        v = self.decay.flow(self.psi_hi(np.atleast_1d(r)), times)
        return self._lo_inv(v)


def build_beta_gamma(psi_lo: MonotoneCurve, psi_hi: MonotoneCurve,
                     chi: MonotoneCurve, A: MonotoneCurve):
    """KL bound ``beta`` and gain ``gamma = psi_lo^{-1} o psi_hi o chi``."""
    beta = KLBound(psi_lo, psi_hi, DecaySolution(A))
    gamma = compose(psi_lo.invert(), compose(psi_hi, chi))
    return beta, gamma
