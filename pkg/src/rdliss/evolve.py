"""IMEX-Euler semidiscretisation of the disturbed reaction-diffusion equation.

One step solves ``(I - dt Lap) y+ = y + dt (g(y) + h u(t))``: diffusion
implicit, reaction and forcing explicit, ``u`` sampled at the left endpoint.
Runs are deterministic, so restarting from an intermediate state reproduces
the uninterrupted run bit for bit.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import _backend, _pykernels
from .field import Grid, StateVector, l2_norm, smallest_eigenvalue
from .system import ControlShape, Disturbance, NonlinearSpec

BLOWUP_NORM = 1e6


class BlowUpError(RuntimeError):
    """Non-finite state or norm above ``BLOWUP_NORM``."""

    def __init__(self, time: float, step: int, member: int = 0):
        self.time = time
        self.step = step
        self.member = member
        super().__init__(f"blow-up at t={time:.6g} (step {step}, member {member})")

    def as_dict(self) -> dict:
        return {"error": "blow-up", "time": self.time, "step": self.step,
                "member": self.member}


@dataclass(frozen=True, eq=False)
class Stepper:
    """Fixed-step IMEX-Euler integrator bound to a grid, reaction and control."""

    grid: Grid
    spec: NonlinearSpec
    control: ControlShape
    dt: float = 1e-3
    scheme: str = field(default="imex-euler", init=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.control.grid != self.grid:
            raise ValueError("control profile lives on a different grid")
        g = self.grid
        inv_h2 = 1.0 / g.h**2
        a = -self.dt * inv_h2
        b = 1.0 + 2.0 * self.dt * inv_h2
        cprime = np.empty(g.n)
        dinv = np.empty(g.n)
        dinv[0] = 1.0 / b
        cprime[0] = a * dinv[0]
        for i in range(1, g.n):
            dinv[i] = 1.0 / (b - a * cprime[i - 1])
            cprime[i] = a * dinv[i]
        object.__setattr__(self, "_inv_h2", inv_h2)
        object.__setattr__(self, "_cprime", cprime)
        object.__setattr__(self, "_dinv", dinv)
        object.__setattr__(self, "_lapack", _pykernels.factor_tridiagonal(g.n, self.dt, inv_h2))
        object.__setattr__(self, "_hvec", np.ascontiguousarray(self.control.profile.values))

    @property
    def compiled(self) -> bool:
        return _backend.ckernels is not None and self.spec.coeffs is not None

    def steps_between(self, s: float, t: float) -> int:
        if t < s or s < 0:
            raise ValueError(f"need t >= s >= 0, got s={s}, t={t}")
        k = (t - s) / self.dt
        n = int(round(k))
        if abs(k - n) > 1e-9 * max(1.0, k):
            warnings.warn(f"t - s = {t - s} is not a multiple of dt; using {n} steps",
                          stacklevel=3)
        return n

    def run(self, Y0: np.ndarray, u_steps: np.ndarray, record_every: int = 1):
        """Raw batch run: ``Y0`` (M, n), ``u_steps`` (M, nsteps).

        Returns ``(records, fail)`` as documented in the kernels.
        """
        Y0 = np.ascontiguousarray(np.atleast_2d(Y0), dtype=np.float64)
        u_steps = np.ascontiguousarray(np.atleast_2d(u_steps), dtype=np.float64)
        if u_steps.shape[0] != Y0.shape[0]:
            u_steps = np.ascontiguousarray(np.broadcast_to(u_steps, (Y0.shape[0], u_steps.shape[1])))
        record_every = max(1, int(record_every))
        if self.compiled:
            return _backend.ckernels.imex_run(
                Y0, self.dt, self._inv_h2, self._cprime, self._dinv,
                np.asarray(self.spec.coeffs, dtype=np.float64), self._hvec,
                u_steps, record_every, BLOWUP_NORM)
        return _pykernels.imex_run(Y0, self.dt, self._inv_h2, self._lapack,
                                   self.spec.g, self._hvec, u_steps,
                                   record_every, BLOWUP_NORM)

    def advance(self, Y0: np.ndarray, s: float, nsteps: int, u: Optional[Disturbance] = None):
        """Final states of a batch after ``nsteps`` steps from time ``s``."""
        Y0 = np.atleast_2d(Y0)
        us = self._samples(u, s, nsteps, Y0.shape[0])
        rec, fail = self.run(Y0, us, record_every=max(1, nsteps))
        self._raise_on_fail(fail, s)
        return rec[:, -1]

    def _samples(self, u, s, nsteps, M):
        if u is None:
            return np.zeros((M, nsteps))
        if isinstance(u, Disturbance):
            return np.broadcast_to(u.sample_grid(s, self.dt, nsteps), (M, nsteps))
        return np.stack([ui.sample_grid(s, self.dt, nsteps) for ui in u])

    def _raise_on_fail(self, fail, s):
        bad = np.flatnonzero(fail >= 0)
        if bad.size:
            m = int(bad[0])
            k = int(fail[m])
            raise BlowUpError(s + (k + 1) * self.dt, k, m)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states ``states[j]`` at ``times[j]`` of one run."""

    grid: Grid
    times: np.ndarray
    states: np.ndarray
    disturbance: Disturbance

    def __len__(self):
        return self.times.size

    @property
    def norms(self) -> np.ndarray:
        return self.grid.norm(self.states)

    @property
    def max_abs(self) -> np.ndarray:
        return np.max(np.abs(self.states), axis=1)

    @property
    def max_amplitude(self) -> float:
        return float(self.max_abs.max())

    @property
    def final(self) -> StateVector:
        return StateVector(self.grid, self.states[-1])

    def state(self, j: int) -> StateVector:
        return StateVector(self.grid, self.states[j])

    def write_csv(self, path, cloud=None):
        d = cloud.distances(self.states) if cloud is not None else None
        cols = ["t", "norm"] + (["dist_theta"] if d is not None else []) + ["max_abs"]
        norms, amax = self.norms, self.max_abs
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for j, t in enumerate(self.times):
                row = [repr(float(t)), repr(float(norms[j]))]
                if d is not None:
                    row.append(repr(float(d[j])))
                row.append(repr(float(amax[j])))
                w.writerow(row)


def _values(st: Stepper, x) -> np.ndarray:
    if isinstance(x, StateVector):
        if x.grid != st.grid:
            raise ValueError("state lives on a different grid")
        return x.values
    v = np.asarray(x, dtype=float)
    if v.shape != (st.grid.n,):
        raise ValueError(f"expected a state of length {st.grid.n}")
    return v


def step(st: Stepper, y, t: float, u: Disturbance) -> StateVector:
    """One IMEX step from time ``t``."""
    y0 = _values(st, y)
    if not np.all(np.isfinite(y0)):
        raise ValueError("state must be finite")
    rec, fail = st.run(y0[None, :], u.sample_grid(t, st.dt, 1)[None, :])
    st._raise_on_fail(fail, t)
    return StateVector(st.grid, rec[0, -1])


def evolve(st: Stepper, x, s: float, t: float, u: Optional[Disturbance] = None,
           record_every: int = 1) -> Trajectory:
    """``S_u(t, s, x)`` with all intermediate states on the step grid.

    ``record_every`` thins the stored states; the final state is always
    recorded when the step count is a multiple of it.
    """
    u = Disturbance.zero() if u is None else u
    nsteps = st.steps_between(s, t)
    y0 = _values(st, x)
    rec, fail = st.run(y0[None, :], u.sample_grid(s, st.dt, nsteps)[None, :],
                       record_every)
    st._raise_on_fail(fail, s)
    times = s + st.dt * record_every * np.arange(rec.shape[1])
    return Trajectory(st.grid, times, rec[0], u)


def evolve_chunks(st: Stepper, x, s: float, nsteps: int, u: Optional[Disturbance] = None,
                  chunk: int = 2000, record_every: int = 1) -> Iterator[tuple]:
    """Yield ``(times, states)`` blocks of one long run without storing it all.

    The first block starts with the initial state; later blocks do not repeat
    the state that ended the previous block.
    """
    u = Disturbance.zero() if u is None else u
    chunk = max(record_every, (chunk // record_every) * record_every)
    y = np.array(_values(st, x), dtype=float)
    if nsteps == 0:
        yield np.array([s]), y[None, :]
        return
    done = 0
    while done < nsteps:
        k = min(chunk, nsteps - done)
        us = u.sample_grid(s + done * st.dt, st.dt, k)
        rec, fail = st.run(y[None, :], us[None, :], record_every)
        st._raise_on_fail(fail, s + done * st.dt)
        times = s + st.dt * (done + record_every * np.arange(rec.shape[1]))
        if done == 0:
            yield times, rec[0]
        else:
            yield times[1:], rec[0, 1:]
        # only the last block can end off the record grid
        y = rec[0, -1].copy()
        done += k


def lipschitz_gap(st: Stepper, y01, y02, t: float) -> float:
    """``|S0(t)y01 - S0(t)y02| / (e^{lam t} |y01 - y02|)``; bounded by 1 in theory."""
    a, b = _values(st, y01), _values(st, y02)
    d0 = l2_norm(st.grid, a - b)
    if d0 == 0:
        return 0.0
    n = st.steps_between(0.0, t)
    out = st.advance(np.stack([a, b]), 0.0, n)
    return l2_norm(st.grid, out[0] - out[1]) / (math.exp(st.spec.lam * t) * d0)


def disturbance_gap(st: Stepper, y0, u: Disturbance, t: float) -> float:
    """``|S_u(t)y0 - S0(t)y0| / (2 e^{2 lam} |h| |u|_inf t)`` for ``t`` in (0, 1]."""
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    if u.is_zero:
        return 0.0
    a = _values(st, y0)
    n = st.steps_between(0.0, t)
    us = np.stack([u.sample_grid(0.0, st.dt, n), np.zeros(n)])
    rec, fail = st.run(np.stack([a, a]), us, record_every=max(1, n))
    st._raise_on_fail(fail, 0.0)
    gap = l2_norm(st.grid, rec[0, -1] - rec[1, -1])
    return gap / (2 * math.exp(2 * st.spec.lam) * st.control.norm * u.sup_norm * t)


def dissipative_ratio(st: Stepper, traj: Trajectory, constant: float) -> float:
    """Worst ratio of ``|y(t)|^2`` to ``e^{-2 w t}|y(0)|^2 + C |Omega| / w``.

    ``w`` is the discrete first eigenvalue; a value <= 1 means the absorbing
    bound holds along the whole recorded trajectory.
    """
    w, _ = smallest_eigenvalue(st.grid)
    n2 = traj.norms**2
    t = traj.times - traj.times[0]
    bound = np.exp(-2 * w * t) * n2[0] + constant * st.grid.L / w
    return float(np.max(n2 / bound))


def absorbing_radius(st: Stepper, inflation: float = 2.0) -> float:
    """Radius of the absorbing ball, ``sqrt(inflation * kappa |Omega| / w)``."""
    w, _ = smallest_eigenvalue(st.grid)
    return math.sqrt(inflation * st.spec.kappa * st.grid.L / w)
