"""Point-cloud approximation of the global attractor, distance to it, and an
empirical KL envelope for the undisturbed decay of that distance.

The cloud is built in three passes:

1. an ensemble of random states from the absorbing ball is evolved until
   consecutive snapshot generations agree to ``delta_target`` in Hausdorff
   distance;
2. the surviving states are polished into equilibria by Newton's method;
3. from every equilibrium the orbits leaving along each unstable eigendirection
   are traced to the next equilibrium and sampled by arc length.

Weakly unstable directions (eigenvalue below ``unstable_tol``) are too slow to
trace by time stepping; nearby equilibria along them are located by Newton's
method instead and joined to their parent by a straight segment.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import _backend
from .comparison import MonotoneCurve
from .evolve import Stepper, absorbing_radius
from .field import Grid, StateVector, random_field


class AttractorError(RuntimeError):
    """Snapshot generations did not settle within the generation budget."""

    def __init__(self, last_gap: float, generations: int):
        self.last_gap = last_gap
        self.generations = generations
        super().__init__(f"no convergence after {generations} generations; "
                         f"last Hausdorff gap {last_gap:.3e}")


class FitError(RuntimeError):
    """A fitting trajectory did not approach the cloud within the horizon."""


class AttractorCloud:
    """Finite ``delta``-net of the attractor with nearest-point queries.

    Parameters
    ----------
    grid : Grid
    points : ndarray, shape (N, n)
        Cloud states as rows.
    resolution : float
        ``delta``, the accuracy the cloud is trusted to.
    burn_in : float
    meta : dict, optional
        Construction metadata (ensemble, seed, radius, ...).
    equilibria : ndarray, shape (E, n), optional
    """

    def __init__(self, grid: Grid, points, resolution: float, burn_in: float = 0.0,
                 meta: Optional[dict] = None, equilibria=None):
        pts = np.array(points, dtype=np.float64, ndmin=2)
        if pts.shape[0] == 0:
            raise ValueError("attractor cloud must be nonempty")
        if pts.shape[1] != grid.n:
            raise ValueError(f"cloud rows have length {pts.shape[1]}, grid has {grid.n}")
        if not resolution > 0:
            raise ValueError("resolution must be positive")
        pts.setflags(write=False)
        self.grid = grid
        self.points = pts
        self.resolution = float(resolution)
        self.burn_in = float(burn_in)
        self.meta = dict(meta or {})
        eq = np.zeros((0, grid.n)) if equilibria is None else np.array(equilibria, ndmin=2)
        eq.setflags(write=False)
        self.equilibria = eq
        self._spectral = np.ascontiguousarray(grid.to_spectral(pts))
        self._index = None

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return (f"AttractorCloud({len(self)} points, {len(self.equilibria)} equilibria, "
                f"resolution={self.resolution:.3g})")

    def states(self) -> list:
        return [StateVector(self.grid, p) for p in self.points]

    def nearest(self, values, method: str = "tree"):
        """``(dist, idx)`` of the nearest cloud point for every row of ``values``.

        ``method="tree"`` filters candidates with a KD-tree on a lower-bounding
        projection and is exact; ``"scan"`` is the brute-force kernel.
        """
        v = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if v.shape[-1] != self.grid.n:
            raise ValueError(f"queries have length {v.shape[-1]}, grid has {self.grid.n}")
        q = np.ascontiguousarray(self.grid.to_spectral(v))
        if method == "scan":
            return _backend.nearest(self._spectral, q)
        if method != "tree":
            raise ValueError(f"unknown method {method!r}")
        if self._index is None:
            self._index = _ProjectedIndex(self._spectral)
        return self._index.query(q)

    def distances(self, values, method: str = "tree") -> np.ndarray:
        return self.nearest(values, method)[0]

    def distance(self, x) -> float:
        v = x.values if isinstance(x, StateVector) else np.asarray(x, dtype=float)
        if isinstance(x, StateVector) and x.grid != self.grid:
            raise ValueError("state lives on a different grid")
        return float(self.distances(v[None, :])[0])

    def save(self, path):
        header = dict(self.meta, L=self.grid.L, n=self.grid.n,
                      resolution=self.resolution, burn_in=self.burn_in)
        # np.savez accepts a path or a binary file object
        np.savez(path, points=self.points, equilibria=self.equilibria,
                 header=np.array(json.dumps(header, sort_keys=True)))

    @classmethod
    def load(cls, path) -> "AttractorCloud":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            grid = Grid(header.pop("L"), header.pop("n"))
            res = header.pop("resolution")
            burn = header.pop("burn_in")
            return cls(grid, z["points"], res, burn, header, z["equilibria"])


class _ProjectedIndex:
    """Exact nearest-neighbour search in spectral coordinates.

    Points map to ``(c[:m], |c[m:]|)``. Distances between mapped points never
    exceed true distances (reverse triangle inequality on the tail), so once
    the k-th mapped neighbour is at least as far as the best true distance
    among the first k, no other point can be closer.
    """

    def __init__(self, spectral: np.ndarray, m: int = 32, k0: int = 8, block: int = 1024):
        self.c = spectral
        self.m = min(m, spectral.shape[1])
        self.k0 = k0
        self.block = block
        self.tree = cKDTree(self._project(spectral))

    def _project(self, c):
        return np.column_stack([c[:, :self.m], np.linalg.norm(c[:, self.m:], axis=1)])

    def query(self, q: np.ndarray):
        N = self.c.shape[0]
        Q = q.shape[0]
        dist = np.full(Q, np.inf)
        idx = np.zeros(Q, dtype=np.int64)
        proj = self._project(q)
        pending = np.arange(Q)
        k = min(self.k0, N)
        while pending.size:
            unresolved = []
            for s in range(0, pending.size, self.block):
                rows = pending[s:s + self.block]
                lb, cand = self.tree.query(proj[rows], k=k)
                lb, cand = lb.reshape(rows.size, k), cand.reshape(rows.size, k)
                diff = q[rows, None, :] - self.c[cand]
                ex = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
                j = np.argmin(ex, axis=1)
                best = ex[np.arange(rows.size), j]
                better = best < dist[rows]
                dist[rows[better]] = best[better]
                idx[rows[better]] = cand[np.arange(rows.size), j][better]
                if k < N:
                    unresolved.append(rows[lb[:, -1] < dist[rows]])
            pending = np.concatenate(unresolved) if unresolved else np.zeros(0, dtype=int)
            k = min(4 * k, N)
        return dist, idx


def dist_to_attractor(x, cloud: AttractorCloud) -> float:
    """``inf`` over cloud points of the discrete L2 distance."""
    return cloud.distance(x)


def hausdorff(grid: Grid, A, B) -> float:
    """Symmetric Hausdorff distance between two finite sets of raw states."""
    D = cdist(np.atleast_2d(A), np.atleast_2d(B)) * math.sqrt(grid.h)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def dedup(grid: Grid, P: np.ndarray, spacing: float) -> np.ndarray:
    """Greedy subset of the rows of ``P`` with every row within ``spacing``."""
    keep = []
    for p in P:
        if not keep or np.min(grid.norm(np.array(keep) - p)) > spacing:
            keep.append(p)
    return np.array(keep)


def newton_equilibrium(st: Stepper, y0, tol: float = 1e-10, maxiter: int = 60):
    """Solve ``Lap_h y + g(y) = 0`` from ``y0``; returns ``(y, converged)``."""
    g = st.grid
    inv_h2 = 1.0 / g.h**2
    y = np.array(y0, dtype=float)
    ab = np.zeros((3, g.n))
    ab[0, 1:] = inv_h2
    ab[2, :-1] = inv_h2
    for _ in range(maxiter):
        p = np.concatenate(([0.0], y, [0.0]))
        F = (p[:-2] - 2.0 * y + p[2:]) * inv_h2 + st.spec.g(y)
        if not np.all(np.isfinite(F)):
            return y, False
        if np.max(np.abs(F)) < tol:
            return y, True
        ab[1] = -2.0 * inv_h2 + st.spec.g_prime(y)
        try:
            y = y - solve_banded((1, 1), ab, F)
        except np.linalg.LinAlgError:
            return y, False
    return y, False


def unstable_directions(st: Stepper, e: np.ndarray):
    """Eigenpairs of the linearisation at ``e`` with positive eigenvalue,
    eigenvectors normalised in the discrete L2 norm."""
    g = st.grid
    inv_h2 = 1.0 / g.h**2
    d = -2.0 * inv_h2 + st.spec.g_prime(e)
    off = np.full(g.n - 1, inv_h2)
    # only the top of the spectrum can be positive: sup g' - 0 bounds it
    hi = float(np.max(st.spec.g_prime(e)))
    if hi <= 0:
        return np.zeros(0), np.zeros((0, g.n))
    w, V = eigh_tridiagonal(d, off, select="v", select_range=(0.0, hi + 1.0))
    V = V / g.norm(V.T)[None, :]
    order = np.argsort(w)[::-1]
    return w[order], V[:, order].T


@dataclass
class _Tracer:
    st: Stepper
    spacing: float
    equilibria: list = field(default_factory=list)
    chunk: int = 5000
    max_time: float = 2000.0
    speed_tol: float = 1e-7

    def known(self, y) -> int:
        if not self.equilibria:
            return -1
        d = self.st.grid.norm(np.array(self.equilibria) - y)
        j = int(np.argmin(d))
        return j if d[j] <= self.spacing else -1

    def add(self, e) -> int:
        j = self.known(e)
        if j >= 0:
            return j
        self.equilibria.append(np.asarray(e, dtype=float))
        return len(self.equilibria) - 1

    def trace(self, e: np.ndarray, v: np.ndarray, offset: float = 1e-6):
        """Orbit from ``e + offset v`` sampled at arc-length ``spacing``.

        Stops inside the ``spacing / 2`` ball of a known equilibrium other
        than the start, or where the flow stalls (a new equilibrium).
        """
        st, g = self.st, self.st.grid
        y = e + offset * v
        kept = [y.copy()]
        arc = 0.0
        left = False
        t = 0.0
        end = None
        while t < self.max_time and end is None:
            rec, fail = st.run(y[None, :], np.zeros((1, self.chunk)))
            st._raise_on_fail(fail, t)
            R = rec[0]
            steps = g.norm(np.diff(R, axis=0))
            cum = arc + np.cumsum(steps)
            # sample where the arc length crosses a multiple of the spacing
            marks = np.flatnonzero(np.floor(cum / self.spacing) > np.floor(
                np.concatenate(([arc], cum[:-1])) / self.spacing)) + 1
            d_start = g.norm(R - e)
            stop = len(R) - 1
            if self.equilibria:
                E = np.array(self.equilibria)
                for k in range(1, len(R)):
                    if not left:
                        left = d_start[k] > self.spacing
                        continue
                    dk = g.norm(E - R[k])
                    j = int(np.argmin(dk))
                    if dk[j] <= 0.5 * self.spacing:
                        stop, end = k, j
                        break
            if end is None and steps[-1] / st.dt < self.speed_tol:
                e_new, ok = newton_equilibrium(st, R[-1])
                end = self.add(e_new if ok else R[-1])
                stop = len(R) - 1
            kept.extend(R[marks[marks <= stop]])
            arc = cum[stop - 1]
            y = R[stop].copy()
            t += stop * st.dt
        return np.array(kept), end


def _ensemble_initial(g: Grid, ensemble: int, radius: float, rng) -> np.ndarray:
    Y = np.zeros((ensemble, g.n))
    for m in range(1, ensemble):
        Y[m] = rng.uniform(0.0, radius) * random_field(g, rng)
    return Y


def approximate_attractor(st: Stepper, ensemble: int = 16, radius: Optional[float] = None,
                          seed: int = 0, delta_target: float = 1e-3, burn_in: float = 20.0,
                          snapshot_interval: float = 1.0, max_generations: int = 200,
                          unstable_tol: float = 1e-2, trace: bool = True) -> AttractorCloud:
    """Point cloud of the attractor of the undisturbed flow.

    Member 0 of the ensemble is the zero state; the others are smooth random
    fields with norm uniform in ``[0, radius]`` (default: the absorbing-ball
    radius). The returned resolution is the larger of the last generation gap
    and the orbit sampling spacing ``delta_target / 2``.

    Raises
    ------
    AttractorError
        If generations do not settle within ``max_generations``.
    """
    if ensemble < 1:
        raise ValueError("ensemble must be >= 1")
    radius = absorbing_radius(st) if radius is None else float(radius)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    g = st.grid
    spacing = 0.5 * delta_target
    rng = np.random.default_rng(seed)
    Y = _ensemble_initial(g, ensemble, radius, rng)
    Y = st.advance(Y, 0.0, st.steps_between(0.0, burn_in))
    k_snap = st.steps_between(0.0, snapshot_interval)
    gap = math.inf
    gen = 0
    while gap > delta_target:
        if gen >= max_generations:
            raise AttractorError(gap, gen)
        Y_next = st.advance(Y, 0.0, k_snap)
        gap = hausdorff(g, Y, Y_next)
        Y = Y_next
        gen += 1

    tracer = _Tracer(st, spacing)
    pieces = []
    for p in dedup(g, Y, spacing):
        e, ok = newton_equilibrium(st, p)
        if ok and g.norm(e - p) <= delta_target:
            tracer.add(e)
        else:
            pieces.append(p[None, :])

    n_orbits = n_slow = 0
    done = 0
    while trace and done < len(tracer.equilibria):
        e = tracer.equilibria[done]
        done += 1
        w, V = unstable_directions(st, e)
        for mu, v in zip(w, V):
            for sgn in (1.0, -1.0):
                if mu > unstable_tol:
                    orbit, _ = tracer.trace(e, sgn * v)
                    pieces.append(orbit)
                    n_orbits += 1
                else:
                    seg = _slow_connection(st, tracer, e, sgn * v, spacing)
                    if seg is not None:
                        pieces.append(seg)
                        n_slow += 1

    eq = np.array(tracer.equilibria) if tracer.equilibria else np.zeros((0, g.n))
    pts = np.concatenate([eq] + pieces) if pieces else eq
    meta = {"ensemble": ensemble, "seed": seed, "radius": radius,
            "delta_target": delta_target, "snapshot_interval": snapshot_interval,
            "generations": gen, "last_gap": gap, "spacing": spacing,
            "orbits": n_orbits, "slow_connections": n_slow}
    return AttractorCloud(g, pts, max(gap, spacing), burn_in, meta, eq)


def _slow_connection(st, tracer, e, v, spacing, max_len=0.1):
    """Equilibrium near ``e`` along a weakly unstable direction ``v``.

    Newton is started at geometrically growing offsets; the first new
    equilibrium within ``max_len`` is joined to ``e`` by a sampled segment.
    """
    g = st.grid
    for a in np.geomspace(1e-3, max_len, 12):
        y, ok = newton_equilibrium(st, e + a * v)
        if not ok:
            continue
        dist = float(g.norm(y - e))
        if spacing < dist <= max_len and tracer.known(y) < 0 and np.dot(y - e, v) > 0:
            tracer.add(y)
            k = max(2, math.ceil(dist / spacing) + 1)
            s = np.linspace(0.0, 1.0, k)[1:-1, None]
            return e + s * (y - e)
    return None


def near_invariance(st: Stepper, cloud: AttractorCloud, interval: float = 1.0) -> np.ndarray:
    """Distance from ``S0(interval) theta`` to the cloud for every cloud point."""
    out = st.advance(cloud.points, 0.0, st.steps_between(0.0, interval))
    return cloud.distances(out)


def distance_history(st: Stepper, cloud: AttractorCloud, Y0: np.ndarray, nsteps: int,
                     record_every: int = 1, u_steps=None, chunk: int = 4000) -> np.ndarray:
    """``dist(S(t) Y0[m], cloud)`` at every ``record_every``-th step, shape (M, nrec).

    ``u_steps`` (M, nsteps) holds per-step disturbance samples (default 0).
    Runs in time chunks so only one chunk of states is held at a time.
    """
    Y = np.array(np.atleast_2d(Y0), dtype=float)
    M, n = Y.shape
    chunk = max(record_every, (chunk // record_every) * record_every)
    D = np.empty((M, nsteps // record_every + 1))
    D[:, 0] = cloud.distances(Y)
    done, r = 0, 1
    while done < nsteps:
        k = min(chunk, nsteps - done)
        us = np.zeros((M, k)) if u_steps is None else u_steps[:, done:done + k]
        rec, fail = st.run(Y, us, record_every)
        st._raise_on_fail(fail, done * st.dt)
        nr = rec.shape[1] - 1
        D[:, r:r + nr] = cloud.distances(rec[:, 1:].reshape(-1, n)).reshape(M, nr)
        # only the last chunk can end between records, and nothing follows it
        Y = rec[:, -1].copy()
        r += nr
        done += k
    return D


class DistanceProfile:
    """Distance to the cloud along stored states, made exact only where needed.

    Exact distances are computed every ``anchor`` states. Elsewhere the
    distance to the nearest point of the neighbouring anchors is an upper
    bound. :meth:`weighted_sup` evaluates more exact distances until the
    supremum it returns is exact.
    """

    def __init__(self, cloud: AttractorCloud, states: np.ndarray, anchor: int = 16):
        self.cloud = cloud
        self.states = states
        N = states.shape[0]
        a = np.arange(0, N, anchor)
        if a[-1] != N - 1:
            a = np.append(a, N - 1)
        da, ia = cloud.nearest(states[a])
        P = cloud.points
        lo = np.minimum(np.arange(N) // anchor, a.size - 1)
        hi = np.minimum(lo + 1, a.size - 1)
        g = cloud.grid
        ub = np.minimum(g.norm(states - P[ia[lo]]), g.norm(states - P[ia[hi]]))
        ub[a] = da
        self.d = ub
        self.exact = np.zeros(N, dtype=bool)
        self.exact[a] = True

    def __len__(self):
        return self.d.size

    def refine(self, idx: np.ndarray):
        idx = idx[~self.exact[idx]]
        if idx.size:
            self.d[idx] = self.cloud.distances(self.states[idx])
            self.exact[idx] = True

    def weighted_sup(self, i: int, n: int, eps: float, rate_dt: float) -> float:
        """Exact ``max_{0 <= j <= n} exp(rate_dt j) max(0, d[i + j] - eps)``."""
        w = np.exp(rate_dt * np.arange(min(n + 1, self.d.size - i)))
        sl = slice(i, i + w.size)
        term = w * np.maximum(0.0, self.d[sl] - eps)
        ex = self.exact[sl]
        best = float(term[ex].max()) if ex.any() else 0.0
        cand = np.flatnonzero(~ex & (term > best))
        if cand.size:
            self.refine(cand + i)
            term = w * np.maximum(0.0, self.d[sl] - eps)
            best = float(term[self.exact[sl]].max())
        return best


def sample_near(cloud: AttractorCloud, radius: float, count: int, rng) -> np.ndarray:
    """States ``theta + rho xi``: random cloud point, smooth unit field ``xi``,
    ``rho`` uniform on ``[0, radius]``; each lies within ``radius`` of the cloud."""
    out = np.empty((count, cloud.grid.n))
    for j in range(count):
        theta = cloud.points[rng.integers(len(cloud))]
        out[j] = theta + rng.uniform(0.0, radius) * random_field(cloud.grid, rng)
    return out


@dataclass(frozen=True)
class KLEnvelope:
    """``beta0(r, t) = amplitude(r) exp(-a t)``.

    ``floor`` is the distance below which samples are not required to be
    dominated (the attractor resolution).
    """

    amplitude: MonotoneCurve
    a: float
    floor: float = 0.0
    inflation: float = 1.1
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("decay rate must be positive")

    def __call__(self, r, t):
        y = self.amplitude(np.asarray(r, dtype=float)) * np.exp(-self.a * np.asarray(t, dtype=float))
        return float(y) if np.ndim(y) == 0 else y

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude.to_dict(), "a": self.a, "floor": self.floor,
                "inflation": self.inflation, "info": self.info}

    @classmethod
    def from_dict(cls, d: dict) -> "KLEnvelope":
        return cls(MonotoneCurve.from_dict(d["amplitude"]), d["a"], d.get("floor", 0.0),
                   d.get("inflation", 1.1), d.get("info", {}))


def _tail_rate(t: np.ndarray, d: np.ndarray, floor: float) -> Optional[float]:
    """Least-squares decay rate of ``log d`` after the peak, above ``2 floor``."""
    k = int(np.argmax(d))
    tt, dd = t[k:], d[k:]
    m = dd > 2.0 * floor
    if np.count_nonzero(m) < 3:
        return None
    slope = np.polyfit(tt[m], np.log(dd[m]), 1)[0]
    return -slope if slope < 0 else None


def fit_envelope(r: np.ndarray, t: np.ndarray, D: np.ndarray, floor: float = 0.0,
                 inflation: float = 1.1, default_rate: float = 1.0) -> KLEnvelope:
    """KL envelope of distance histories ``D[j]`` on times ``t`` from ``r[j]``.

    The rate is the slowest per-trajectory tail rate; amplitudes are the
    smallest ``A_j >= r_j`` with ``A_j exp(-a t) >= D[j]`` wherever ``D[j]``
    exceeds ``floor``, and the amplitude is the inflated running maximum.
    """
    r = np.asarray(r, dtype=float)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if np.any(r < 0):
        raise ValueError("sample distances must be nonnegative")
    on_cloud = r <= 0
    if np.any(on_cloud & np.any(D > floor, axis=1)):
        raise ValueError("a sample starting on the cloud leaves the floor")
    # samples starting on the cloud carry no information about the envelope
    r, D = r[~on_cloud], D[~on_cloud]
    if r.size == 0:
        amp = MonotoneCurve.linear(inflation, max(floor, 1.0))
        return KLEnvelope(amp, float(default_rate), float(floor), inflation,
                          {"samples": 0, "rates": 0, "degenerate": True})
    rates = [_tail_rate(t, d, floor) for d in D]
    rates = [x for x in rates if x is not None]
    a = min(rates) if rates else default_rate
    w = np.where(D > floor, D, 0.0) * np.exp(a * t)[None, :]
    A = np.maximum(r, w.max(axis=1))
    order = np.argsort(r)
    rs, As = r[order], inflation * np.maximum.accumulate(A[order])
    # make both coordinates strictly increasing
    keep = np.concatenate(([True], np.diff(rs) > 0))
    rs, As = rs[keep], As[keep]
    for i in range(1, len(As)):
        if As[i] <= As[i - 1]:
            As[i] = As[i - 1] * (1 + 1e-12) + 1e-300
    knots_r = np.concatenate(([0.0], rs, [2.0 * rs[-1]]))
    knots_f = np.concatenate(([0.0], As, [2.0 * As[-1]]))
    info = {"samples": int(len(r)), "rates": len(rates), "r_max": float(rs[-1])}
    return KLEnvelope(MonotoneCurve(knots_r, knots_f), float(a), float(floor),
                      inflation, info)


def fit_beta0(st: Stepper, cloud: AttractorCloud, r0: float = 1.0, n_samples: int = 48,
              horizon: float = 60.0, record_every: int = 10, seed: int = 0,
              inflation: float = 1.1, floor: Optional[float] = None) -> KLEnvelope:
    """Fit ``beta0`` from undisturbed trajectories started near the cloud.

    Initial states are ``theta + rho xi`` with ``theta`` a random cloud point,
    ``xi`` a unit smooth random field and ``rho`` stratified on ``(0, 1.5 r0]``.

    Raises
    ------
    FitError
        If some trajectory is still farther than ``floor`` (default: the
        cloud resolution) from the cloud at the horizon.
    """
    if not r0 > 0 or n_samples < 1:
        raise ValueError("need r0 > 0 and n_samples >= 1")
    g = st.grid
    floor = cloud.resolution if floor is None else float(floor)
    rng = np.random.default_rng(seed)
    # distance to the cloud is at most rho, so oversample to cover (0, r0]
    rho = 1.5 * r0 * (np.arange(n_samples) + rng.uniform(size=n_samples)) / n_samples
    rho = np.maximum(rho, 1e-3 * r0 / n_samples)
    theta = rng.integers(0, len(cloud), size=n_samples)
    X0 = np.stack([cloud.points[i] + p * random_field(g, rng) for i, p in zip(theta, rho)])
    nsteps = st.steps_between(0.0, horizon)
    D = distance_history(st, cloud, X0, nsteps, record_every)
    t = st.dt * record_every * np.arange(D.shape[1])
    bad = np.flatnonzero(D[:, -1] > floor)
    if bad.size:
        raise FitError(f"{bad.size} of {n_samples} trajectories end farther than "
                       f"{floor:.3g} from the cloud (worst {D[bad, -1].max():.3g}); "
                       "refine the attractor or lengthen the horizon")
    env = fit_envelope(D[:, 0], t, D, floor, inflation)
    env.info.update({"r0": r0, "horizon": horizon, "seed": seed})
    return env
