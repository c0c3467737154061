"""Local ISS certificate and its Monte-Carlo falsification.

The certificate is ``|S_u(t) x0|_Theta <= beta(|x0|_Theta, t) + gamma(|u|_inf)``
for ``|x0|_Theta <= r0x`` and ``|u|_inf <= r0u``. Falsification samples
``(x0, u)`` pairs, simulates them, and records the smallest margin of that
estimate. The sublevel set ``M_u = {V <= psi_hi(chi(|u|_inf))}`` is checked
for forward invariance separately.
"""

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attractor import AttractorCloud, distance_history, sample_near
from .comparison import KLBound, MonotoneCurve, build_beta_gamma
from .evolve import Stepper
from .field import random_field
from .lyapunov import IssLyapunovData, LyapunovOracle
from .system import Disturbance

TOLERANCE_RATIONALE = ("2 delta + 1e-3: the attractor resolution delta enters both the "
                       "distance evaluation and the floor of V")


class EmptyCertificateError(RuntimeError):
    """No positive radius satisfies the certificate inequalities."""


def default_tolerance(cloud: AttractorCloud) -> float:
    return 2.0 * cloud.resolution + 1e-3


def _beta_grid(beta, r: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``beta(r[i], times[j])`` as a matrix."""
    if hasattr(beta, "along"):
        return beta.along(r, times)
    return np.asarray(beta(r[:, None], times[None, :]), dtype=float) * np.ones((r.size, times.size))


def _largest_below(f, r0: float, floor: float, iters: int = 200) -> float:
    """Largest ``r`` in ``[floor, r0]`` with ``f(r) < r0``, by bisection in log r."""
    if f(r0) < r0:
        return r0
    if not f(floor) < r0:
        return 0.0
    lo, hi = math.log(floor), math.log(r0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(math.exp(mid)) < r0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return math.exp(lo)


def select_radii(beta, gamma: MonotoneCurve, r0: float, margin: float = 0.01,
                 floor: Optional[float] = None):
    """Largest ``r0x < r0`` with ``beta(r0x, 0) < r0`` and ``r0u`` with
    ``gamma(r0u) < r0``, each shrunk by ``margin``.

    Raises
    ------
    EmptyCertificateError
        If ``beta(r, 0) >= r0`` down to ``floor`` (default ``1e-14 r0``).
    """
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    floor = 1e-14 * r0 if floor is None else floor
    rx = _largest_below(lambda r: float(beta(r, 0.0)), r0, floor)
    if rx <= 0:
        raise EmptyCertificateError(
            f"beta(r, 0) >= r0 = {r0} for all r >= {floor:.3g}; constructions too lossy")
    ru = float(gamma.invert()(r0))
    return (1.0 - margin) * rx, (1.0 - margin) * ru


@dataclass(frozen=True, eq=False)
class Certificate:
    """``beta``, ``gamma`` and the radii on which the estimate is claimed."""

    beta: object
    gamma: MonotoneCurve
    r0x: float
    r0u: float
    r0: float
    provenance: dict = field(default_factory=dict)

    def bound(self, r, t, unorm):
        return self.beta(r, t) + self.gamma(unorm)

    def check(self) -> bool:
        """The three strict inequalities on the radii."""
        return bool(self.r0x < self.r0 and self.beta(self.r0x, 0.0) < self.r0
                    and self.gamma(self.r0u) < self.r0)

    def to_dict(self) -> dict:
        d = {"r0": self.r0, "r0x": self.r0x, "r0u": self.r0u, "valid": self.check(),
             "gamma": self.gamma.to_dict(), "provenance": self.provenance}
        if isinstance(self.beta, KLBound):
            d["beta"] = {"psi_lo": self.beta.psi_lo.to_dict(),
                         "psi_hi": self.beta.psi_hi.to_dict(),
                         "decay_rate": self.beta.decay.A.to_dict()}
        else:
            d["beta"] = {"callable": repr(self.beta)}
        return d


@dataclass
class FalsificationReport:
    """Per-sample margins of the ISS estimate and any violations."""

    samples: int
    horizon: float
    tolerance: float
    seed: int
    margins: list
    violations: list
    mu_check: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def min_margin(self) -> float:
        return min((m["margin"] for m in self.margins), default=math.inf)

    @property
    def passed(self) -> bool:
        ok = not self.violations
        if self.mu_check is not None:
            ok = ok and self.mu_check["passed"]
        return ok

    def to_dict(self) -> dict:
        return {"samples": self.samples, "horizon": self.horizon,
                "tolerance": self.tolerance, "tolerance_rationale": TOLERANCE_RATIONALE,
                "seed": self.seed, "min_margin": self.min_margin,
                "violations": self.violations, "passed": self.passed,
                "mu_check": self.mu_check, "margins": self.margins, **self.extra}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def write_csv(self, dest):
        """Per-sample margins to a path or an open text file."""
        if hasattr(dest, "write"):
            self._csv(dest)
        else:
            with open(dest, "w", newline="") as fh:
                self._csv(fh)

    def _csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "dist0", "unorm", "margin", "t_min"])
        for m in self.margins:
            w.writerow([m["sample"], repr(m["dist0"]), repr(m["unorm"]),
                        repr(m["margin"]), repr(m["t_min"])])


def random_disturbance(rng, amplitude: float, horizon: float, dt: float,
                       max_pieces: int = 8) -> Disturbance:
    """Piecewise constant on 1 to ``max_pieces`` pieces, values uniform in
    ``[-amplitude, amplitude]``, breakpoints on the step grid."""
    k = int(rng.integers(1, max_pieces + 1))
    nsteps = max(1, int(round(horizon / dt)))
    inner = np.unique(rng.integers(1, nsteps, size=k - 1)) if k > 1 and nsteps > 1 else []
    b = np.concatenate(([0.0], np.asarray(inner, dtype=float) * dt))
    v = rng.uniform(-amplitude, amplitude, size=b.size)
    return Disturbance(b, v)


def _draw(cloud, r0x, r0u, horizon, dt, seed_seq):
    rng = np.random.default_rng(seed_seq)
    theta = cloud.points[rng.integers(len(cloud))]
    x0 = theta + rng.uniform(0.0, r0x) * random_field(cloud.grid, rng)
    return x0, random_disturbance(rng, r0u, horizon, dt)


def margins_for(cert: Certificate, st: Stepper, cloud: AttractorCloud, X0: np.ndarray,
                us: list, horizon: float, record_every: int = 10):
    """Margin histories ``beta + gamma - dist`` at recorded times, shape (M, nrec)."""
    nsteps = st.steps_between(0.0, horizon)
    U = np.stack([u.sample_grid(0.0, st.dt, nsteps) for u in us])
    D = distance_history(st, cloud, X0, nsteps, record_every, u_steps=U)
    t = st.dt * record_every * np.arange(D.shape[1])
    r = D[:, 0]
    unorm = np.array([u.sup_norm for u in us])
    B = _beta_grid(cert.beta, r, t) + np.asarray(cert.gamma(unorm))[:, None]
    return t, D, B - D


def falsify(cert: Certificate, st: Stepper, cloud: AttractorCloud, N: int = 500,
            horizon: float = 20.0, seed: int = 0, tolerance: Optional[float] = None,
            record_every: int = 10, threads: int = 1, batch: int = 25) -> FalsificationReport:
    """Sample ``N`` pairs ``(x0, u)`` within the certificate radii and test the estimate.

    Sample ``j`` uses the ``j``-th child of ``SeedSequence(seed)``, so results
    do not depend on batching or thread count.
    """
    tol = default_tolerance(cloud) if tolerance is None else float(tolerance)
    children = np.random.SeedSequence(seed).spawn(N)
    draws = [_draw(cloud, cert.r0x, cert.r0u, horizon, st.dt, c) for c in children]

    def work(lo):
        hi = min(N, lo + batch)
        X0 = np.stack([draws[j][0] for j in range(lo, hi)])
        t, D, G = margins_for(cert, st, cloud, X0, [draws[j][1] for j in range(lo, hi)],
                              horizon, record_every)
        return lo, t, D, G

    starts = range(0, N, batch)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, starts))
    else:
        results = [work(lo) for lo in starts]

    margins, violations = [None] * N, []
    for lo, t, D, G in sorted(results, key=lambda x: x[0]):
        for i in range(G.shape[0]):
            j = lo + i
            k = int(np.argmin(G[i]))
            margins[j] = {"sample": j, "dist0": float(D[i, 0]),
                          "unorm": draws[j][1].sup_norm, "margin": float(G[i, k]),
                          "t_min": float(t[k])}
            if G[i, k] < -tol:
                violations.append({"sample": j, "time": float(t[k]), "gap": float(-G[i, k]),
                                   "margin": float(G[i, k]),
                                   "x0": draws[j][0].tolist(), "u": draws[j][1].to_dict()})
    return FalsificationReport(N, horizon, tol, seed, margins, violations,
                               extra={"record_every": record_every})


def replay(cert: Certificate, st: Stepper, cloud: AttractorCloud, violation: dict,
           horizon: float, record_every: int = 10) -> float:
    """Re-simulate a persisted violation and return its minimal margin."""
    x0 = np.asarray(violation["x0"], dtype=float)
    u = Disturbance.from_dict(violation["u"])
    _, _, G = margins_for(cert, st, cloud, x0[None, :], [u], horizon, record_every)
    return float(G[0].min())


def bisect_violation(cert: Certificate, st: Stepper, cloud: AttractorCloud, violation: dict,
                     horizon: float, tolerance: float, record_every: int = 10,
                     iters: int = 30) -> dict:
    """Largest scaling ``s`` of the violating ``u`` that still passes.

    ``passes_at_zero = False`` means the estimate fails even without
    disturbance, which points at ``beta`` rather than at ``gamma``.
    """
    x0 = np.asarray(violation["x0"], dtype=float)
    u = Disturbance.from_dict(violation["u"])

    def ok(s):
        _, _, G = margins_for(cert, st, cloud, x0[None, :], [u.scaled(s)], horizon,
                              record_every)
        return bool(G[0].min() >= -tolerance)

    if not ok(0.0):
        return {"sample": violation.get("sample"), "passes_at_zero": False, "scale": 0.0}
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return {"sample": violation.get("sample"), "passes_at_zero": True, "scale": lo}


def _v_rows(o: LyapunovOracle, X: np.ndarray, threads: int = 1) -> np.ndarray:
    """``V`` for each row of ``X``, spread over ``threads`` workers."""
    if threads <= 1 or len(X) < 2:
        return o.v_many(X)
    o.ball_distance(X)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return np.array(list(ex.map(lambda x: o.v_from_profile(o.profile(x)), X)))


def mu_threshold(data: IssLyapunovData, unorm: float) -> float:
    return float(data.psi_hi(data.chi(unorm)))


def membership_Mu(x, u: Disturbance, data: IssLyapunovData, o: LyapunovOracle) -> bool:
    """Whether ``V(x) <= psi_hi(chi(|u|_inf))``; ``x`` must lie in the ``r0``-ball."""
    return o.v(x) <= mu_threshold(data, u.sup_norm)


def check_invariance_Mu(st: Stepper, cloud: AttractorCloud, data: IssLyapunovData,
                        o: LyapunovOracle, u: Disturbance, samples: int = 50,
                        horizon: float = 20.0, seed: int = 0, check_every: float = 1.0,
                        tolerance: Optional[float] = None, max_tries: int = 20,
                        threads: int = 1) -> dict:
    """Evolve ``samples`` states of ``M_u`` under ``u`` and track ``V`` and the distance.

    Candidates ``theta + rho xi`` with ``rho`` uniform in ``[0, r0]`` are kept
    when ``V <= psi_hi(chi(|u|_inf))``. Passing requires ``V(x(t))`` to stay
    within ``tolerance`` of the threshold at every check time, and ``x(t)`` to
    stay in the ``r0``-ball.
    """
    tol = default_tolerance(cloud) if tolerance is None else float(tolerance)
    thr = mu_threshold(data, u.sup_norm)
    gam = float(data.psi_lo.invert()(thr))
    rng = np.random.default_rng(seed)
    members = []
    tries = 0
    while len(members) < samples:
        if tries >= max_tries:
            raise RuntimeError(f"found {len(members)} of {samples} members of M_u; "
                               "the set appears empty beyond the cloud")
        X = sample_near(cloud, o.r0, samples, rng)
        X = X[cloud.distances(X) <= o.r0]
        V = _v_rows(o, X, threads) if len(X) else np.zeros(0)
        members.extend(X[V <= thr][: samples - len(members)])
        tries += 1
    X0 = np.array(members)
    dist0 = cloud.distances(X0)
    k = st.steps_between(0.0, check_every)
    nchk = st.steps_between(0.0, horizon) // k
    rec, fail = st.run(X0, np.broadcast_to(u.sample_grid(0.0, st.dt, nchk * k), (len(X0), nchk * k)),
                       record_every=k)
    st._raise_on_fail(fail, 0.0)
    worst_excess = -math.inf
    max_dist = 0.0
    left = 0
    for m in range(len(X0)):
        S = rec[m]
        d = cloud.distances(S)
        max_dist = max(max_dist, float(d.max()))
        inside = d <= o.r0
        left += int(not inside.all())
        if inside.any():
            V = _v_rows(o, S[inside], threads)
            worst_excess = max(worst_excess, float(V.max() - thr))
    contained = bool(np.all(dist0 <= gam * (1 + 1e-12) + tol))
    passed = worst_excess <= tol and left == 0 and contained
    return {"samples": int(len(X0)), "unorm": u.sup_norm, "threshold": thr,
            "gamma_radius": gam, "worst_excess": worst_excess, "max_dist": max_dist,
            "left_ball": left, "contained": contained, "horizon": horizon,
            "check_every": check_every, "tolerance": tol, "passed": bool(passed)}


def build_certificate(o: LyapunovOracle, data: IssLyapunovData,
                      r0u_override: Optional[float] = None, provenance=None):
    """``beta``, ``gamma`` from the Lyapunov data and radii from ``select_radii``.

    Returns ``(certificate, warnings)``; an ``r0u_override`` above the
    selected radius is clamped with a warning.
    """
    beta, gamma = build_beta_gamma(data.psi_lo, data.psi_hi, data.chi, data.decay_rate())
    r0x, r0u = select_radii(beta, gamma, o.r0)
    warnings = []
    if r0u_override is not None:
        if r0u_override > r0u:
            warnings.append(f"r0u = {r0u_override} exceeds the admissible {r0u:.6g}; clamped")
        else:
            r0u = float(r0u_override)
    prov = {"r0": o.r0, "c0": o.c0, "K": o.K, "delta": o.cloud.resolution,
            "beta0_rate": o.beta0.a, "T_table": o.T_table.tolist()}
    prov.update(provenance or {})
    return Certificate(beta, gamma, r0x, r0u, o.r0, prov), warnings


def certify_liss(st: Stepper, cloud: AttractorCloud, o: LyapunovOracle,
                 data: IssLyapunovData, N: int = 500, horizon: float = 20.0, seed: int = 0,
                 tolerance: Optional[float] = None, r0u_override: Optional[float] = None,
                 record_every: int = 10, threads: int = 1, mu_samples: int = 0,
                 mu_unorm: float = 0.05, provenance=None, mu_seed: Optional[int] = None):
    """Build the certificate and falsify it; optionally check ``M_u`` invariance.

    Raises
    ------
    EmptyCertificateError
        When no admissible ``r0x`` exists.
    """
    cert, warnings = build_certificate(o, data, r0u_override, provenance)
    rep = falsify(cert, st, cloud, N, horizon, seed, tolerance, record_every, threads)
    if mu_samples:
        rep.mu_check = check_invariance_Mu(st, cloud, data, o, Disturbance.constant(mu_unorm),
                                           mu_samples, horizon,
                                           seed if mu_seed is None else mu_seed,
                                           tolerance=rep.tolerance, threads=threads)
    rep.extra["warnings"] = warnings
    rep.extra["certificate_valid"] = cert.check()
    return cert, rep
