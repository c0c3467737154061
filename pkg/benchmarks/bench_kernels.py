"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 256] [--steps 2000] [--batch 16]

Times the IMEX-Euler integrator (one member and a batch) and the brute-force
nearest-neighbour scan in both backends, plus the projected KD-tree used for
cloud queries, and checks that the backends agree. Times are per step and
member, or per query.
"""

import argparse
import time

import numpy as np

from rdliss import _backend, _pykernels
from rdliss.attractor import AttractorCloud
from rdliss.config import build_stepper, parse_config
from rdliss.evolve import BLOWUP_NORM
from rdliss.field import random_field


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_imex(st, batch, steps, repeat, rng):
    Y0 = np.stack([random_field(st.grid, rng) for _ in range(batch)])
    U = rng.uniform(-0.1, 0.1, (batch, steps))
    coeffs = np.asarray(st.spec.coeffs, dtype=float)

    def compiled():
        return _backend.ckernels.imex_run(Y0, st.dt, st._inv_h2, st._cprime, st._dinv, coeffs,
                                          st._hvec, U, steps, BLOWUP_NORM)

    def fallback():
        return _pykernels.imex_run(Y0, st.dt, st._inv_h2, st._lapack, st.spec.g, st._hvec, U,
                                   steps, BLOWUP_NORM)

    tp, (rp, _) = best_of(fallback, repeat)
    row = {"kernel": f"imex_run x{batch}", "python_us": 1e6 * tp / (batch * steps)}
    if _backend.ckernels is not None:
        tc, (rc, _) = best_of(compiled, repeat)
        row.update(compiled_us=1e6 * tc / (batch * steps), speedup=tp / tc,
                   max_diff=float(np.max(np.abs(rc - rp))))
    return row


def bench_nearest(cloud, queries, repeat):
    # the scan works in spectral coordinates, where Euclidean distance is the L2 norm
    P = cloud._spectral
    Q = np.ascontiguousarray(cloud.grid.to_spectral(queries))
    m = len(Q)
    tp, (dp, _) = best_of(lambda: _pykernels.nearest(P, Q), repeat)
    row = {"kernel": "nearest scan", "python_us": 1e6 * tp / m}
    if _backend.ckernels is not None:
        tc, (dc, _) = best_of(lambda: _backend.ckernels.nearest(P, Q, 0), repeat)
        row.update(compiled_us=1e6 * tc / m, speedup=tp / tc,
                   max_diff=float(np.max(np.abs(dc - dp))))
    cloud.nearest(queries[:1])  # build the index outside the timing
    tt, (dt_, _) = best_of(lambda: cloud.nearest(queries, method="tree"), repeat)
    tree = {"kernel": "nearest tree", "python_us": 1e6 * tt / m,
            "max_diff": float(np.max(np.abs(dt_ - dp)))}
    return [row, tree]


def synthetic_cloud(st, size, rng):
    # points spread along a curve through the origin, like a real attractor cloud
    s = np.linspace(-1.0, 1.0, size)
    phi = [st.grid.mode(j).values for j in (1, 2, 3)]
    P = np.outer(1.8 * s, phi[0]) + np.outer(0.3 * s**2, phi[1]) + np.outer(0.1 * s**3, phi[2])
    return AttractorCloud(st.grid, P, 1e-3, 0.0, {}, P[[size // 2]])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--cloud", type=int, default=20000)
    ap.add_argument("--queries", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    st = build_stepper(parse_config({
        "grid": {"L": 2 * np.pi, "n": args.n}, "nonlinearity": {"builtin": "chafee_infante"},
        "control": {"mode": 1}}))
    cloud = synthetic_cloud(st, args.cloud, rng)
    # queries near the cloud, as along a trajectory
    Q = cloud.points[rng.integers(args.cloud, size=args.queries)]
    Q = Q + 0.05 * np.stack([random_field(st.grid, rng) for _ in range(args.queries)])

    rows = [bench_imex(st, b, args.steps, args.repeat, rng) for b in (1, args.batch)]
    rows += bench_nearest(cloud, Q, args.repeat)

    print(f"backend at import: {_backend.BACKEND}; n = {args.n}")
    print(f"{'kernel':<16}{'python us/op':>14}{'compiled us/op':>16}{'speedup':>10}{'max diff':>12}")
    for r in rows:
        c = f"{r['compiled_us']:.3f}" if "compiled_us" in r else "-"
        s = f"{r['speedup']:.1f}x" if "speedup" in r else "-"
        print(f"{r['kernel']:<16}{r['python_us']:>14.3f}{c:>16}{s:>10}{r.get('max_diff', 0):>12.2e}")
    return rows


if __name__ == "__main__":
    main()
