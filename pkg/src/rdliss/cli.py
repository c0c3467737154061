"""Command-line front end and cached pipeline.

Stages write into ``<out>/<stage>/`` together with a ``manifest.json`` that
records the stage's config hash and the SHA-256 of every file. A stage whose
manifest matches the current config and whose files verify is not rerun.

Exit codes: 0 success or pass, 1 violation or failed check, 2 usage or
configuration error, 3 numerical error (blow-up, no convergence).
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attractor import (AttractorCloud, AttractorError, FitError, KLEnvelope,
                        approximate_attractor, fit_beta0)
from .certify import EmptyCertificateError, certify_liss
from .config import (ConfigError, build_disturbance, build_initial_state, build_stepper,
                     config_hash, load_config, stream_seed)
from .evolve import BlowUpError, evolve
from .lyapunov import LyapunovOracle, psi_bounds
from .system import validate_conditions

log = logging.getLogger("rdliss")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class MissingStageError(RuntimeError):
    """An upstream artifact is absent or was built from a different config."""


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


_UMASK = os.umask(0)
os.umask(_UMASK)


def write_atomic(path: Path, data) -> str:
    """Write ``data`` (str or bytes) via a temporary file and rename; returns its hash."""
    if isinstance(data, str):
        data = data.encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600; give the file the mode open() would
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return _sha256(data)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class Pipeline:
    """Stages ``attractor -> lyapunov -> certify`` with on-disk caching."""

    def __init__(self, cfg: dict, out: Path, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out)
        self.threads = threads
        self._st = None

    @property
    def st(self):
        if self._st is None:
            self._st = build_stepper(self.cfg)
        return self._st

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    def _manifest(self, stage):
        p = self.stage_dir(stage) / "manifest.json"
        if not p.exists():
            return None
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError:
            return None

    def cached(self, stage: str) -> bool:
        """Manifest matches the config hash and every listed file verifies."""
        m = self._manifest(stage)
        if m is None or m.get("config_hash") != config_hash(self.cfg, stage):
            return False
        for name, digest in m.get("files", {}).items():
            f = self.stage_dir(stage) / name
            if not f.exists() or _sha256(f.read_bytes()) != digest:
                return False
        return True

    def _commit(self, stage: str, files: dict, summary: dict, timing: dict):
        d = self.stage_dir(stage)
        digests = {name: write_atomic(d / name, data) for name, data in files.items()}
        manifest = {"stage": stage, "config_hash": config_hash(self.cfg, stage),
                    "full_config_hash": config_hash(self.cfg), "version": __version__,
                    "files": digests, "summary": summary, "timing_s": timing,
                    "config": self.cfg}
        write_atomic(d / "manifest.json", dumps(manifest))

    # attractor cloud and KL envelope
    def attractor(self, build: bool = True):
        if self.cached("attractor"):
            log.info("attractor: cache hit")
            d = self.stage_dir("attractor")
            cloud = AttractorCloud.load(d / "cloud.npz")
            b = json.loads((d / "beta0.json").read_text())
            b.pop("config_hash", None)
            return cloud, KLEnvelope.from_dict(b)
        if not build:
            raise MissingStageError("attractor")
        a, b = self.cfg["attractor"], self.cfg["beta0"]
        t0 = time.perf_counter()
        cloud = approximate_attractor(
            self.st, ensemble=a["ensemble"], radius=a["radius"],
            seed=stream_seed(self.cfg, "attractor"), delta_target=a["delta_target"],
            burn_in=a["burn_in"], snapshot_interval=a["snapshot_interval"],
            max_generations=a["max_generations"])
        t1 = time.perf_counter()
        beta0 = fit_beta0(self.st, cloud, r0=self.cfg["lyapunov"]["r0"], n_samples=b["samples"],
                          horizon=b["horizon"], record_every=b["record_every"],
                          seed=stream_seed(self.cfg, "beta0"), inflation=b["inflation"])
        t2 = time.perf_counter()
        h = config_hash(self.cfg, "attractor")
        cloud.meta["config_hash"] = h
        buf = io.BytesIO()
        cloud.save(buf)
        g = self.st.grid
        summary = {"points": len(cloud), "resolution": cloud.resolution,
                   "equilibria": len(cloud.equilibria),
                   "equilibrium_norms": [float(x) for x in g.norm(cloud.equilibria)],
                   "generations": cloud.meta["generations"], "beta0_rate": beta0.a}
        self._commit("attractor", {"cloud.npz": buf.getvalue(),
                                   "beta0.json": dumps(dict(beta0.to_dict(), config_hash=h))},
                     summary, {"attractor": t1 - t0, "beta0": t2 - t1})
        return cloud, beta0

    def oracle(self, cloud, beta0):
        ly = self.cfg["lyapunov"]
        o = LyapunovOracle(self.st, cloud, beta0, r0=ly["r0"], c0=ly["c0"], K=ly["K"])
        return o, psi_bounds(o)

    # Lyapunov data dumps
    def lyapunov(self, build: bool = True):
        cloud, beta0 = self.attractor(build)
        o, data = self.oracle(cloud, beta0)
        if self.cached("lyapunov"):
            log.info("lyapunov: cache hit")
            return o, data
        t0 = time.perf_counter()
        rows = o.sample_field(self.cfg["lyapunov"]["field_samples"],
                              seed=stream_seed(self.cfg, "lyapunov"))
        curves = dict(data.to_dict(), config_hash=config_hash(self.cfg, "lyapunov"))
        files = {"curves.json": dumps(curves),
                 "v_field.csv": _csv_text(["sample", "dist_theta", "V"],
                                          [(j, repr(d), repr(v)) for j, d, v in rows])}
        for name, c in data.curves().items():
            files[f"{name}.csv"] = _csv_text(["r", "f"], [(repr(float(a)), repr(float(b)))
                                                         for a, b in c.knots])
        summary = {"T_table": o.T_table.tolist(), "tail": o.tail, "floor": o.floor,
                   "c0": o.c0, "K": o.K, "r0": o.r0}
        self._commit("lyapunov", files, summary, {"field": time.perf_counter() - t0})
        return o, data

    def certify(self, build: bool = False):
        """Returns ``(report dict, passed)``."""
        missing = [s for s in ("attractor",) if not self.cached(s)]
        if missing and not build:
            raise MissingStageError(", ".join(missing))
        cloud, beta0 = self.attractor(build)
        o, data = self.oracle(cloud, beta0)
        c = self.cfg["certify"]
        if self.cached("certify"):
            log.info("certify: cache hit")
            rep = json.loads((self.stage_dir("certify") / "report.json").read_text())
            return rep, rep["passed"]
        t0 = time.perf_counter()
        try:
            cert, rep = certify_liss(
                self.st, cloud, o, data, N=c["N"], horizon=c["horizon"],
                seed=stream_seed(self.cfg, "certify"), tolerance=c["tolerance"],
                r0u_override=c["r0u"], record_every=c["record_every"], threads=self.threads,
                mu_samples=c["mu_samples"], mu_unorm=c["mu_unorm"],
                provenance={"config_hash": config_hash(self.cfg, "certify")},
                mu_seed=stream_seed(self.cfg, "mu"))
        except EmptyCertificateError as e:
            report = {"passed": False, "empty_certificate": True, "reason": str(e),
                      "config_hash": config_hash(self.cfg, "certify")}
            self._commit("certify", {"report.json": dumps(report)}, {"passed": False},
                         {"certify": time.perf_counter() - t0})
            return report, False
        for w in rep.extra.get("warnings", []):
            log.warning(w)
        report = rep.to_dict()
        report["config_hash"] = config_hash(self.cfg, "certify")
        report["certificate"] = {"r0x": cert.r0x, "r0u": cert.r0u, "r0": cert.r0}
        buf = io.StringIO()
        rep.write_csv(buf)
        certificate = dict(cert.to_dict(), config_hash=config_hash(self.cfg, "certify"))
        files = {"certificate.json": dumps(certificate), "report.json": dumps(report),
                 "margins.csv": buf.getvalue()}
        summary = {"passed": rep.passed, "violations": len(rep.violations),
                   "min_margin": rep.min_margin, "r0x": cert.r0x, "r0u": cert.r0u,
                   "report_sha256": _sha256(files["report.json"].encode())}
        self._commit("certify", files, summary, {"certify": time.perf_counter() - t0})
        return report, rep.passed


def cmd_simulate(p: Pipeline, args) -> int:
    st = p.st
    sim = p.cfg["simulate"]
    x0 = build_initial_state(p.cfg, st.grid)
    u = build_disturbance(p.cfg)
    d = p.out / "simulate"
    try:
        traj = evolve(st, x0, 0.0, float(sim["t_end"]), u, record_every=sim["record_every"])
    except BlowUpError as e:
        write_atomic(d / "blowup.json", dumps(e.as_dict()))
        log.error(str(e))
        return EXIT_NUMERIC
    cloud = p.attractor(build=False)[0] if p.cached("attractor") else None
    d.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=d, delete=False, suffix=".csv") as fh:
        tmp = fh.name
    traj.write_csv(tmp, cloud)
    os.replace(tmp, d / "trajectory.csv")
    print(f"final norm {float(traj.norms[-1])!r} after {len(traj) - 1} records -> {d / 'trajectory.csv'}")
    return EXIT_OK


def cmd_attractor(p: Pipeline, args) -> int:
    cloud, beta0 = p.attractor()
    norms = p.st.grid.norm(cloud.equilibria)
    print(f"cloud: {len(cloud)} points, {len(cloud.equilibria)} equilibria "
          f"(norms {', '.join(f'{x:.4f}' for x in norms)}), resolution {cloud.resolution:.3g}; "
          f"beta0 rate {beta0.a:.4g}")
    return EXIT_OK


def cmd_lyapunov(p: Pipeline, args) -> int:
    o, data = p.lyapunov()
    print(f"T(1/k) = {', '.join(f'{t:.3f}' for t in o.T_table)}; tail {o.tail:.3g}; "
          f"curves in {p.stage_dir('lyapunov')}")
    return EXIT_OK


def cmd_certify(p: Pipeline, args) -> int:
    rep, passed = p.certify(build=args.build)
    if rep.get("empty_certificate"):
        print(f"empty certificate: {rep['reason']}")
        return EXIT_FAIL
    c = rep["certificate"]
    print(f"r0x={c['r0x']:.4g} r0u={c['r0u']:.4g}; {rep['samples']} samples, "
          f"{len(rep['violations'])} violations, min margin {rep['min_margin']:.4g}; "
          f"M_u check {'passed' if (rep['mu_check'] or {}).get('passed', True) else 'FAILED'}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_validate(p: Pipeline, args) -> int:
    spec = p.st.spec
    if spec.test_only:
        rep = {"passed": False, "reason": f"'{spec.name}' has no growth certificate"}
    else:
        rep = validate_conditions(spec).as_dict()
        rep["certificate"] = spec.certificate()
    write_atomic(p.out / "validate" / "report.json", dumps(rep))
    print(f"growth conditions {'hold' if rep['passed'] else 'FAIL'} for {spec.name}")
    return EXIT_OK if rep["passed"] else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "attractor": cmd_attractor, "lyapunov": cmd_lyapunov,
            "certify": cmd_certify, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdliss", description=(
        "Attractor, Lyapunov function and local ISS certificate for a "
        "reaction-diffusion equation with a disturbance input."))
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", help="output directory (overrides config 'output')")
        sp.add_argument("--seed", type=int, help="override the root seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "certify":
            sp.add_argument("--build", action="store_true",
                            help="build missing upstream stages instead of failing")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or cfg["output"] or "rdliss-out")
        return COMMANDS[args.command](Pipeline(cfg, out, args.threads), args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingStageError as e:
        print(f"missing upstream stage: {e}; run `rdliss {e}` first or pass --build",
              file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AttractorError, FitError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
