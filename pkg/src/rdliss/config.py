"""Strict JSON experiment configuration.

Physical parameters (grid, nonlinearity, control profile) have no defaults;
numerical knobs do, and the filled-in values are recorded in every output.
Unknown keys are errors.
"""

import copy
import hashlib
import json

import numpy as np

from .evolve import Stepper
from .field import Grid, StateVector
from .system import (ControlShape, Disturbance, NonlinearSpec, chafee_infante,
                     odd_polynomial, polynomial_spec, zero_reaction)

REQUIRED = object()

SCHEMA = {
    "seed": 0,
    "output": None,
    "grid": {"L": REQUIRED, "n": REQUIRED},
    "nonlinearity": {"builtin": None, "coeffs": None, "certificate": None},
    "control": {"mode": None, "values": None},
    "stepper": {"dt": 1e-3},
    "attractor": {"seed": None, "ensemble": 16, "delta_target": 1e-3, "burn_in": 20.0, "radius": None,
                  "snapshot_interval": 1.0, "max_generations": 200},
    "beta0": {"samples": 48, "horizon": 60.0, "record_every": 10, "inflation": 1.1},
    "lyapunov": {"c0": 0.5, "K": 8, "r0": 1.0, "field_samples": 20},
    "certify": {"seed": None, "N": 500, "horizon": 20.0, "tolerance": None, "r0u": None,
                "record_every": 10, "mu_samples": 50, "mu_unorm": 0.05},
    "simulate": {"x0": None, "u": None, "t_end": 1.0, "record_every": 1},
}

CERTIFICATE_KEYS = {"p", "alpha1", "alpha2", "kappa", "lambda"}

# sections each pipeline stage depends on, for cache keys
STAGE_SECTIONS = {
    "attractor": ("grid", "nonlinearity", "control", "stepper", "attractor", "beta0",
                  "lyapunov.r0", "seed"),
    "lyapunov": ("grid", "nonlinearity", "control", "stepper", "attractor", "beta0",
                 "lyapunov", "seed"),
    "certify": ("grid", "nonlinearity", "control", "stepper", "attractor", "beta0",
                "lyapunov", "certify", "seed"),
}

# child index of the root seed used by each random consumer
SEED_STREAMS = {"attractor": 0, "beta0": 1, "lyapunov": 2, "certify": 3, "mu": 4}
# section whose optional "seed" replaces the root seed for a stream
SEED_OVERRIDES = {"attractor": "attractor", "certify": "certify", "mu": "certify"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _merge(schema, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"'{path or 'config'}' must be an object")
    out = {}
    for key in given:
        if key not in schema:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key '{where}'")
    for key, default in schema.items():
        where = f"{path}.{key}" if path else key
        if isinstance(default, dict):
            out[key] = _merge(default, given.get(key, {}), where)
        elif key in given:
            out[key] = given[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing required key '{where}'")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _positive(cfg, dotted, integer=False, allow_none=False):
    sec, key = dotted.split(".")
    v = cfg[sec][key]
    if v is None and allow_none:
        return
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0
    if integer:
        ok = ok and float(v).is_integer()
    if not ok:
        kind = "a positive integer" if integer else "positive"
        raise ConfigError(f"'{dotted}' must be {kind}, got {v!r}")


def parse_config(raw: dict) -> dict:
    """Validate ``raw`` and fill numerical defaults."""
    cfg = _merge(SCHEMA, raw, "")
    for k in ("grid.L", "stepper.dt", "attractor.delta_target", "attractor.snapshot_interval",
              "beta0.horizon", "beta0.inflation", "lyapunov.c0", "lyapunov.r0",
              "certify.horizon", "certify.mu_unorm", "simulate.t_end"):
        _positive(cfg, k)
    for k in ("grid.n", "attractor.ensemble", "attractor.max_generations", "beta0.samples",
              "beta0.record_every", "lyapunov.K", "lyapunov.field_samples", "certify.N",
              "certify.record_every", "simulate.record_every"):
        _positive(cfg, k, integer=True)
    for k in ("certify.tolerance", "certify.r0u"):
        v = cfg["certify"][k.split(".")[1]]
        if v is not None and not (isinstance(v, (int, float)) and v >= 0):
            raise ConfigError(f"'{k}' must be >= 0, got {v!r}")
    if cfg["attractor"]["burn_in"] < 0:
        raise ConfigError("'attractor.burn_in' must be >= 0")
    for where, v in (("seed", cfg["seed"]), ("attractor.seed", cfg["attractor"]["seed"]),
                     ("certify.seed", cfg["certify"]["seed"])):
        if where != "seed" and v is None:
            continue
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ConfigError(f"'{where}' must be a nonnegative integer")
    nl = cfg["nonlinearity"]
    if (nl["builtin"] is None) == (nl["coeffs"] is None):
        raise ConfigError("'nonlinearity' needs exactly one of 'builtin' or 'coeffs'")
    if nl["builtin"] is not None and nl["builtin"] not in ("chafee_infante", "zero"):
        raise ConfigError(f"unknown 'nonlinearity.builtin' {nl['builtin']!r}")
    if nl["certificate"] is not None:
        if nl["coeffs"] is None:
            raise ConfigError("'nonlinearity.certificate' requires 'coeffs'")
        extra = set(nl["certificate"]) - CERTIFICATE_KEYS
        if extra:
            raise ConfigError(f"unknown key 'nonlinearity.certificate.{sorted(extra)[0]}'")
        missing = CERTIFICATE_KEYS - set(nl["certificate"])
        if missing:
            raise ConfigError(f"missing required key 'nonlinearity.certificate.{sorted(missing)[0]}'")
    ctl = cfg["control"]
    if (ctl["mode"] is None) == (ctl["values"] is None):
        raise ConfigError("'control' needs exactly one of 'mode' or 'values'")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return parse_config(raw)


def _pick(cfg, dotted):
    sec, _, key = dotted.partition(".")
    return cfg[sec][key] if key else cfg[sec]


def config_hash(cfg: dict, stage=None) -> str:
    """SHA-256 of the canonical JSON of the config, or of the sections a stage uses."""
    part = cfg if stage is None else {k: _pick(cfg, k) for k in STAGE_SECTIONS[stage]}
    blob = json.dumps(part, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def stream_seed(cfg: dict, stream: str) -> int:
    """Independent seed for one consumer, derived from the root seed.

    A ``seed`` set in the consumer's config section takes the root's place.
    """
    root = cfg["seed"]
    sec = SEED_OVERRIDES.get(stream)
    if sec is not None and cfg[sec]["seed"] is not None:
        root = cfg[sec]["seed"]
    ss = np.random.SeedSequence(root, spawn_key=(SEED_STREAMS[stream],))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def build_spec(cfg: dict) -> NonlinearSpec:
    nl = cfg["nonlinearity"]
    if nl["builtin"] == "chafee_infante":
        return chafee_infante()
    if nl["builtin"] == "zero":
        return zero_reaction()
    coeffs = [float(c) for c in nl["coeffs"]]
    cert = nl["certificate"]
    try:
        if cert is None:
            return odd_polynomial(coeffs)
        return polynomial_spec(coeffs, p=cert["p"], alpha1=cert["alpha1"],
                               alpha2=cert["alpha2"], kappa=cert["kappa"], lam=cert["lambda"])
    except ValueError as e:
        raise ConfigError(f"'nonlinearity': {e}") from e


def build_stepper(cfg: dict) -> Stepper:
    g = Grid(float(cfg["grid"]["L"]), int(cfg["grid"]["n"]))
    ctl = cfg["control"]
    try:
        if ctl["mode"] is not None:
            control = ControlShape.mode(g, int(ctl["mode"]))
        else:
            control = ControlShape(StateVector(g, ctl["values"]))
    except ValueError as e:
        raise ConfigError(f"'control': {e}") from e
    return Stepper(g, build_spec(cfg), control, float(cfg["stepper"]["dt"]))


def build_initial_state(cfg: dict, g: Grid) -> np.ndarray:
    """``simulate.x0``: ``{"mode": j, "amplitude": a}``, ``{"values": [...]}`` or zero."""
    spec = cfg["simulate"]["x0"]
    if spec is None:
        return np.zeros(g.n)
    if not isinstance(spec, dict):
        raise ConfigError("'simulate.x0' must be an object")
    unknown = set(spec) - {"mode", "amplitude", "values"}
    if unknown:
        raise ConfigError(f"unknown key 'simulate.x0.{sorted(unknown)[0]}'")
    if "values" in spec:
        v = np.asarray(spec["values"], dtype=float)
        if v.shape != (g.n,):
            raise ConfigError(f"'simulate.x0.values' must have {g.n} entries")
        return v
    if "mode" in spec:
        return float(spec.get("amplitude", 1.0)) * g.mode(int(spec["mode"])).values
    return np.zeros(g.n)


def build_disturbance(cfg: dict) -> Disturbance:
    spec = cfg["simulate"]["u"]
    if spec is None:
        return Disturbance.zero()
    if not isinstance(spec, dict):
        raise ConfigError("'simulate.u' must be an object")
    unknown = set(spec) - {"breakpoints", "values", "constant"}
    if unknown:
        raise ConfigError(f"unknown key 'simulate.u.{sorted(unknown)[0]}'")
    try:
        if "constant" in spec:
            return Disturbance.constant(float(spec["constant"]))
        return Disturbance(spec["breakpoints"], spec["values"])
    except (KeyError, ValueError) as e:
        raise ConfigError(f"'simulate.u': {e}") from e
