import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from rdliss.cli import Pipeline
from rdliss.config import build_stepper, parse_config

TWO_PI = 2.0 * math.pi


def make_config(L=TWO_PI, n=256, builtin="chafee_infante", **sections):
    raw = {"grid": {"L": L, "n": n}, "nonlinearity": {"builtin": builtin},
           "control": {"mode": 1}, "stepper": {"dt": 1e-3}}
    raw.update(sections)
    return parse_config(raw)


def make_stepper(L=TWO_PI, n=256, builtin="chafee_infante", dt=1e-3):
    cfg = make_config(L, n, builtin)
    cfg["stepper"]["dt"] = dt
    return build_stepper(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ci_stepper():
    return make_stepper()


@pytest.fixture(scope="session")
def ci(tmp_path_factory):
    """The default Chafee-Infante pipeline on (0, 2 pi), built once."""
    cfg = make_config()
    p = Pipeline(cfg, tmp_path_factory.mktemp("ci"))
    t0 = time.perf_counter()
    cloud, beta0 = p.attractor()
    build_s = time.perf_counter() - t0
    o, data = p.oracle(cloud, beta0)
    return SimpleNamespace(cfg=cfg, pipeline=p, st=p.st, cloud=cloud, beta0=beta0,
                           oracle=o, data=data, build_s=build_s)


@pytest.fixture(scope="session")
def short(tmp_path_factory):
    """Chafee-Infante on (0, 2), where the attractor is the origin."""
    cfg = make_config(L=2.0)
    p = Pipeline(cfg, tmp_path_factory.mktemp("short"))
    t0 = time.perf_counter()
    cloud, beta0 = p.attractor()
    build_s = time.perf_counter() - t0
    o, data = p.oracle(cloud, beta0)
    return SimpleNamespace(cfg=cfg, pipeline=p, st=p.st, cloud=cloud, beta0=beta0,
                           oracle=o, data=data, build_s=build_s)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
