import json
import math

import numpy as np
import pytest

from rdliss.certify import (Certificate, EmptyCertificateError, FalsificationReport,
                            bisect_violation, build_certificate, certify_liss,
                            check_invariance_Mu, default_tolerance, falsify, membership_Mu,
                            mu_threshold, random_disturbance, replay, select_radii)
from rdliss.comparison import MonotoneCurve
from rdliss.system import Disturbance

IDENTITY = MonotoneCurve.identity()


def linear_beta(c=1.0):
    return lambda r, t: c * np.asarray(r) * np.exp(-np.asarray(t))


class TestSelectRadii:
    def test_identity(self):
        r0x, r0u = select_radii(linear_beta(), IDENTITY, 1.0)
        assert r0x == pytest.approx(0.99, rel=1e-9)
        assert r0u == pytest.approx(0.99, rel=1e-9)

    def test_binding_beta(self):
        r0x, _ = select_radii(linear_beta(10.0), IDENTITY, 1.0)
        assert r0x == pytest.approx(0.099, rel=1e-9)

    def test_binding_gamma(self):
        _, r0u = select_radii(linear_beta(), MonotoneCurve.linear(4.0), 2.0)
        assert r0u == pytest.approx(0.99 * 0.5, rel=1e-12)

    @pytest.mark.parametrize("c", [0.5, 3.0, 40.0])
    def test_monotone_in_r0(self, c):
        beta = lambda r, t: c * np.asarray(r) ** 2 + np.asarray(r)  # noqa: E731
        radii = [select_radii(beta, IDENTITY, r0)[0] for r0 in (0.25, 0.5, 1.0, 2.0)]
        assert np.all(np.diff(radii) >= 0)

    @pytest.mark.parametrize("c", [1.0, 10.0, 1e3])
    def test_strict_inequalities(self, c):
        beta = linear_beta(c)
        r0x, r0u = select_radii(beta, MonotoneCurve.linear(c), 1.0)
        cert = Certificate(beta, MonotoneCurve.linear(c), r0x, r0u, 1.0)
        assert cert.check()

    def test_empty(self):
        with pytest.raises(EmptyCertificateError):
            select_radii(lambda r, t: 1.0 + np.asarray(r), IDENTITY, 1.0)

    def test_rejects_nonpositive_r0(self):
        with pytest.raises(ValueError):
            select_radii(linear_beta(), IDENTITY, 0.0)


class TestDisturbanceSampler:
    def test_bounds(self, rng):
        for _ in range(50):
            u = random_disturbance(rng, 0.3, 20.0, 1e-3)
            assert 1 <= len(u.values) <= 8
            assert u.sup_norm <= 0.3
            steps = u.breakpoints / 1e-3
            np.testing.assert_allclose(steps, np.round(steps), atol=1e-9)


@pytest.fixture(scope="module")
def origin(short):
    """Certificates on (0, 2), where the attractor is {0}."""
    return short


def tight(c_beta, c_gamma):
    return Certificate(linear_beta(c_beta), MonotoneCurve.linear(c_gamma), 0.5, 0.2, 1.0)


class TestFalsify:
    def test_sound_certificate_passes(self, origin):
        rep = falsify(tight(1.0, 5.0), origin.st, origin.cloud, N=10, horizon=3.0, seed=1)
        assert rep.passed and not rep.violations
        assert rep.min_margin >= -rep.tolerance
        assert len(rep.margins) == 10

    def test_undisturbed_reduction(self, origin):
        # u = 0: the estimate is |S0(t) x0| <= beta(|x0|, t)
        cert = Certificate(linear_beta(1.0), IDENTITY, 0.5, 1e-300, 1.0)
        rep = falsify(cert, origin.st, origin.cloud, N=6, horizon=3.0, seed=2)
        assert all(m["unorm"] <= 1e-300 for m in rep.margins)
        assert rep.passed

    def test_bad_beta_is_caught(self, origin):
        rep = falsify(tight(0.01, 1e-9), origin.st, origin.cloud, N=6, horizon=2.0, seed=3,
                      tolerance=0.0)
        assert rep.violations and not rep.passed
        v = rep.violations[0]
        assert v["gap"] > 0 and v["margin"] == -v["gap"]

    def test_replay(self, origin):
        cert = tight(1.0, 1e-6)
        rep = falsify(cert, origin.st, origin.cloud, N=6, horizon=2.0, seed=4, tolerance=0.0)
        assert rep.violations
        for v in rep.violations:
            again = replay(cert, origin.st, origin.cloud, json.loads(json.dumps(v)), 2.0)
            assert again == pytest.approx(v["margin"], abs=1e-12)

    def test_bisect_blames_gamma(self, origin):
        cert = tight(1.0, 1e-6)
        rep = falsify(cert, origin.st, origin.cloud, N=6, horizon=2.0, seed=4, tolerance=0.0)
        b = bisect_violation(cert, origin.st, origin.cloud, rep.violations[0], 2.0, 0.0)
        assert b["passes_at_zero"] and 0 <= b["scale"] < 1

    def test_bisect_blames_beta(self, origin):
        cert = tight(0.01, 1e-9)
        rep = falsify(cert, origin.st, origin.cloud, N=6, horizon=2.0, seed=3, tolerance=0.0)
        b = bisect_violation(cert, origin.st, origin.cloud, rep.violations[0], 2.0, 0.0)
        assert not b["passes_at_zero"]

    def test_thread_count_invariance(self, origin):
        kw = dict(N=14, horizon=1.0, seed=5, batch=4)
        a = falsify(tight(1.0, 5.0), origin.st, origin.cloud, threads=1, **kw)
        b = falsify(tight(1.0, 5.0), origin.st, origin.cloud, threads=3, **kw)
        assert a.digest() == b.digest()

    def test_seed_changes_samples(self, origin):
        kw = dict(N=4, horizon=0.5)
        a = falsify(tight(1.0, 5.0), origin.st, origin.cloud, seed=0, **kw)
        b = falsify(tight(1.0, 5.0), origin.st, origin.cloud, seed=1, **kw)
        assert a.digest() != b.digest()

    def test_default_tolerance(self, origin):
        assert default_tolerance(origin.cloud) == 2 * origin.cloud.resolution + 1e-3

    def test_report_csv(self, origin, tmp_path):
        rep = falsify(tight(1.0, 5.0), origin.st, origin.cloud, N=3, horizon=0.5)
        rep.write_csv(tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "sample,dist0,unorm,margin,t_min" and len(lines) == 4
        d = rep.to_dict()
        assert d["passed"] and "tolerance_rationale" in d


class TestMu:
    def test_on_cloud_is_member(self, ci):
        x = ci.cloud.points[0]
        for u in (Disturbance.zero(), Disturbance.constant(0.05)):
            assert membership_Mu(x, u, ci.data, ci.oracle)

    def test_zero_threshold(self, ci):
        assert mu_threshold(ci.data, 0.0) == 0.0

    def test_threshold_monotone(self, ci):
        thr = [mu_threshold(ci.data, a) for a in np.linspace(0, 0.2, 11)]
        assert np.all(np.diff(thr) > 0)

    def test_invariance_short_run(self, ci):
        rep = check_invariance_Mu(ci.st, ci.cloud, ci.data, ci.oracle,
                                  Disturbance.constant(0.05), samples=4, horizon=3.0, seed=2)
        assert rep["passed"] and rep["samples"] == 4
        assert rep["contained"] and rep["left_ball"] == 0

    def test_invariance_thread_count(self, ci):
        kw = dict(samples=3, horizon=2.0, seed=6)
        u = Disturbance.constant(0.05)
        a = check_invariance_Mu(ci.st, ci.cloud, ci.data, ci.oracle, u, threads=1, **kw)
        b = check_invariance_Mu(ci.st, ci.cloud, ci.data, ci.oracle, u, threads=3, **kw)
        assert a == b


@pytest.fixture(scope="module")
def built(ci):
    return build_certificate(ci.oracle, ci.data)


class TestCertificate:
    def test_radii(self, built):
        cert, warnings = built
        assert cert.check() and not warnings
        assert 0 < cert.r0x < cert.r0 and cert.r0u > 0
        assert cert.beta(cert.r0x, 0.0) < cert.r0
        assert cert.gamma(cert.r0u) < cert.r0

    def test_beta_dominates_identity(self, built):
        cert, _ = built
        r = np.linspace(0, cert.r0x, 9)
        assert np.all(np.asarray(cert.beta(r, 0.0)) >= r * (1 - 1e-12))

    def test_override_is_clamped(self, ci, built):
        cert, _ = built
        clamped, warnings = build_certificate(ci.oracle, ci.data, r0u_override=10 * cert.r0u)
        assert warnings and clamped.r0u == cert.r0u
        lower, warnings = build_certificate(ci.oracle, ci.data, r0u_override=cert.r0u / 2)
        assert not warnings and lower.r0u == cert.r0u / 2

    def test_serializable(self, built):
        d = built[0].to_dict()
        json.dumps(d)
        assert d["valid"] and set(d["beta"]) == {"psi_lo", "psi_hi", "decay_rate"}

    def test_certify_small_run(self, ci):
        cert, rep = certify_liss(ci.st, ci.cloud, ci.oracle, ci.data, N=8, horizon=2.0,
                                 seed=9)
        assert isinstance(rep, FalsificationReport)
        assert rep.passed and rep.extra["certificate_valid"]
        assert all(m["dist0"] <= cert.r0x + ci.cloud.resolution for m in rep.margins)
        assert all(m["unorm"] <= cert.r0u for m in rep.margins)
        assert math.isfinite(rep.min_margin)
