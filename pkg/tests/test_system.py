import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from rdliss.field import Grid, StateVector
from rdliss.system import (ControlShape, Disturbance, chafee_infante, odd_polynomial,
                           polynomial_spec, validate_conditions, zero_reaction)

from oracles import max_r2_minus_half_r4


@st.composite
def disturbances(draw, max_pieces=6):
    k = draw(st.integers(1, max_pieces))
    gaps = draw(st.lists(st.floats(0.01, 3.0), min_size=k - 1, max_size=k - 1))
    b = np.concatenate(([0.0], np.cumsum(gaps)))
    v = draw(st.lists(st.floats(-5, 5), min_size=k, max_size=k))
    return Disturbance(b, v)


class TestChafeeInfante:
    def test_roots(self):
        g = chafee_infante().g
        np.testing.assert_array_equal(g(np.array([0.0, 1.0, -1.0])), [0.0, 0.0, 0.0])

    def test_certificate(self):
        s = chafee_infante()
        assert (s.p, s.alpha1, s.alpha2, s.kappa, s.lam) == (4, 1.0, 0.5, 0.5, 1.0)
        assert s.q == pytest.approx(4 / 3)
        assert 1 / s.p + 1 / s.q == pytest.approx(1.0, abs=1e-12)

    def test_kappa_is_sharp(self):
        # g(r) r + alpha2 r^4 = r^2 - r^4 / 2 peaks at 1/2
        assert max_r2_minus_half_r4() == pytest.approx(chafee_infante().kappa, abs=1e-9)

    def test_validates(self):
        rep = validate_conditions(chafee_infante(), r_max=10)
        assert rep.passed
        assert rep.slack_upper == pytest.approx(0.0, abs=1e-9)

    @given(st.floats(-100, 100))
    def test_derivative_bound(self, r):
        assert chafee_infante().g_prime(r) <= 1.0


class TestValidation:
    def test_linear_growth_fails(self):
        s = polynomial_spec([0.0, 1.0], p=2, alpha1=1, alpha2=1, kappa=1, lam=1)
        rep = validate_conditions(s)
        assert not rep.passed
        assert rep.slack_upper < 0

    def test_derivative_bound_fails_at_origin(self):
        s = polynomial_spec([0.0, 1.0, 0.0, -1.0], p=4, alpha1=1, alpha2=0.5, kappa=0.5, lam=0.5)
        rep = validate_conditions(s)
        assert not rep.passed
        assert rep.slack_derivative == pytest.approx(-0.5)
        assert rep.worst_r["derivative"] == pytest.approx(0.0, abs=1e-3)

    @pytest.mark.parametrize("r_max,n", [(0.0, 10), (1.0, 1)])
    def test_rejects_bad_sampling(self, r_max, n):
        with pytest.raises(ValueError):
            validate_conditions(chafee_infante(), r_max, n)

    def test_report_dict(self):
        d = validate_conditions(chafee_infante(), 2.0, 101).as_dict()
        assert d["passed"] and d["n_samples"] == 101

    @pytest.mark.parametrize("field,value", [("p", 1.5), ("alpha1", 0.0), ("kappa", -1.0),
                                             ("lam", 0.0)])
    def test_spec_rejects_bad_constants(self, field, value):
        kw = dict(p=4, alpha1=1, alpha2=0.5, kappa=0.5, lam=1)
        kw[field] = value
        with pytest.raises(ValueError):
            polynomial_spec([0, 1, 0, -1], **kw)

    @pytest.mark.parametrize("spec", [chafee_infante(), odd_polynomial([0.3, 2.0, -1.0, -2.0]),
                                      odd_polynomial([0, 0, 0, 0, 0, -1])])
    def test_consequences_of_sandwich(self, spec):
        r = np.linspace(-10, 10, 4001)
        assert validate_conditions(spec).passed
        assert np.all(np.abs(spec.g(r) * r) <= spec.kappa + spec.alpha1 * np.abs(r) ** spec.p
                      + 1e-9)
        # one-sided Lipschitz bound on sampled pairs
        a, b = np.meshgrid(r[::40], r[::40])
        lhs = (spec.g(a) - spec.g(b)) * (a - b)
        assert np.all(lhs <= spec.lam * (a - b) ** 2 + 1e-9)


class TestOddPolynomial:
    def test_matches_chafee_infante(self):
        s, ref = odd_polynomial([0, 1, 0, -1]), chafee_infante()
        assert s.p == ref.p
        assert s.kappa == pytest.approx(ref.kappa * 1.05, rel=1e-3)
        assert s.lam == pytest.approx(ref.lam * 1.05, rel=1e-6)
        assert validate_conditions(s).passed

    def test_quintic_monomial(self):
        s = odd_polynomial([0, 0, 0, 0, 0, -1])
        assert s.p == 6
        assert s.alpha1 == s.alpha2 == 1.0
        assert s.kappa <= 1e-9

    @pytest.mark.parametrize("coeffs", [[0, 0, 0, 1], [0, 1, -1], [], [0, 0]])
    def test_rejects(self, coeffs):
        with pytest.raises(ValueError):
            odd_polynomial(coeffs)


class TestControlShape:
    def test_mode_normalized(self):
        c = ControlShape.mode(Grid(2 * math.pi, 128))
        assert c.norm == pytest.approx(1.0)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            ControlShape(StateVector(Grid(1.0, 4), np.zeros(4)))


class TestDisturbance:
    def test_zero(self):
        u = Disturbance.zero()
        assert u.sup_norm == 0 and u.is_zero
        assert u.eval(3.7) == 0.0

    def test_two_pieces(self):
        u = Disturbance([0, 1], [2, -3])
        assert u.sup_norm == 3
        assert u.eval(0.5) == 2 and u.eval(1.5) == -3

    def test_shift_to_tail(self):
        v = Disturbance([0, 1], [2, -3]).shift(1)
        assert v == Disturbance.constant(-3)
        assert v.sup_norm == 3

    def test_right_continuous(self):
        u = Disturbance([0, 1, 2], [1, 2, 3])
        assert u.eval(1.0) == 2 and u.eval(np.nextafter(1.0, 0)) == 1

    @pytest.mark.parametrize("b,v", [([0.5], [1]), ([0, 0], [1, 2]), ([0, 1], [1]),
                                     ([0], [np.inf]), ([], [])])
    def test_rejects(self, b, v):
        with pytest.raises(ValueError):
            Disturbance(b, v)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            Disturbance.zero().eval(-1.0)
        with pytest.raises(ValueError):
            Disturbance.zero().shift(-1.0)

    @given(disturbances(), st.floats(0, 20))
    def test_shift_does_not_grow(self, u, tau):
        assert u.shift(tau).sup_norm <= u.sup_norm

    @given(disturbances(), st.floats(0, 10), st.floats(0, 10))
    def test_shift_is_translation(self, u, tau, t):
        # away from breakpoints, where rounding of b - tau could flip the side
        assume(np.min(np.abs(u.breakpoints - (t + tau))) > 1e-9)
        assert u.shift(tau).eval(t) == u.eval(t + tau)

    @given(disturbances())
    def test_sup_norm_is_max_abs(self, u):
        assert u.sup_norm == np.max(np.abs(u.values))

    @given(disturbances())
    def test_dict_round_trip(self, u):
        assert Disturbance.from_dict(u.to_dict()) == u

    def test_sample_grid_left_endpoints(self):
        u = Disturbance([0, 0.25], [1, -1])
        np.testing.assert_array_equal(u.sample_grid(0.0, 0.1, 5), [1, 1, 1, -1, -1])
        np.testing.assert_array_equal(u.sample_grid(0.2, 0.05, 3), [1, -1, -1])

    def test_zero_reaction_is_test_hook(self):
        s = zero_reaction()
        assert s.test_only
        assert not np.any(s.g(np.linspace(-3, 3, 7)))
