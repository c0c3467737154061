import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdliss.comparison import (DecaySolution, KLBound, MonotoneCurve, build_beta_gamma,
                               compose, invert, make_curve, solve_decay)

from oracles import quadratic_decay, two_slope_decay


@st.composite
def curves(draw, max_knots=8):
    k = draw(st.integers(1, max_knots))
    dr = draw(st.lists(st.floats(1e-3, 5.0), min_size=k, max_size=k))
    df = draw(st.lists(st.floats(1e-3, 5.0), min_size=k, max_size=k))
    return MonotoneCurve(np.concatenate(([0.0], np.cumsum(dr))),
                         np.concatenate(([0.0], np.cumsum(df))))


def is_class_k(c):
    return c.r[0] == 0 and c.f[0] == 0 and np.all(np.diff(c.r) > 0) and np.all(np.diff(c.f) > 0)


SQUARE = MonotoneCurve(np.linspace(0, 4, 40001), np.linspace(0, 4, 40001) ** 2)


class TestMonotoneCurve:
    def test_interpolates(self):
        assert make_curve([(0, 0), (1, 2)])(0.5) == 1.0

    def test_identity(self):
        x = np.linspace(0, 7, 15)
        np.testing.assert_array_equal(MonotoneCurve.identity()(x), x)

    @pytest.mark.parametrize("knots", [
        [(0, 0), (1, 1), (0.5, 2)],
        [(0, 0), (1, 1), (2, 1)],
        [(0.1, 0), (1, 1)],
        [(0, 0.1), (1, 1)],
        [(0, 0)],
        [(0, 0), (np.inf, 1)],
    ])
    def test_rejects(self, knots):
        with pytest.raises(ValueError):
            make_curve(knots)

    def test_extends_with_final_slope(self):
        c = make_curve([(0, 0), (1, 1), (2, 3)])
        y, over = c.evaluate(np.array([1.5, 4.0]))
        np.testing.assert_allclose(y, [2.0, 7.0])
        np.testing.assert_array_equal(over, [False, True])

    def test_negative_argument(self):
        with pytest.raises(ValueError):
            MonotoneCurve.identity()(-0.1)

    @given(curves())
    def test_double_inverse(self, c):
        cc = c.invert().invert()
        np.testing.assert_allclose(cc(c.r), c.f, rtol=1e-12, atol=1e-12)

    @given(curves(), st.floats(0.1, 10.0))
    def test_scalings(self, c, a):
        x = np.linspace(0, 2 * c.r[-1], 17)
        np.testing.assert_allclose(c.scale(a)(x), a * c(x), rtol=1e-12)
        # r / a rounds, and the extrapolated tail amplifies it slightly
        np.testing.assert_allclose(c.rescale_argument(a)(x), c(a * x), rtol=1e-10, atol=1e-12)

    @given(curves(), curves())
    def test_sum(self, f, g):
        x = np.linspace(0, 3 * max(f.r[-1], g.r[-1]), 23)
        s = f + g
        assert is_class_k(s)
        np.testing.assert_allclose(s(x), f(x) + g(x), rtol=1e-10, atol=1e-10)

    def test_round_trip(self, tmp_path):
        c = make_curve([(0, 0), (1, 2), (3, 5)])
        assert MonotoneCurve.from_dict(c.to_dict()).to_dict() == c.to_dict()
        c.write_csv(tmp_path / "c.csv")
        np.testing.assert_allclose(np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1),
                                   c.knots)


class TestInvertCompose:
    def test_invert_linear(self):
        assert invert(MonotoneCurve.linear(2.0))(3.0) == 1.5

    def test_invert_identity(self):
        x = np.linspace(0, 5, 11)
        np.testing.assert_array_equal(invert(MonotoneCurve.identity())(x), x)

    def test_invert_swaps_knots(self):
        assert invert(make_curve([(0, 0), (1, 2), (3, 5)]))(5.0) == 3.0

    def test_compose_identity(self):
        g = make_curve([(0, 0), (1, 3), (2, 4)])
        x = np.linspace(0, 5, 21)
        np.testing.assert_allclose(compose(MonotoneCurve.identity(), g)(x), g(x))

    def test_compose_linear(self):
        h = compose(MonotoneCurve.linear(2.0), MonotoneCurve.linear(3.0))
        np.testing.assert_allclose(h(np.array([0.0, 1.0, 10.0])), [0.0, 6.0, 60.0])

    @given(curves())
    def test_inverse_law(self, f):
        x = np.linspace(0, 2 * f.r[-1], 31)
        h = compose(invert(f), f)
        assert is_class_k(h)
        np.testing.assert_allclose(h(x), x, rtol=1e-10, atol=1e-10)

    @given(curves(), curves())
    def test_compose_pointwise(self, f, g):
        x = np.linspace(0, 2 * g.r[-1], 41)
        h = compose(f, g)
        assert is_class_k(h)
        np.testing.assert_allclose(h(x), f(g(x)), rtol=1e-9, atol=1e-9)


class TestSolveDecay:
    @pytest.mark.parametrize("v0,t", [(1.0, 0.5), (3.0, 2.0), (0.2, 10.0), (1e-6, 1.0)])
    def test_linear(self, v0, t):
        assert solve_decay(MonotoneCurve.identity(), v0, t) == pytest.approx(
            v0 * math.exp(-t), rel=1e-8)

    @pytest.mark.parametrize("v0,t", [(1.0, 1.0), (2.0, 3.0), (0.5, 10.0)])
    def test_quadratic(self, v0, t):
        assert solve_decay(SQUARE, v0, t) == pytest.approx(quadratic_decay(v0, t), rel=1e-6)

    @pytest.mark.parametrize("v0,t", [(3.0, 0.2), (3.0, 0.8), (3.0, 4.0), (0.7, 1.0)])
    def test_two_slopes(self, v0, t):
        A = make_curve([(0, 0), (1, 1), (2, 3)])
        assert solve_decay(A, v0, t) == pytest.approx(two_slope_decay(v0, t), rel=1e-8)

    def test_zero_is_equilibrium(self):
        d = DecaySolution(MonotoneCurve.identity())
        np.testing.assert_array_equal(d(0.0, np.array([0.0, 1.0, 100.0])), 0.0)

    def test_initial_value(self):
        assert solve_decay(SQUARE, 1.7, 0.0) == 1.7

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            solve_decay(MonotoneCurve.identity(), -1.0, 1.0)
        with pytest.raises(ValueError):
            solve_decay(MonotoneCurve.identity(), 1.0, -1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
    def test_flow_property(self, v0, s, t):
        d = DecaySolution(make_curve([(0, 0), (0.5, 0.2), (1, 1), (2, 3)]))
        direct = d(v0, s + t)
        assert d(d(v0, s), t) == pytest.approx(direct, rel=1e-8, abs=1e-300)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.01, 3.0), st.floats(0.01, 3.0))
    def test_monotone(self, a, b):
        d = DecaySolution(SQUARE)
        lo, hi = sorted((a, b))
        times = np.linspace(0, 5, 11)
        va, vb = d(lo, times), d(hi, times)
        assert np.all(va <= vb + 1e-15)
        assert np.all(np.diff(vb) <= 0)

    def test_shapes(self):
        d = DecaySolution(MonotoneCurve.identity())
        assert isinstance(d(1.0, 1.0), float)
        assert d(np.array([1.0, 2.0]), 1.0).shape == (2,)
        assert d(1.0, np.array([2.0, 1.0, 0.0])).shape == (3,)
        np.testing.assert_allclose(d(1.0, np.array([2.0, 0.0])), [math.exp(-2), 1.0], rtol=1e-8)
        assert d(np.ones(2), np.ones(3)).shape == (2, 3)


class TestBetaGamma:
    def test_identity_gain(self):
        I = MonotoneCurve.identity()
        _, gamma = build_beta_gamma(I, I, I, I)
        x = np.linspace(0, 4, 9)
        np.testing.assert_allclose(gamma(x), x)

    @pytest.mark.parametrize("r,t", [(1.0, 0.0), (0.5, 1.0), (2.0, 3.0)])
    def test_linear_beta(self, r, t):
        I = MonotoneCurve.identity()
        beta, _ = build_beta_gamma(I, I, I, I)
        assert beta(r, t) == pytest.approx(r * math.exp(-t), rel=1e-8)

    @given(curves(), curves())
    def test_beta_dominates_at_zero(self, lo, extra):
        hi = lo + extra  # psi_lo <= psi_hi
        beta, _ = build_beta_gamma(lo, hi, MonotoneCurve.identity(), MonotoneCurve.identity())
        r = np.linspace(0, 2 * hi.r[-1], 13)
        assert np.all(np.asarray(beta(r, 0.0)) >= r * (1 - 1e-12))

    def test_class_kl(self):
        lo = make_curve([(0, 0), (1, 0.5), (2, 2)])
        hi = make_curve([(0, 0), (1, 2), (2, 5)])
        beta, gamma = build_beta_gamma(lo, hi, MonotoneCurve.linear(3.0), compose(lo, hi.invert()))
        r = np.linspace(0.1, 2.0, 8)
        times = np.linspace(0, 10, 21)
        B = beta.along(r, times)
        assert np.all(np.diff(B, axis=0) > 0)
        assert np.all(np.diff(B, axis=1) < 0)
        late = beta.along(r, np.array([0.0, 200.0]))[:, -1]
        assert late.max() < 1e-3 * B[:, 0].min()
        assert isinstance(beta, KLBound)
        assert is_class_k(gamma)

    def test_overflow_flag(self):
        lo = make_curve([(0, 0), (1, 1)])
        beta, _ = build_beta_gamma(lo, MonotoneCurve.linear(5.0), lo, lo)
        _, over = beta.evaluate(np.array([0.1, 1.0]), 0.0)
        np.testing.assert_array_equal(over, [False, True])
