import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robscatter.scoring import (
    ScoringError,
    ScoringRule,
    condition1_margin,
    logit_gradients,
    savage_g,
    score,
    score_value_zero_one,
    score_values,
    sigmoid,
)

SMOOTH = [
    ScoringRule.named("log"),
    ScoringRule.named("quadratic"),
    ScoringRule.named("boosting"),
    ScoringRule(0.5, 1.0),
    ScoringRule(1.0, 0.5),
    ScoringRule(2.0, 2.0),
    ScoringRule(4.0, 4.0),
]


def simpson(f, a, b, m=1_000_000):
    x = np.linspace(a, b, m + 1)
    y = f(x)
    h = (b - a) / m
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


class TestScore:
    def test_log_half(self):
        ev = score(ScoringRule.named("log"), 0.5)
        assert float(ev.s1) == pytest.approx(math.log(0.5))
        assert float(ev.s0) == pytest.approx(math.log(0.5))
        assert float(ev.ds1) == pytest.approx(2.0)
        assert float(ev.ds0) == pytest.approx(-2.0)

    def test_quadratic_derivatives(self):
        ev = score(ScoringRule(1.0, 1.0), 0.3)
        assert float(ev.ds1) == pytest.approx(0.7)
        assert float(ev.ds0) == pytest.approx(-0.3)

    def test_quadrature_against_simpson(self):
        # substitute c = s^2 to remove the endpoint singularity of c^-0.5
        rule = ScoringRule(0.5, 1.0)
        oracle = -simpson(lambda s: 2 * s * s ** (-1.0) * (1 - s**2), math.sqrt(0.4), 1.0)
        assert float(score(rule, 0.4).s1) == pytest.approx(oracle, abs=1e-8)

    def test_domain(self):
        with pytest.raises(ScoringError):
            score(ScoringRule(), 0.0)
        with pytest.raises(ScoringError):
            score(ScoringRule(), np.array([0.5, 1.2]))

    def test_bad_parameters(self):
        with pytest.raises(ScoringError):
            ScoringRule(-1.0, 0.0)

    @pytest.mark.parametrize("rule", SMOOTH, ids=lambda r: r.label)
    def test_vectorized_values_match_quadrature(self, rule):
        t = np.linspace(0.03, 0.97, 17)
        s1, s0 = score_values(rule, t)
        ev = score(ScoringRule(rule.alpha, rule.beta), t)
        np.testing.assert_allclose(s1, ev.s1, atol=1e-9)
        np.testing.assert_allclose(s0, ev.s0, atol=1e-9)

    def test_parse(self):
        assert ScoringRule.parse("js") == ScoringRule.named("js")
        r = ScoringRule.parse("beta(1,0.5)")
        assert (r.alpha, r.beta) == (1.0, 0.5)
        assert ScoringRule.parse("2, 2").alpha == 2.0


class TestProperties:
    @pytest.mark.parametrize("rule", SMOOTH, ids=lambda r: r.label)
    def test_propriety(self, rule):
        grid = np.round(np.arange(1, 1000) * 1e-3, 3)
        s1, s0 = score_values(rule, grid)
        for p in np.arange(1, 10) / 10:
            k = np.argmax(p * s1 + (1 - p) * s0)
            assert abs(grid[k] - p) <= 1e-3 + 1e-12

    @pytest.mark.parametrize("rule", [r for r in SMOOTH if r.alpha == r.beta], ids=lambda r: r.label)
    def test_symmetric_rules(self, rule):
        t = np.linspace(0.001, 0.999, 999)
        s1, _ = score_values(rule, t)
        _, s0 = score_values(rule, 1 - t)
        np.testing.assert_allclose(s1, s0, atol=1e-9)

    @pytest.mark.parametrize("rule", SMOOTH, ids=lambda r: r.label)
    def test_derivatives_by_finite_differences(self, rule):
        t = np.linspace(0.05, 0.95, 37)
        h = 1e-6
        ev = score(rule, t)
        up, dn = score_values(rule, t + h), score_values(rule, t - h)
        np.testing.assert_allclose((up[0] - dn[0]) / (2 * h), ev.ds1, rtol=1e-5)
        np.testing.assert_allclose((up[1] - dn[1]) / (2 * h), ev.ds0, rtol=1e-5)

    @pytest.mark.parametrize("rule", SMOOTH, ids=lambda r: r.label)
    def test_savage_convexity(self, rule):
        t = np.linspace(0.01, 0.99, 981)
        g = savage_g(rule, t)
        assert np.all(g[2:] - 2 * g[1:-1] + g[:-2] >= -1e-9)

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(-0.9, 5.0),
        st.floats(-0.9, 5.0),
        st.floats(-30.0, 30.0),
    )
    def test_logit_gradient_chain_rule(self, a, b, z):
        rule = ScoringRule(a, b)
        g1, g0 = logit_gradients(rule, np.array([z]))
        t = sigmoid(z)
        if not 1e-8 < t < 1 - 1e-8:
            assert np.isfinite(g1).all() and np.isfinite(g0).all()
            return
        ev = score(rule, t)
        dt = t * (1 - t)
        # the t-space oracle forms 1 - t from a rounded t; allow for that conditioning
        rel = 1e-9 + 4e-16 * (abs(rule.alpha) + abs(rule.beta) + 2) / min(t, 1 - t)
        assert g1[0] == pytest.approx(float(ev.ds1) * dt, rel=rel, abs=1e-300)
        assert g0[0] == pytest.approx(float(ev.ds0) * dt, rel=rel, abs=1e-300)

    def test_affine_transform(self):
        rule = ScoringRule(1.0, 0.5)
        t = np.linspace(0.1, 0.9, 9)
        s1, s0 = score_values(rule, t)
        a1, a0 = score_values(rule.affine(2.0, 7.0), t)
        np.testing.assert_allclose(a1, 2 * s1 + 7)
        np.testing.assert_allclose(a0, 2 * s0 + 7)


class TestSavageAndCondition:
    def test_log_half(self):
        assert float(savage_g(ScoringRule.named("log"), 0.5)) == pytest.approx(-math.log(2))

    def test_quadratic_half(self):
        # integral convention: half of -t(1-t)
        assert float(savage_g(ScoringRule.named("quadratic"), 0.5)) == pytest.approx(-1 / 8)

    def test_boosting_half(self):
        # integral convention is twice -2 sqrt(t(1-t))
        assert float(savage_g(ScoringRule.named("boosting"), 0.5)) == pytest.approx(-2.0)

    def test_log_margin(self):
        margin, ok = condition1_margin(ScoringRule.named("log"))
        assert margin == pytest.approx(8.0)
        assert ok

    def test_flags(self):
        assert condition1_margin(ScoringRule(1.0, 0.5))[1]
        assert not condition1_margin(ScoringRule(2.0, 0.2))[1]
        assert not ScoringRule(2.0, 0.2).condition1_holds()

    @pytest.mark.parametrize("a,b", [(0.0, 0.0), (1.0, 0.5), (0.5, 1.0), (2.0, 1.5)])
    def test_margin_against_finite_differences(self, a, b):
        rule = ScoringRule(a, b)
        h = 1e-3
        t = 0.5 + h * np.arange(-2, 3)
        g = savage_g(rule, t)
        g2 = (g[3] - 2 * g[2] + g[1]) / h**2
        g3 = (g[4] - 2 * g[3] + 2 * g[1] - g[0]) / (2 * h**3)
        margin, _ = condition1_margin(rule)
        assert margin == pytest.approx(2 * g2 - g3, rel=1e-4, abs=1e-4)


class TestZeroOne:
    @pytest.mark.parametrize("t,expected", [(0.7, (2, 0)), (0.5, (2, 0)), (0.2, (0, 2))])
    def test_values(self, t, expected):
        s1, s0 = score_value_zero_one(t)
        assert (float(s1), float(s0)) == expected

    def test_not_smooth(self):
        rule = ScoringRule.named("zero_one")
        assert not rule.smooth
        with pytest.raises(ScoringError):
            score(rule, 0.3)
