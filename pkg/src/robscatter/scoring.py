"""Binary proper scoring rules from the Beta family.

Values follow the Beta-integral convention

    S(t, 1) = -int_t^1 c**(alpha - 1) * (1 - c)**beta dc
    S(t, 0) = -int_0^t c**alpha * (1 - c)**(beta - 1) dc

so that ``dS(t,1)/dt = t**(alpha-1) (1-t)**beta`` and
``dS(t,0)/dt = -t**alpha (1-t)**(beta-1)``.

Named kinds and their factor relative to the textbook closed forms:

=========  ===========  ==========================================  ======
kind       (alpha,beta)  S(t,1) here                                factor
=========  ===========  ==========================================  ======
log        (0, 0)       log t                                       1
quadratic  (1, 1)       -(1 - t)**2 / 2                             1/2
boosting   (-1/2, -1/2) -2 sqrt((1 - t) / t)                        2
=========  ===========  ==========================================  ======

So ``savage_g(quadratic, 1/2) == -1/8`` (textbook ``-t(1-t)`` gives -1/4) and
``savage_g(boosting, 1/2) == -2`` (textbook ``-2 sqrt(t(1-t))`` gives -1).
A positive affine change of a score leaves the estimator's argmin unchanged.

The zero-one score is value-only and handled by :func:`score_value_zero_one`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import expit, hyp2f1

T_CLAMP = 1e-12

NAMED = {
    "log": (0.0, 0.0),
    "js": (0.0, 0.0),
    "quadratic": (1.0, 1.0),
    "ls": (1.0, 1.0),
    "boosting": (-0.5, -0.5),
}


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoringRule:
    """A Beta-family score, optionally transformed by ``scale * S + shift``."""

    alpha: float = 0.0
    beta: float = 0.0
    kind: str = "beta"
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind == "zero_one":
            return
        if not (self.alpha > -1 and self.beta > -1):
            raise ScoringError(f"Beta score needs alpha, beta > -1, got ({self.alpha}, {self.beta})")
        if not self.scale > 0:
            raise ScoringError("affine scale must be positive")

    @classmethod
    def named(cls, name: str) -> "ScoringRule":
        name = name.lower()
        if name in ("zero_one", "tv"):
            return cls(kind="zero_one")
        if name not in NAMED:
            raise ScoringError(f"unknown scoring rule {name!r}")
        a, b = NAMED[name]
        return cls(a, b, kind=name)

    @classmethod
    def parse(cls, text: str) -> "ScoringRule":
        """``"js"``, ``"log"``, ``"beta(1,0.5)"`` or ``"1,0.5"``."""
        s = text.strip().lower()
        if s.startswith("beta(") and s.endswith(")"):
            s = s[5:-1]
        if "," in s:
            a, b = (float(v) for v in s.split(","))
            return cls(a, b)
        return cls.named(s)

    @property
    def smooth(self) -> bool:
        return self.kind != "zero_one"

    @property
    def label(self) -> str:
        if self.kind == "zero_one":
            return "zero_one"
        return f"beta({self.alpha:g},{self.beta:g})"

    def condition1_holds(self) -> bool:
        return self.smooth and abs(self.alpha - self.beta) < 1

    def affine(self, scale: float, shift: float) -> "ScoringRule":
        return ScoringRule(self.alpha, self.beta, self.kind, self.scale * scale, self.shift * scale + shift)


class ScoreEval(NamedTuple):
    s1: np.ndarray
    s0: np.ndarray
    ds1: np.ndarray
    ds0: np.ndarray


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)) or np.any(~(t < 1)):
        raise ScoringError("score needs t strictly inside (0, 1)")
    return t


def _closed_form(a, b, t):
    if (a, b) == (0.0, 0.0):
        return np.log(t), np.log1p(-t)
    if (a, b) == (1.0, 1.0):
        return -0.5 * (1 - t) ** 2, -0.5 * t**2
    if (a, b) == (-0.5, -0.5):
        return -2.0 * np.sqrt((1 - t) / t), -2.0 * np.sqrt(t / (1 - t))
    return None


def _quad(f, lo, hi, wvar):
    # algebraic weight (c - lo)**wvar[0] * (hi - c)**wvar[1] absorbs the endpoint singularity
    val, err = integrate.quad(f, lo, hi, weight="alg", wvar=wvar, epsabs=1e-11, epsrel=1e-11, limit=200)
    if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise ScoringError(f"quadrature on [{lo}, {hi}] did not converge (error estimate {err:.2e})")
    return val


def _integral_values(a, b, t):
    t = np.atleast_1d(t)
    s1 = np.empty_like(t)
    s0 = np.empty_like(t)
    for k, tk in enumerate(t):
        s1[k] = -_quad(lambda c: c ** (a - 1), tk, 1.0, (0.0, b))
        s0[k] = -_quad(lambda c: (1 - c) ** (b - 1), 0.0, tk, (a, 0.0))
    return s1, s0


def score_derivatives(rule: ScoringRule, t) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``(dS(t,1)/dt, dS(t,0)/dt)``; no domain check (hot path)."""
    a, b = rule.alpha, rule.beta
    ds1 = t ** (a - 1) * (1 - t) ** b
    ds0 = -(t**a) * (1 - t) ** (b - 1)
    return rule.scale * ds1, rule.scale * ds0


def logit_gradients(rule: ScoringRule, logits) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``S(sigmoid(z),1)`` and ``S(sigmoid(z),0)`` w.r.t. the logit ``z``.

    ``dS(t,1)/dz = t**alpha (1-t)**(beta+1)`` and
    ``dS(t,0)/dz = -t**(alpha+1) (1-t)**beta``; both stay finite when the
    sigmoid saturates.
    """
    z = np.asarray(logits, dtype=float)
    t = np.clip(sigmoid(z), T_CLAMP, 1 - T_CLAMP)
    u = np.clip(sigmoid(-z), T_CLAMP, 1 - T_CLAMP)
    a, b = rule.alpha, rule.beta
    g1 = t**a * u ** (b + 1)
    g0 = -(t ** (a + 1)) * u**b
    return rule.scale * g1, rule.scale * g0


def score(rule: ScoringRule, t) -> ScoreEval:
    """Score values and t-derivatives for ``t`` in ``(0, 1)`` (scalar or array)."""
    if not rule.smooth:
        raise ScoringError("zero-one score is value-only; use score_value_zero_one")
    t = _check_t(t)
    scalar = t.ndim == 0
    a, b = rule.alpha, rule.beta
    vals = _closed_form(a, b, t)
    if vals is None:
        vals = _integral_values(a, b, t)
        if scalar:
            vals = (vals[0][0], vals[1][0])
    s1, s0 = vals
    ds1, ds0 = score_derivatives(rule, t)
    k, c = rule.scale, rule.shift
    return ScoreEval(k * np.asarray(s1) + c, k * np.asarray(s0) + c, ds1, ds0)


def _hypergeometric_values(a, b, t):
    # int_0^x c^a (1-c)^(b-1) dc = x^(a+1)/(a+1) 2F1(a+1, 1-b; a+2; x), and
    # S(t,1) is the mirror image of the same integral with (a, b) swapped.
    u = 1 - t
    s1 = -(u ** (b + 1)) / (b + 1) * hyp2f1(b + 1, 1 - a, b + 2, u)
    s0 = -(t ** (a + 1)) / (a + 1) * hyp2f1(a + 1, 1 - b, a + 2, t)
    return s1, s0


def score_values(rule: ScoringRule, t, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(S(t,1), S(t,0))`` with ``t`` clamped to ``[1e-12, 1 - 1e-12]``.

    General ``(alpha, beta)`` use the Gauss hypergeometric closed form of the
    defining integrals instead of per-point quadrature.
    """
    t = np.asarray(t, dtype=float)
    if not rule.smooth:
        return score_value_zero_one(t)
    if clamp:
        t = np.clip(t, T_CLAMP, 1 - T_CLAMP)
    else:
        t = _check_t(t)
    vals = _closed_form(rule.alpha, rule.beta, t)
    if vals is None:
        vals = _hypergeometric_values(rule.alpha, rule.beta, t)
    return rule.scale * vals[0] + rule.shift, rule.scale * vals[1] + rule.shift


def score_value_zero_one(t) -> tuple[np.ndarray, np.ndarray]:
    """Zero-one score; the tie ``t == 1/2`` counts as event 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ScoringError("zero-one score needs t in [0, 1]")
    hit = t >= 0.5
    return 2.0 * hit, 2.0 * ~hit


def savage_g(rule: ScoringRule, t):
    """Savage convex function ``G(t) = t S(t,1) + (1-t) S(t,0)``."""
    ev = score(rule, t)
    t = np.asarray(t, dtype=float)
    return t * ev.s1 + (1 - t) * ev.s0


def condition1_margin(rule: ScoringRule) -> tuple[float, bool]:
    """``(2 G''(1/2) - G'''(1/2), |alpha - beta| < 1)``.

    Uses ``G''(t) = t**(alpha-1) (1-t)**(beta-1)``, whence
    ``G'''(1/2) = 2**(3-alpha-beta) (alpha - beta)``.
    """
    if not rule.smooth:
        raise ScoringError("condition 1 is defined for smooth scores only")
    a, b = rule.alpha, rule.beta
    g2 = 2.0 ** (2 - a - b)
    g3 = 2.0 ** (3 - a - b) * (a - b)
    return rule.scale * (2 * g2 - g3), abs(a - b) < 1


def sigmoid(z):
    return expit(np.asarray(z, dtype=float))
