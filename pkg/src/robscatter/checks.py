"""Numerical property checks: landscape reproductions, moment identities and
finite-difference gradient suites."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import Rng, sample_gaussian
from .gan import calibrate_elliptical, target_clipped_moment
from .nets import DiscriminatorPreset, Generator, MlpNet, init_net, make_generator
from .scoring import ScoringRule, logit_gradients, score_values, sigmoid

LOG4 = math.log(4.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: str
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.6g} ({self.bound})"


# --- flat landscape for the sigmoid-hidden class -------------------------------


def flat_landscape(
    sigma=((2.0, 0.0), (0.0, 1.0)),
    gamma=None,
    n: int = 200_000,
    steps: int = 200,
    hidden: int = 4,
    lr: float = 1.0,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Maximize the log-score objective between N(0, sigma) and N(0, gamma) over
    ``sigmoid(sum_j w_j sigmoid(u_j^T x))`` by gradient ascent on fixed
    Monte-Carlo samples.

    Returns the best objective seen (including the start) and the trajectory.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    gamma = np.eye(p) if gamma is None else np.asarray(gamma, dtype=float)
    rng = Rng(seed)
    real = sample_gaussian(rng.substream("real"), 0.0, sigma, n)
    fake = sample_gaussian(rng.substream("fake"), 0.0, gamma, n)
    net = init_net(rng.substream("net"), DiscriminatorPreset("T1", p, hidden=hidden), sigma1=1.0)
    rule = ScoringRule()
    x = np.vstack([real, fake])
    traj = np.empty(steps + 1)
    for k in range(steps + 1):
        _, cache = net.forward(x)
        z = cache.logits[:, 0]
        traj[k] = _split_objective(rule, z, n)
        if k == steps:
            break
        g1, g0 = logit_gradients(rule, z)
        up = np.concatenate([g1[:n], g0[n:]]) / n
        grads, _ = net.backward(cache, up, from_logit=True)
        net.step(grads, lr)
    return float(traj.max()), traj


def _split_objective(rule, z, n):
    t = sigmoid(z)
    s1, _ = score_values(rule, t[:n])
    _, s0 = score_values(rule, t[n:])
    return float(s1.mean() + s0.mean())


# --- ReLU-hidden class is not robust -----------------------------------------


def t2_inner_max(real: np.ndarray, fake: np.ndarray, iters: int = 30) -> float:
    """``max_w`` of the 1-D log-score objective over
    ``T(x) = sigmoid(w1 relu(x) + w2 relu(-x))``.

    The objective is concave in ``w``; ascent uses Newton steps with a
    backtracking guard, starting from ``w = 0``.
    """
    hr = np.column_stack([np.maximum(real, 0), np.maximum(-real, 0)])
    hf = np.column_stack([np.maximum(fake, 0), np.maximum(-fake, 0)])

    def value(w):
        return float(np.mean(-np.logaddexp(0, -hr @ w)) + np.mean(-np.logaddexp(0, hf @ w)))

    w = np.zeros(2)
    cur = value(w)
    for _ in range(iters):
        tr = sigmoid(hr @ w)
        tf = sigmoid(hf @ w)
        grad = hr.T @ (1 - tr) / len(hr) - hf.T @ tf / len(hf)
        hess = -(hr.T * (tr * (1 - tr))) @ hr / len(hr) - (hf.T * (tf * (1 - tf))) @ hf / len(hf)
        step = -np.linalg.solve(hess - 1e-12 * np.eye(2), grad)
        t = 1.0
        while t > 1e-8:
            new = value(w + t * step)
            if new >= cur:
                break
            t *= 0.5
        w, prev, cur = w + t * step, cur, max(cur, new)
        if abs(cur - prev) < 1e-14:
            break
    return cur


def t2_nonrobust(
    sigma: float = 1.0,
    tau: float = 5.0,
    eps: float = 0.2,
    grid=None,
    n: int = 400_000,
    seed: int = 0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Grid minimizer over ``gamma^2`` of the inner maximum under
    ``(1-eps) N(0, sigma^2) + eps N(0, tau^2)`` vs ``N(0, gamma^2)``.

    The same standard-normal draws serve every ``gamma`` (common random numbers).
    """
    grid = np.linspace(0.5, 6.0, 111) if grid is None else np.asarray(grid, dtype=float)
    rng = Rng(seed)
    z = rng.substream("real").normal(n)
    out = rng.substream("labels").uniform(n) < eps
    real = np.where(out, tau, sigma) * z
    base = rng.substream("fake").normal(n)
    vals = np.array([t2_inner_max(real, math.sqrt(g2) * base) for g2 in grid])
    return float(grid[np.argmin(vals)]), grid, vals


def t2_predicted_minimizer(sigma: float = 1.0, tau: float = 5.0, eps: float = 0.2) -> float:
    return ((1 - eps) * sigma + eps * tau) ** 2


# --- moment identities ---------------------------------------------------------


def sigmoid_half(p: int = 3, n: int = 200_000, seed: int = 0) -> float:
    """``|E sigmoid(u^T X) - 1/2|`` for centered Gaussian X (symmetry gives zero)."""
    rng = Rng(seed)
    cov = np.diag(np.arange(1.0, p + 1))
    x = sample_gaussian(rng.substream("x"), 0.0, cov, n)
    u = rng.substream("u").normal(p)
    # antithetic pairing makes the symmetric identity exact up to rounding
    v = np.concatenate([sigmoid(x @ u), sigmoid(-x @ u)])
    return float(abs(v.mean() - 0.5))


def relu_moment(p: int = 3, n: int = 400_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo ``E relu(u^T X)`` vs ``sqrt(u^T S u) / sqrt(2 pi)`` for X ~ N(0, S).

    Equivalently ``E|u^T X| = sqrt(2/pi) sqrt(u^T S u)``.
    """
    rng = Rng(seed)
    cov = np.diag(np.arange(1.0, p + 1))
    x = sample_gaussian(rng.substream("x"), 0.0, cov, n)
    u = rng.substream("u").normal(p)
    u /= np.linalg.norm(u)
    mc = float(np.maximum(x @ u, 0).mean())
    exact = math.sqrt(u @ cov @ u) / math.sqrt(2 * math.pi)
    return mc, exact


def calibration_self_consistency(seed: int = 0, p: int = 5) -> float:
    """Calibration factor when the radial law is exactly the Gaussian one (ideal 1)."""
    return calibrate_elliptical(None, np.eye(p), Rng(seed).substream("calibration"), "gaussian")


# --- finite differences ----------------------------------------------------------


KINK_MARGIN = 1e-3
_KINKS = {"relu": (0.0,), "leaky_relu": (0.0,), "ramp": (-0.5, 0.5)}


def kink_distance(net: MlpNet, cache) -> float:
    """Smallest distance of a piecewise-linear pre-activation to its kink.

    Central differences straddling a kink are meaningless, so the suites redraw
    inputs until this exceeds :data:`KINK_MARGIN`.
    """
    d = math.inf
    for layer, z in zip(net.layers, cache.pre):
        for k in _KINKS.get(layer.activation, ()):
            d = min(d, float(np.min(np.abs(z - k))))
    return d


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def net_gradient_error(net: MlpNet, x: np.ndarray, c: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of ``backward`` against central differences for
    ``L = sum(c * net(x))``, over every parameter tensor and the input."""
    _, cache = net.forward(x)
    grads, gin = net.backward(cache, c)
    analytic = []
    for g in grads:
        analytic.append(g.weight)
        if g.bias is not None:
            analytic.append(g.bias)

    def loss():
        return float(np.sum(c * net(x)))

    worst = 0.0
    for param, ga in zip(net.params(), analytic):
        num = np.empty_like(param)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + h
            lp = loss()
            param[idx] = old - h
            lm = loss()
            param[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        worst = max(worst, _rel_err(ga, num))
    xn = np.array(x, dtype=float)
    num = np.empty_like(xn)
    for idx in np.ndindex(xn.shape):
        old = xn[idx]
        xn[idx] = old + h
        lp = float(np.sum(c * net(xn)))
        xn[idx] = old - h
        lm = float(np.sum(c * net(xn)))
        xn[idx] = old
        num[idx] = (lp - lm) / (2 * h)
    net.touch()
    return max(worst, _rel_err(gin, num))


def generator_gradient_error(gen: Generator, disc: MlpNet, rule: ScoringRule, seed: int, m: int = 6, h: float = 1e-5) -> float:
    """Central differences of the generator loss ``mean S(T(G(noise)), 0)`` with
    the noise held fixed, against the chained backward pass."""

    if gen.radial:
        # keep the xi network (and |h|) away from kinks
        while True:
            _, c = gen.sample(Rng(seed), m)
            h_out = c.xi_cache.output[:, 0]
            if kink_distance(gen.xi_net, c.xi_cache) > KINK_MARGIN and np.min(np.abs(h_out)) > KINK_MARGIN:
                break
            seed += 1_000_003

    def loss():
        x, _ = gen.sample(Rng(seed), m)
        _, s0 = score_values(rule, disc(x)[:, 0], clamp=False)
        return float(s0.mean())

    x, gcache = gen.sample(Rng(seed), m)
    _, dcache = disc.forward(x)
    _, g0 = logit_gradients(rule, dcache.logits[:, 0])
    _, gx = disc.backward(dcache, g0 / m, from_logit=True)
    grad = gen.backward(gcache, gx)
    pairs = [(gen.A, grad.A)]
    if gen.has_location:
        pairs.append((gen.theta, grad.theta))
    if gen.radial:
        flat = []
        for g in grad.xi_net:
            flat.append(g.weight)
            if g.bias is not None:
                flat.append(g.bias)
        pairs.extend(zip(gen.xi_net.params(), flat))
    worst = 0.0
    for param, ga in pairs:
        num = np.empty_like(param)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + h
            lp = loss()
            param[idx] = old - h
            lm = loss()
            param[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        worst = max(worst, _rel_err(ga, num))
    gen.touch()
    return worst


GRADIENT_PRESETS = (
    DiscriminatorPreset("T1", 4, hidden=6),
    DiscriminatorPreset("T2", 4, hidden=6),
    DiscriminatorPreset("T3", 5, hidden=8),
    DiscriminatorPreset("T4", 3, hidden=5),
    DiscriminatorPreset("deep", 4, hidden=6, depth=3, bottom="sigmoid"),
    DiscriminatorPreset("deep", 4, hidden=6, depth=2, bottom="ramp"),
    DiscriminatorPreset("practical", 4),
    DiscriminatorPreset("practical", 3),
)


def gradient_suite(seeds=range(20), generators: bool = True) -> float:
    """Worst relative error over all discriminator presets (and G1-G4) and seeds."""
    worst = 0.0
    for seed in seeds:
        rng = Rng(seed)
        for k, preset in enumerate(GRADIENT_PRESETS):
            sub = rng.substream(f"preset-{k}")
            net = init_net(sub.substream("init"), preset, sigma1=1.0)
            for layer in net.layers:
                if layer.bias is not None:
                    layer.bias[:] = 0.3 * sub.substream("bias").normal(layer.bias.shape)
            net.touch()
            draw = 0
            while True:
                x = sub.substream(f"x-{draw}").normal((5, preset.dim))
                if kink_distance(net, net.forward(x)[1]) > KINK_MARGIN:
                    break
                draw += 1
            c = sub.substream("c").normal((5, 1))
            worst = max(worst, net_gradient_error(net, x, c))
        if generators:
            p = 3
            disc = init_net(rng.substream("disc"), DiscriminatorPreset("practical", p), sigma1=1.0)
            for kind in ("G1", "G2", "G3", "G4"):
                a = rng.substream(f"A-{kind}").normal((p, p))
                gen = make_generator(kind, a, rng.substream(f"xi-{kind}"), theta=np.ones(p) * 0.2)
                rule = ScoringRule(1.0, 0.5) if kind == "G4" else ScoringRule()
                worst = max(worst, generator_gradient_error(gen, disc, rule, seed))
    return worst


# --- assembled report ---------------------------------------------------------------


def run_all(quick: bool = False) -> list[CheckResult]:
    out = []
    seeds = range(3) if quick else range(20)
    g = gradient_suite(seeds)
    out.append(CheckResult("gradient_suite", g <= 1e-4, g, "max relative error <= 1e-4"))

    best, _ = flat_landscape(n=20_000 if quick else 200_000)
    ok = -LOG4 - 0.001 <= best <= -LOG4 + 0.02
    out.append(CheckResult("flat_landscape", ok, best, "within [-log 4 - 0.001, -log 4 + 0.02]"))

    target = t2_predicted_minimizer()
    g2, _, _ = t2_nonrobust(n=40_000 if quick else 400_000)
    ok = abs(g2 - target) <= 0.15 * target
    out.append(CheckResult("t2_nonrobust_minimizer", ok, g2, f"within 15% of {target:.4g}"))

    dev = sigmoid_half()
    out.append(CheckResult("sigmoid_half", dev <= 1e-12, dev, "|E sigmoid(u^T X) - 1/2| <= 1e-12"))

    mc, exact = relu_moment()
    rel = abs(mc - exact) / exact
    out.append(CheckResult("relu_moment", rel <= 0.01, rel, "relative gap to sqrt(u^T S u / 2 pi) <= 1%"))

    rhs = target_clipped_moment("gaussian")
    out.append(CheckResult("clipped_moment_gaussian", abs(rhs - 0.6313) <= 1e-3, rhs, "0.6313 within 1e-3"))

    a = calibration_self_consistency()
    out.append(CheckResult("calibration_self_consistency", abs(a - 1) <= 0.03, a, "1 within 0.03"))
    return out
