"""Proper-scoring-rule GAN estimators of scatter (and location).

The trainer alternates ``kd`` discriminator ascent steps on the minibatch
objective

    mean_i S(T(X_i), 1) + mean_j S(T(G(noise_j)), 0)

with ``kg`` generator descent steps on the fake term, using plain SGD, fresh
generator noise every step and a step decay of both learning rates by
``decay_alpha`` every ``decay_period`` epochs. The estimate is the average of
``A_t A_t^T`` (and ``theta_t``) over the last ``avg_window`` epochs.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate, stats

from .baselines import KENDALL_PAIR_BUDGET, scaled_kendall_tau
from .distributions import Rng, pair_difference_transform, sample_sphere
from .linalg import check_psd, operator_norm, sym_eig, symmetrize
from .nets import DiscriminatorPreset, Generator, MlpNet, make_discriminator, make_generator
from .scoring import ScoringRule, logit_gradients, score_values, sigmoid

log = logging.getLogger(__name__)

USTAT_PAIR_BUDGET = 100_000
CALIBRATION_DRAWS = 1_000_000


class TrainingError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters of the alternating SGD loop.

    ``base``/``dof`` give the law of the G1/G3 input noise. ``calibrate`` names
    the target family for the final scale fix (``"gaussian"`` or ``"t"`` with
    ``target_dof``); ``None`` picks gaussian for G2/G4 and skips it for G1/G3.
    """

    gamma_d: float = 0.025
    gamma_g: float = 0.1
    batch: int = 500
    kd: int = 12
    kg: int = 3
    epochs: int = 500
    avg_window: int = 25
    decay_alpha: float = 0.2
    decay_period: int = 200
    sigma1: float = 0.0025
    score: ScoringRule = field(default_factory=ScoringRule)
    discriminator: DiscriminatorPreset | str = "practical"
    generator: str = "G1"
    base: str = "gaussian"
    dof: float = math.inf
    calibrate: Optional[str] = None
    target_dof: float = math.inf
    pair_budget: int = KENDALL_PAIR_BUDGET
    trace_full_every: int = 10
    match_curvature: bool = True

    def __post_init__(self):
        if self.avg_window > self.epochs or self.avg_window < 1:
            raise ValueError("need 1 <= avg_window <= epochs")
        if self.batch < 1 or self.kd < 1 or self.kg < 1:
            raise ValueError("batch, kd and kg must be >= 1")
        if not 0 < self.decay_alpha <= 1:
            raise ValueError("decay_alpha must lie in (0, 1]")
        if self.gamma_d <= 0 or self.gamma_g <= 0:
            raise ValueError("learning rates must be positive")
        self.generator = self.generator.upper()

    @classmethod
    def published(cls, generator: str = "G1", **kw) -> "TrainConfig":
        """Hyperparameters listed for p = 100."""
        if generator.upper() in ("G2", "G4"):
            base = dict(gamma_d=0.05, gamma_g=0.025, sigma1=0.025)
        else:
            base = dict(gamma_d=0.025, gamma_g=0.1, sigma1=0.0025)
        base.update(kd=12, kg=3, epochs=500, avg_window=25, decay_alpha=0.2, decay_period=200)
        base.update(kw)
        return cls(generator=generator, **base)

    @classmethod
    def desk(cls, generator: str = "G1", **kw) -> "TrainConfig":
        """Defaults tuned for p <= 10, n of a few thousand."""
        base = dict(
            gamma_d=0.2, gamma_g=0.2, batch=500, kd=10, kg=2,
            epochs=300, avg_window=100, decay_alpha=0.2, decay_period=200, sigma1=0.025,
        )
        if generator.upper() in ("G2", "G4"):
            base["gamma_g"] = 0.05
        base.update(kw)
        return cls(generator=generator, **base)

    def lr_at(self, epoch: int) -> tuple[float, float]:
        """Learning rates in force during 1-based ``epoch``."""
        f = self.decay_alpha ** ((epoch - 1) // self.decay_period)
        return self.gamma_d * f, self.gamma_g * f

    def effective_score(self) -> ScoringRule:
        """Score actually optimized.

        With ``match_curvature`` the score is rescaled so that ``G''(1/2)``
        equals the log score's value 4; a positive rescaling leaves the
        estimator unchanged but keeps one set of learning rates usable across
        the Beta family.
        """
        rule = self.score
        if not self.match_curvature:
            return rule
        g2 = rule.scale * 2.0 ** (2 - rule.alpha - rule.beta)
        return rule.affine(4.0 / g2, 0.0)

    def preset(self, dim: int) -> DiscriminatorPreset:
        d = self.discriminator
        if isinstance(d, str):
            return DiscriminatorPreset(kind=d, dim=dim)
        return replace(d, dim=dim)


@dataclass
class EstimationResult:
    scatter_hat: np.ndarray
    location_hat: np.ndarray
    calibration_factor: float = 1.0
    trace: list = field(default_factory=list)  # (epoch, objective, ||A A^T||_op)


# --- initialization ---------------------------------------------------------


def kendall_init(data, rng=None, pair_budget: int = KENDALL_PAIR_BUDGET, floor: float = 1e-6) -> np.ndarray:
    """Scaled Kendall's tau, symmetrized, with eigenvalues clamped to >= ``floor``."""
    sigma0 = scaled_kendall_tau(data, rng, pair_budget)
    w, v = sym_eig(sigma0, name="Kendall initial scatter")
    return symmetrize((v * np.maximum(w, floor)) @ v.T)


def initial_shape(sigma0) -> np.ndarray:
    """``A0 = V diag(sqrt(w))`` from ``sigma0 = V diag(w) V^T``."""
    w, v = sym_eig(sigma0, name="initial scatter")
    return v * np.sqrt(np.maximum(w, 0.0))


# --- objective --------------------------------------------------------------


def objective_estimate(discriminator: MlpNet, score: ScoringRule, real_batch, fake_batch) -> float:
    """``mean S(T(x),1)`` over real rows plus ``mean S(T(x),0)`` over fake rows."""
    if len(real_batch) == 0 or len(fake_batch) == 0:
        raise ValueError("objective needs nonempty batches")
    t_real = discriminator(real_batch)[:, 0]
    t_fake = discriminator(fake_batch)[:, 0]
    s1, _ = score_values(score, t_real)
    _, s0 = score_values(score, t_fake)
    return float(np.mean(s1) + np.mean(s0))


# --- trainer ----------------------------------------------------------------


class GanTrainer:
    """Stateful alternating-SGD loop; :func:`train` is the one-call wrapper."""

    def __init__(self, data, cfg: TrainConfig, rng, A0=None, theta0=None):
        self.data = np.asarray(data, dtype=float)
        if not np.all(np.isfinite(self.data)):
            raise TrainingError("data contains non-finite values")
        self.cfg = cfg
        self.score = cfg.effective_score()
        rng = rng if isinstance(rng, Rng) else Rng(int(rng))
        n, p = self.data.shape
        self.epoch = 0
        self.rng_batch = rng.substream("minibatch")
        self.rng_noise = rng.substream("generator-noise")
        gen_kind = cfg.generator
        if theta0 is None and gen_kind in ("G3", "G4"):
            theta0 = np.median(self.data, axis=0)
        if A0 is None:
            centered = self.data - theta0 if theta0 is not None else self.data
            A0 = initial_shape(kendall_init(centered, rng.substream("kendall"), cfg.pair_budget))
        self.disc = make_discriminator(rng.substream("disc-init"), cfg.preset(p), cfg.sigma1)
        self.gen = make_generator(
            gen_kind, A0, rng.substream("xi-init"), theta=theta0, base=cfg.base, dof=cfg.dof
        )
        self.sum_scatter = np.zeros((p, p))
        self.sum_theta = np.zeros(p)
        self.n_avg = 0
        self.trace: list = []

    # one epoch = kd discriminator steps + kg generator steps
    def run_epoch(self):
        cfg = self.cfg
        n = self.data.shape[0]
        m = min(cfg.batch, n)
        self.epoch += 1
        lr_d, lr_g = cfg.lr_at(self.epoch)
        for _ in range(cfg.kd):
            real = self.data[self.rng_batch.gen.choice(n, m, replace=False)]
            fake, _ = self.gen.sample(self.rng_noise, m)
            _, cache = self.disc.forward(np.vstack([real, fake]))
            g1, g0 = logit_gradients(self.score, cache.logits[:, 0])
            up = np.concatenate([g1[:m], g0[m:]]) / m
            grads, _ = self.disc.backward(cache, up, from_logit=True)
            self.disc.step(grads, lr_d)
        for _ in range(cfg.kg):
            fake, gcache = self.gen.sample(self.rng_noise, m)
            _, cache = self.disc.forward(fake)
            _, g0 = logit_gradients(self.score, cache.logits[:, 0])
            _, gx = self.disc.backward(cache, g0 / m, from_logit=True)
            self.gen.step(self.gen.backward(gcache, gx), -lr_g)

        full = cfg.trace_full_every and self.epoch % cfg.trace_full_every == 0
        obj = objective_estimate(self.disc, self.score, self.data if full else real, fake)
        if not (np.isfinite(obj) and np.all(np.isfinite(self.gen.A))):
            raise TrainingError(f"non-finite objective or generator at epoch {self.epoch}")
        scatter = self.gen.scatter()
        self.trace.append((self.epoch, obj, operator_norm(scatter)))
        if self.epoch > cfg.epochs - cfg.avg_window:
            self.sum_scatter += scatter
            if self.gen.has_location:
                self.sum_theta += self.gen.theta
            self.n_avg += 1

    def run(self, checkpoint_path=None, checkpoint_every: int = 0):
        while self.epoch < self.cfg.epochs:
            self.run_epoch()
            if checkpoint_path and checkpoint_every and self.epoch % checkpoint_every == 0:
                save_checkpoint(self, checkpoint_path)
        return self.result()

    def result(self) -> EstimationResult:
        if self.n_avg == 0:
            raise TrainingError("no epochs inside the averaging window yet")
        scatter = symmetrize(self.sum_scatter / self.n_avg)
        loc = self.sum_theta / self.n_avg if self.gen.has_location else np.zeros(self.gen.dim)
        a = 1.0
        target = self.cfg.calibrate
        if target is None and self.gen.radial:
            target = "gaussian"
        if target is not None:
            xi_net = self.gen.xi_net if self.gen.radial else None
            a = calibrate_elliptical(
                xi_net, self.gen.A, Rng(0).substream("calibration"), target,
                target_dof=self.cfg.target_dof, base=self.cfg.base, base_dof=self.cfg.dof,
            )
            scatter = scatter / a**2
        try:
            check_psd(scatter, name="scatter estimate")
        except ValueError as exc:
            raise TrainingError(str(exc)) from exc
        return EstimationResult(scatter, loc, a, list(self.trace))

    # checkpointing
    def state_dict(self) -> dict:
        return {
            "format": "robscatter.checkpoint/1",
            "epoch": self.epoch,
            "discriminator": self.disc.to_dict(),
            "generator": self.gen.to_dict(),
            "rng_batch": self.rng_batch.get_state(),
            "rng_noise": self.rng_noise.get_state(),
            "sum_scatter": self.sum_scatter.tolist(),
            "sum_theta": self.sum_theta.tolist(),
            "n_avg": self.n_avg,
            "trace": [list(t) for t in self.trace],
        }

    def load_state_dict(self, st: dict):
        self.epoch = st["epoch"]
        self.disc = MlpNet.from_dict(st["discriminator"])
        self.gen = Generator.from_dict(st["generator"])
        self.rng_batch = Rng.from_state(st["rng_batch"])
        self.rng_noise = Rng.from_state(st["rng_noise"])
        self.sum_scatter = np.array(st["sum_scatter"], dtype=float)
        self.sum_theta = np.array(st["sum_theta"], dtype=float)
        self.n_avg = st["n_avg"]
        self.trace = [tuple(t) for t in st["trace"]]


def save_checkpoint(trainer: GanTrainer, path) -> None:
    with open(path, "w") as fh:
        json.dump(trainer.state_dict(), fh)


def load_checkpoint(path, data, cfg: TrainConfig, rng) -> GanTrainer:
    with open(path) as fh:
        st = json.load(fh)
    p = np.asarray(data).shape[1]
    tr = GanTrainer(data, cfg, rng, A0=np.eye(p), theta0=np.zeros(p))
    tr.load_state_dict(st)
    return tr


def train(data, cfg: TrainConfig, rng, A0=None, theta0=None) -> EstimationResult:
    """Scatter-only estimate with a centered generator (G1 or G2)."""
    if cfg.generator not in ("G1", "G2"):
        raise ValueError("train() expects G1 or G2; use train_joint for G3/G4")
    return GanTrainer(data, cfg, rng, A0=A0).run()


def train_joint(data, cfg: TrainConfig, rng, A0=None, theta0=None) -> EstimationResult:
    """Joint location/scatter estimate with G3 or G4."""
    if cfg.generator not in ("G3", "G4"):
        raise ValueError("train_joint() expects G3 or G4")
    return GanTrainer(data, cfg, rng, A0=A0, theta0=theta0).run()


def train_ustat(data, cfg: TrainConfig, rng, pair_budget: int = USTAT_PAIR_BUDGET) -> EstimationResult:
    """Scatter estimate from pairwise differences ``(X_i - X_j)/sqrt(2)``; location-free."""
    rng = rng if isinstance(rng, Rng) else Rng(int(rng))
    pairs = pair_difference_transform(data, rng.substream("pairs"), pair_budget)
    return train(pairs, cfg, rng)


# --- elliptical calibration ---------------------------------------------------


def clipped_l1(t):
    return np.minimum(np.abs(t), 1.0)


def target_clipped_moment(target: str = "gaussian", dof: float = math.inf) -> float:
    """``E min(|X|, 1)`` for ``X ~ N(0,1)`` or standard ``t_dof``."""
    if target == "gaussian" or (target == "t" and math.isinf(dof)):
        return float(2 * (stats.norm.pdf(0) - stats.norm.pdf(1)) + 2 * stats.norm.sf(1))
    if target == "t":
        inner, _ = integrate.quad(lambda x: x * stats.t.pdf(x, dof), 0.0, 1.0, epsabs=1e-13)
        return float(2 * inner + 2 * stats.t.sf(1.0, dof))
    raise CalibrationError(f"unknown calibration target {target!r}")


def _radial_projection_draws(xi_net, r, rng, n_draws, base="gaussian", base_dof=math.inf):
    # xi * u^T U with u = e_1 (the law does not depend on u)
    out = np.empty(n_draws)
    chunk = 100_000
    for s in range(0, n_draws, chunk):
        k = min(chunk, n_draws - s)
        sub = rng.substream(s)
        u1 = sample_sphere(sub.substream("U"), r, k)[:, 0]
        if xi_net is None:
            xi = np.linalg.norm(sub.normal((k, r)), axis=1)
            if base == "t" and math.isfinite(base_dof):
                xi = xi / np.sqrt(sub.chisquare(base_dof, k) / base_dof)
        else:
            xi = np.abs(xi_net(sub.normal((k, xi_net.width_in)))[:, 0])
        out[s : s + k] = xi * u1
    return np.abs(out)


def calibrate_elliptical(
    xi_net,
    A_hat,
    rng,
    target: str = "gaussian",
    target_dof: float = math.inf,
    n_draws: int = CALIBRATION_DRAWS,
    base: str = "gaussian",
    base_dof: float = math.inf,
    lo: float = 1e-4,
    hi: float = 1e4,
) -> float:
    """Factor ``a`` solving ``E min(|a xi u^T U|, 1) = E min(|X|, 1)``, X from the target.

    ``xi_net=None`` uses the generator's base law for ``xi``. The calibrated
    scatter is ``A_hat A_hat^T / a**2``.
    """
    rng = rng if isinstance(rng, Rng) else Rng(int(rng))
    r = np.atleast_2d(A_hat).shape[1]
    v = _radial_projection_draws(xi_net, r, rng, n_draws, base, base_dof)
    rhs = target_clipped_moment(target, target_dof)

    def F(a):
        return float(np.mean(np.minimum(a * v, 1.0)))

    f_lo, f_hi = F(lo), F(hi)
    if not f_lo <= rhs <= f_hi:
        raise CalibrationError(f"root not bracketed: F({lo:g})={f_lo:.6g}, F({hi:g})={f_hi:.6g}, target {rhs:.6g}")
    a_lo, a_hi = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (a_lo + a_hi)
        if F(math.exp(mid)) < rhs:
            a_lo = mid
        else:
            a_hi = mid
        if a_hi - a_lo < 1e-12:
            break
    return math.exp(0.5 * (a_lo + a_hi))


__all__ = [
    "TrainConfig",
    "EstimationResult",
    "GanTrainer",
    "TrainingError",
    "CalibrationError",
    "kendall_init",
    "initial_shape",
    "objective_estimate",
    "train",
    "train_joint",
    "train_ustat",
    "calibrate_elliptical",
    "target_clipped_moment",
    "clipped_l1",
    "save_checkpoint",
    "load_checkpoint",
]
