"""Classical scatter estimators used as baselines and for initialization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .distributions import sample_pairs
from .linalg import LinalgError, symmetrize

log = logging.getLogger(__name__)

# Phi(sqrt(beta)) = 3/4, i.e. beta is the median of a chi-square(1) variable
DEPTH_BETA = float(norm.ppf(0.75) ** 2)
KENDALL_PAIR_BUDGET = 2_000_000
_PAIR_CHUNK = 250_000


class BaselineError(ValueError):
    pass


@dataclass
class TylerConfig:
    max_iter: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise BaselineError("Tyler tolerance must be positive")


def tyler_fixed_point_map(x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """``(p/n) sum_i x_i x_i^T / (x_i^T sigma^{-1} x_i)``."""
    n, p = x.shape
    sol = np.linalg.solve(sigma, x.T).T
    q = np.einsum("ij,ij->i", x, sol)
    return symmetrize((x / q[:, None]).T @ x * (p / n))


def tyler_m(data, cfg: TylerConfig | None = None) -> np.ndarray:
    """Tyler's M-estimator of shape, normalized to trace p.

    Zero rows carry no direction and are dropped (with a logged count).
    """
    cfg = cfg or TylerConfig()
    x = np.asarray(data, dtype=float)
    zero = ~np.any(x != 0, axis=1)
    if zero.any():
        log.warning("tyler_m: dropped %d zero rows", int(zero.sum()))
        x = x[~zero]
    n, p = x.shape
    if n <= p:
        raise BaselineError(f"Tyler's M-estimator needs n > p (n={n}, p={p})")
    sigma = np.eye(p)
    for it in range(cfg.max_iter):
        try:
            new = tyler_fixed_point_map(x, sigma)
        except np.linalg.LinAlgError as exc:
            raise LinalgError(f"Tyler iterate {it} is singular; regularize the data") from exc
        new *= p / np.trace(new)
        delta = np.linalg.norm(new - sigma) / np.linalg.norm(sigma)
        sigma = new
        if delta < cfg.tol:
            break
    return sigma


def kendall_tau_matrix(data, rng=None, pair_budget: int = KENDALL_PAIR_BUDGET) -> np.ndarray:
    """Pairwise Kendall tau-a, over all pairs or a uniform pair subsample."""
    x = np.asarray(data, dtype=float)
    n, p = x.shape
    if n < 2:
        raise BaselineError("Kendall's tau needs at least two observations")
    ii, jj = sample_pairs(rng if rng is not None else 0, n, pair_budget)
    acc = np.zeros((p, p))
    for s in range(0, len(ii), _PAIR_CHUNK):
        d = np.sign(x[ii[s : s + _PAIR_CHUNK]] - x[jj[s : s + _PAIR_CHUNK]])
        acc += d.T @ d
    return acc / len(ii)


def scaled_kendall_tau(data, rng=None, pair_budget: int = KENDALL_PAIR_BUDGET) -> np.ndarray:
    """``S^{1/2} K S^{1/2} / q`` with ``K = sin(pi tau / 2)``, ``S = diag(median(x^2))``.

    ``q = Phi^{-1}(3/4)^2``, the median of chi-square(1), so the output targets
    the covariance for Gaussian data.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise BaselineError("Kendall's tau needs at least two observations")
    k = np.sin(0.5 * np.pi * kendall_tau_matrix(x, rng, pair_budget))
    s_half = np.sqrt(np.median(x**2, axis=0))
    return symmetrize(s_half[:, None] * k * s_half[None, :] / DEPTH_BETA)


def sample_covariance(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.shape[0] < 2:
        raise BaselineError("sample covariance needs at least two observations")
    xc = x - x.mean(axis=0)
    return symmetrize(xc.T @ xc / x.shape[0])


@dataclass
class DepthConfig1D:
    beta_const: float = DEPTH_BETA
    grid: np.ndarray = field(default_factory=lambda: np.linspace(0.05, 10.0, 2000))

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.size == 0 or np.any(self.grid <= 0):
            raise BaselineError("depth grid must be nonempty and positive")


def depth_1d(data, cfg: DepthConfig1D | None = None) -> tuple[float, np.ndarray]:
    """One-dimensional matrix depth: grid minimizer of
    ``max(freq{x^2 < beta g}, freq{x^2 > beta g})``, i.e. one minus the depth
    ``min(freq{x^2 <= beta g}, freq{x^2 >= beta g})``.

    Strict inequalities only matter for atoms; on continuous data the profile
    lies in ``[1/2, 1]``.
    """
    cfg = cfg or DepthConfig1D()
    x2 = np.sort(np.asarray(data, dtype=float).ravel() ** 2)
    n = x2.size
    thr = cfg.beta_const * cfg.grid
    below = np.searchsorted(x2, thr, side="left") / n
    above = 1.0 - np.searchsorted(x2, thr, side="right") / n
    profile = np.maximum(below, above)
    return float(cfg.grid[np.argmin(profile)]), profile


__all__ = [
    "DEPTH_BETA",
    "TylerConfig",
    "tyler_m",
    "tyler_fixed_point_map",
    "kendall_tau_matrix",
    "scaled_kendall_tau",
    "sample_covariance",
    "DepthConfig1D",
    "depth_1d",
]
