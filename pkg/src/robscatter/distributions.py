"""Samplers for Gaussian, elliptical and contaminated data.

Randomness comes from :class:`Rng`, a thin wrapper over numpy's counter-based
Philox generator. Each logical consumer (data, minibatches, network init,
generator noise, ...) asks for its own named substream so that adding draws in
one consumer never shifts another. Normal variates use numpy's ziggurat
sampler.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import cholesky

__all__ = [
    "Rng",
    "EllipticalModel",
    "Gaussian",
    "Dirac",
    "MultivariateT",
    "ContaminationScenario",
    "sample_gaussian",
    "sample_sphere",
    "sample_elliptical",
    "sample_mvt",
    "sample_contaminated",
    "pair_difference_transform",
    "ar_matrix",
    "write_csv",
]


class DistributionError(ValueError):
    pass


class Rng:
    """Seeded Philox stream with named, order-independent substreams."""

    def __init__(self, seed: int = 0, _path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(_path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def substream(self, name: str | int) -> "Rng":
        key = name if isinstance(name, int) else zlib.crc32(name.encode())
        return Rng(self.seed, self.path + (key,))

    # passthroughs kept short on purpose; use .gen for anything else
    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def uniform(self, size=None):
        return self.gen.random(size)

    def chisquare(self, df, size=None):
        return self.gen.chisquare(df, size)

    def integers(self, high, size=None):
        return self.gen.integers(0, high, size)

    def get_state(self) -> dict:
        st = self.gen.bit_generator.state
        return {"seed": self.seed, "path": list(self.path), "bit_generator": _jsonable(st)}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        r = cls(state["seed"], tuple(state["path"]))
        r.gen.bit_generator.state = _unjsonable(state["bit_generator"])
        return r


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _unjsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _unjsonable(v) for k, v in obj.items()}
    return obj


def _as_rng(rng) -> Rng:
    if isinstance(rng, Rng):
        return rng
    return Rng(int(rng))


def ar_matrix(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def sample_gaussian(rng, mean, cov, n: int) -> np.ndarray:
    rng = _as_rng(rng)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = cov.shape[0]
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (p,))
    if n == 0:
        return np.empty((0, p))
    low = cholesky(cov, name="covariance")
    return mean + rng.normal((n, p)) @ low.T


def sample_sphere(rng, r: int, n: int) -> np.ndarray:
    if r < 1:
        raise DistributionError("sphere dimension must be >= 1")
    rng = _as_rng(rng)
    z = rng.normal((n, r))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # a row of exact zeros has probability zero; redraw to be safe
    while np.any(norms == 0):
        bad = norms[:, 0] == 0
        z[bad] = rng.normal((int(bad.sum()), r))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norms


@dataclass
class EllipticalModel:
    """``X = location + xi * shape @ U`` with ``U`` uniform on the sphere.

    ``xi`` is ``"gaussian"`` (``xi = ||Z||``, Z ~ N(0, I_r)), ``"t"`` with
    ``dof`` (``xi = ||Z|| / sqrt(W / dof)``), or a callable
    ``f(rng, n) -> xi`` for custom radial laws.
    """

    location: np.ndarray
    shape: np.ndarray
    xi: str | Callable = "gaussian"
    dof: float = np.inf

    def __post_init__(self):
        self.shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        self.location = np.broadcast_to(
            np.asarray(self.location, dtype=float), (self.shape.shape[0],)
        ).copy()

    @property
    def dim(self) -> int:
        return self.shape.shape[0]

    @property
    def scatter(self) -> np.ndarray:
        return self.shape @ self.shape.T


def sample_xi(rng, kind, r: int, n: int, dof: float = np.inf) -> np.ndarray:
    rng = _as_rng(rng)
    if callable(kind):
        xi = np.asarray(kind(rng, n), dtype=float)
        if np.any(xi < 0) or xi.shape != (n,):
            raise DistributionError("custom xi sampler must return n nonnegative values")
        return xi
    radius = np.linalg.norm(rng.normal((n, r)), axis=1)
    if kind == "gaussian" or (kind == "t" and np.isinf(dof)):
        return radius
    if kind == "t":
        if not dof > 0:
            raise DistributionError("t degrees of freedom must be positive")
        w = rng.chisquare(dof, n)
        return radius / np.sqrt(w / dof)
    raise DistributionError(f"unknown xi law {kind!r}")


def sample_elliptical(rng, model: EllipticalModel, n: int) -> np.ndarray:
    rng = _as_rng(rng)
    r = model.shape.shape[1]
    u = sample_sphere(rng.substream("U"), r, n)
    xi = sample_xi(rng.substream("xi"), model.xi, r, n, model.dof)
    return model.location + xi[:, None] * (u @ model.shape.T)


def sample_mvt(rng, dof: float, loc, scatter, n: int) -> np.ndarray:
    """Multivariate t with density proportional to ``(1 + d^T S^{-1} d / v)^(-(v+p)/2)``."""
    if not dof > 0:
        raise DistributionError("t degrees of freedom must be positive")
    rng = _as_rng(rng)
    scatter = np.atleast_2d(np.asarray(scatter, dtype=float))
    g = sample_gaussian(rng.substream("G"), 0.0, scatter, n)
    w = rng.substream("W").chisquare(dof, n)
    return np.asarray(loc, dtype=float) + g / np.sqrt(w / dof)[:, None]


# --- mixture components -----------------------------------------------------


@dataclass
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def sample(self, rng, n):
        return sample_gaussian(rng, self.mean, self.cov, n)


@dataclass
class Dirac:
    point: np.ndarray

    def sample(self, rng, n):
        pt = np.asarray(self.point, dtype=float)
        return np.tile(pt, (n, 1))


@dataclass
class MultivariateT:
    dof: float
    loc: np.ndarray
    scatter: np.ndarray

    def sample(self, rng, n):
        return sample_mvt(rng, self.dof, self.loc, self.scatter, n)


@dataclass
class Elliptical:
    model: EllipticalModel

    def sample(self, rng, n):
        return sample_elliptical(rng, self.model, n)


@dataclass
class ContaminationScenario:
    """Huber mixture ``(1 - epsilon) clean + epsilon contaminant``."""

    clean: object
    contaminant: Optional[object] = None
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise DistributionError("epsilon must lie in [0, 1)")
        if self.epsilon > 0 and self.contaminant is None:
            raise DistributionError("epsilon > 0 needs a contaminant")


def sample_contaminated(rng, sc: ContaminationScenario, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` rows; ``labels[i]`` is True where row ``i`` came from the contaminant."""
    rng = _as_rng(rng)
    labels = rng.substream("labels").uniform(n) < sc.epsilon
    k = int(labels.sum())
    x_clean = sc.clean.sample(rng.substream("clean"), n - k)
    out = np.empty((n, x_clean.shape[1]))
    out[~labels] = x_clean
    if k:
        out[labels] = sc.contaminant.sample(rng.substream("contaminant"), k)
    return out, labels


def _pair_from_index(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # row-major enumeration of pairs (i < j): index k -> (i, j)
    k = k.astype(np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2).astype(np.int64)
    start = i * (2 * n - i - 1) // 2
    # guard float rounding at row boundaries
    over = start > k
    i[over] -= 1
    start = i * (2 * n - i - 1) // 2
    under = k - start >= n - i - 1
    i[under] += 1
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


def sample_pairs(rng, n: int, max_pairs: int) -> tuple[np.ndarray, np.ndarray]:
    """All pairs ``i < j`` if there are at most ``max_pairs``, else a uniform subset."""
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, 1)
        return i, j
    rng = _as_rng(rng)
    k = np.sort(rng.gen.choice(total, size=max_pairs, replace=False))
    return _pair_from_index(k, n)


def pair_difference_transform(data, rng, max_pairs: int) -> np.ndarray:
    """Rows ``(X_i - X_j) / sqrt(2)`` over distinct pairs ``i < j``."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < 2:
        raise DistributionError("pair differences need at least two observations")
    i, j = sample_pairs(rng, n, max_pairs)
    return (data[i] - data[j]) / np.sqrt(2.0)


def write_csv(path, data) -> None:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(data.shape[1])])
        for row in data:
            w.writerow([repr(float(v)) for v in row])
