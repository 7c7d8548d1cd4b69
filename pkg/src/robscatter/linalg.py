"""Dense symmetric linear algebra used by the estimators.

Matrices are plain ``numpy`` arrays. Symmetric inputs are symmetrized on entry
(``(m + m.T) / 2``) so every routine here sees exactly symmetric storage.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LinalgError",
    "NotPSDError",
    "NotPDError",
    "symmetrize",
    "sym_eig",
    "operator_norm",
    "sym_sqrt",
    "cholesky",
    "solve_pd",
    "psd_tolerance",
    "check_psd",
]

JACOBI_MAX_SWEEPS = 100
POWER_MAX_ITER = 1000
POWER_RTOL = 1e-12


class LinalgError(ValueError):
    pass


class NotPSDError(LinalgError):
    pass


class NotPDError(LinalgError):
    pass


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LinalgError(f"expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


def sym_eig(m, name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` sorted in descending order and orthogonal
    ``V`` such that ``V @ diag(w) @ V.T`` reconstructs ``m``.
    """
    a = symmetrize(m).copy()
    if not np.all(np.isfinite(a)):
        raise LinalgError(f"{name} has non-finite entries")
    p = a.shape[0]
    v = np.eye(p)
    scale = np.abs(a).max() if a.size else 0.0
    if p == 1 or scale == 0.0:
        return _sorted(np.diag(a).copy(), v)

    iu = np.triu_indices(p, 1)
    thresh = (1e-15 * scale) ** 2
    for _ in range(JACOBI_MAX_SWEEPS):
        if np.sum(a[iu] ** 2) <= thresh * p * p:
            return _sorted(np.diag(a).copy(), v)
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = a[i, j]
                if abs(aij) < 1e-300:
                    continue
                theta = (a[j, j] - a[i, i]) / (2.0 * aij)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate columns then rows (a <- J^T a J)
                ai = a[:, i].copy()
                aj = a[:, j]
                a[:, i] = c * ai - s * aj
                a[:, j] = s * ai + c * aj
                ai = a[i, :].copy()
                aj = a[j, :]
                a[i, :] = c * ai - s * aj
                a[j, :] = s * ai + c * aj
                a[i, j] = a[j, i] = 0.0
                vi = v[:, i].copy()
                vj = v[:, j]
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
    raise LinalgError(
        f"Jacobi eigendecomposition of {name} ({p}x{p}) did not converge "
        f"after {JACOBI_MAX_SWEEPS} sweeps"
    )


def _sorted(w, v):
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def operator_norm(m) -> float:
    """Largest singular value, by power iteration on ``m.T @ m``.

    Starts from the normalized all-ones vector; if that start is (numerically)
    orthogonal to the top singular space, restarts from a seeded random
    vector. Falls back to a Jacobi eigendecomposition of ``m.T @ m`` if the
    iteration cap is hit.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.size == 0 or not np.any(m):
        return 0.0
    g = m.T @ m
    k = g.shape[0]
    x = np.full(k, 1.0 / np.sqrt(k))
    restarted = False
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        y = g @ x
        ny = np.linalg.norm(y)
        if ny == 0.0 or (ny < 1e-14 * np.abs(g).max() and not restarted):
            restarted = True
            x = np.random.default_rng(12345).standard_normal(k)
            x /= np.linalg.norm(x)
            continue
        lam_new = float(x @ y)
        x = y / ny
        if abs(lam_new - lam) <= POWER_RTOL * abs(lam_new):
            # a stagnant start can converge to a lower eigenvalue; verify once
            if not restarted and k > 1:
                lam_chk = _power_from_random(g)
                if lam_chk > lam_new * (1 + 1e-9):
                    return float(np.sqrt(lam_chk))
            return float(np.sqrt(max(lam_new, 0.0)))
        lam = lam_new
    w, _ = sym_eig(g, name="m^T m")
    return float(np.sqrt(max(w[0], 0.0)))


def _power_from_random(g) -> float:
    k = g.shape[0]
    x = np.random.default_rng(12345).standard_normal(k)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        y = g @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam_new = float(x @ y)
        x = y / ny
        if abs(lam_new - lam) <= POWER_RTOL * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def psd_tolerance(m) -> float:
    return 1e-9 * operator_norm(m)


def check_psd(m, name: str = "matrix") -> np.ndarray:
    w, _ = sym_eig(m, name=name)
    tol = 1e-9 * max(abs(w[0]), abs(w[-1]))
    if w[-1] < -tol:
        raise NotPSDError(f"{name} has eigenvalue {w[-1]:.3e} < -{tol:.3e}")
    return w


def sym_sqrt(m, name: str = "matrix") -> np.ndarray:
    """Symmetric square root of a psd matrix.

    Eigenvalues in ``[-tol, 0)`` with ``tol = 1e-9 * ||m||_op`` are clamped to
    zero; anything more negative raises :class:`NotPSDError`.
    """
    w, v = sym_eig(m, name=name)
    tol = 1e-9 * max(abs(w[0]), abs(w[-1]))
    if w[-1] < -tol:
        raise NotPSDError(f"{name} has eigenvalue {w[-1]:.3e} < -{tol:.3e}")
    r = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return symmetrize(r)


def cholesky(m, name: str = "matrix") -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m`` (row-oriented Cholesky-Banachiewicz)."""
    a = symmetrize(m)
    p = a.shape[0]
    low = np.zeros_like(a)
    for i in range(p):
        for j in range(i + 1):
            s = a[i, j] - low[i, :j] @ low[j, :j]
            if i == j:
                if not s > 0.0:
                    raise NotPDError(f"{name} is not positive definite (pivot {i} = {s:.3e})")
                low[i, i] = np.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    return low


def solve_pd(m, b, name: str = "matrix") -> np.ndarray:
    """Solve ``m x = b`` for positive-definite ``m`` via :func:`cholesky`."""
    from scipy.linalg import solve_triangular

    low = cholesky(m, name=name)
    y = solve_triangular(low, b, lower=True)
    return solve_triangular(low.T, y, lower=False)
