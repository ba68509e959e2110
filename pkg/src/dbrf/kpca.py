"""Radial-basis kernel PCA for 2-d representation maps, plus the
group-separation score used to compare projections.

The eigensolver is a plain subspace iteration on the double-centered kernel:
adequate for the top two components of a (≤2000)² matrix and it fails loudly
with a residual diagnostic instead of silently returning garbage.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, NumericsError

MAX_ROWS = 2000


def median_bandwidth(x: np.ndarray) -> float:
    """Median pairwise Euclidean distance; the usual RBF default."""
    x = np.asarray(x, dtype=float)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    upper = d2[np.triu_indices(x.shape[0], k=1)]
    med = float(np.sqrt(np.median(upper)))
    return med if med > 0 else 1.0


def rbf_kernel(x: np.ndarray, bandwidth: float) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def double_center(k: np.ndarray) -> np.ndarray:
    row = k.mean(axis=0, keepdims=True)
    col = k.mean(axis=1, keepdims=True)
    return k - row - col + k.mean()


def top_eigenpairs(k: np.ndarray, n_components: int = 2, max_iter: int = 500,
                   tol: float = 1e-9, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs of a symmetric PSD matrix by subspace iteration.

    Returns (eigenvalues, eigenvectors) with unit-norm columns. Raises with
    the residual norm when the iteration has not settled after max_iter.
    """
    n = k.shape[0]
    if n_components > n:
        raise ConfigurationError("more components than rows")
    if max_iter < 1:
        raise ConfigurationError("max_iter must be at least 1")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n_components)))
    prev = np.zeros(n_components)
    vals = prev
    for _ in range(max_iter):
        z = k @ q
        q, r = np.linalg.qr(z)
        vals = np.abs(np.diag(r))
        if np.all(np.abs(vals - prev) <= tol * np.maximum(vals, 1.0)):
            break
        prev = vals
    else:
        resid = float(np.linalg.norm(k @ q - q * vals, ord="fro"))
        raise NumericsError(
            f"subspace iteration did not converge in {max_iter} iterations "
            f"(residual {resid:.3e}); the spectrum may have near-degenerate "
            f"leading eigenvalues")
    vals = np.einsum("ij,ij->j", q, k @ q)  # Rayleigh quotients
    order = np.argsort(vals)[::-1]
    return vals[order], q[:, order]


def project(x: np.ndarray, n_components: int = 2, bandwidth: float | None = None,
            max_rows: int = MAX_ROWS, seed: int = 0,
            max_iter: int = 500) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel-PCA coordinates for a (sub)sample of x.

    Returns (coords, eigenvalues, row_indices). Rows beyond max_rows are
    dropped by a seeded uniform subsample so projections are reproducible.
    Coordinates are eigenvectors scaled by sqrt(eigenvalue), giving each
    component its kernel-space variance scale; columns are zero-mean by
    construction of the centering.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigurationError("x must be (n, d) with n >= 2")
    if not np.isfinite(x).all():
        raise ConfigurationError("x contains non-finite values")
    n = x.shape[0]
    if n > max_rows:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=max_rows, replace=False))
    else:
        idx = np.arange(n)
    sub = x[idx]
    bw = median_bandwidth(sub) if bandwidth is None else float(bandwidth)
    if bw <= 0:
        raise ConfigurationError("bandwidth must be positive")
    k = double_center(rbf_kernel(sub, bw))
    vals, vecs = top_eigenpairs(k, n_components, max_iter=max_iter, seed=seed)
    coords = vecs * np.sqrt(np.maximum(vals, 0.0))
    return coords, vals, idx


def group_separation(coords: np.ndarray, group: np.ndarray) -> float:
    """Between-centroid distance over mean within-group RMS spread.

    Higher means the two groups sit further apart in the projection; a fair
    representation should score lower than a biased one.
    """
    coords = np.asarray(coords, dtype=float)
    group = np.asarray(group).astype(bool)
    if coords.shape[0] != group.shape[0]:
        raise ConfigurationError("coords and group must align")
    if group.all() or not group.any():
        raise ConfigurationError("need both groups present to measure separation")
    g1, g0 = coords[group], coords[~group]
    c1, c0 = g1.mean(axis=0), g0.mean(axis=0)
    spread1 = float(np.sqrt(np.mean(np.sum((g1 - c1) ** 2, axis=1))))
    spread0 = float(np.sqrt(np.mean(np.sum((g0 - c0) ** 2, axis=1))))
    denom = 0.5 * (spread1 + spread0)
    if denom == 0:
        raise NumericsError("degenerate projection: zero within-group spread")
    return float(np.linalg.norm(c1 - c0)) / denom
