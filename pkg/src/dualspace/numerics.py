"""Dense linear-algebra kernel: covariances, whitening and closed-form CCA.

All routines work on 2-D float64 arrays with samples in rows.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSampleError,
    DimensionMismatchError,
    NonFiniteError,
    SingularMatrixError,
    ValidationError,
)

DEFAULT_RIDGE = 1e-4
SINGULAR_EIGENVALUE = 1e-12


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array (1-D input becomes a column)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return m


def _symmetrize(m):
    return 0.5 * (m + m.T)


def covariance(x, y, center=True):
    """Sample cross-covariance ``X̄ᵀȲ / (n - 1)``.

    Parameters
    ----------
    x : array (n, dx)
    y : array (n, dy)
    center : bool
        Subtract column means before forming the product.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatchError(
            f"row counts differ: x has {n}, y has {y.shape[0]}"
        )
    if n < 2:
        raise DegenerateSampleError(f"covariance needs at least 2 samples, got {n}")
    if center:
        x = x - x.mean(axis=0)
        y = y - y.mean(axis=0)
    return x.T @ y / (n - 1)


def inv_sqrt_sym(m, ridge=0.0):
    """Inverse square root of a symmetric PSD matrix, ``(m + ridge·I)^(-1/2)``."""
    m = as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got {m.shape}")
    if ridge < 0:
        raise ValidationError(f"ridge must be non-negative, got {ridge}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-10):
        raise ValidationError("matrix is not symmetric within 1e-10")
    vals, vecs = np.linalg.eigh(_symmetrize(m) + ridge * np.eye(m.shape[0]))
    smallest = vals[0]
    if smallest <= SINGULAR_EIGENVALUE:
        raise SingularMatrixError(
            f"smallest eigenvalue {smallest:.3e} is not above {SINGULAR_EIGENVALUE:g}; "
            "increase the ridge",
            eigenvalue=float(smallest),
        )
    return _symmetrize((vecs / np.sqrt(vals)) @ vecs.T)


@dataclass(frozen=True)
class CcaSolution:
    """Canonical directions for two views.

    ``wx`` is (dx, k) and ``wy`` is (dy, k); column ``i`` of each pair spans
    the ``i``-th canonical variate, with ``correlations[i]`` its canonical
    correlation (descending).
    """

    wx: np.ndarray
    wy: np.ndarray
    correlations: np.ndarray

    @property
    def k(self):
        return self.wx.shape[1]


def _whitened_cross(x, y, ridge):
    """Centered views, whiteners and ``T = Σxx^-1/2 Σxy Σyy^-1/2``."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    sxx = xc.T @ xc / (n - 1)
    syy = yc.T @ yc / (n - 1)
    sxy = xc.T @ yc / (n - 1)
    rx = inv_sqrt_sym(_symmetrize(sxx), ridge)
    ry = inv_sqrt_sym(_symmetrize(syy), ridge)
    return xc, yc, rx, ry, rx @ sxy @ ry


def _check_pair(x, y):
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(
            f"row counts differ: x has {x.shape[0]}, y has {y.shape[0]}"
        )
    if x.shape[0] < 2:
        raise DegenerateSampleError(f"need at least 2 samples, got {x.shape[0]}")
    return x, y


def cca_from_covariances(sxx, syy, sxy, k=None, ridge=DEFAULT_RIDGE):
    """Canonical directions from precomputed auto- and cross-covariances."""
    dx, dy = sxy.shape
    kmax = min(dx, dy)
    if k is None:
        k = kmax
    if not 1 <= k <= kmax:
        raise ValidationError(f"k must lie in [1, {kmax}], got {k}")
    rx = inv_sqrt_sym(_symmetrize(sxx), ridge)
    ry = inv_sqrt_sym(_symmetrize(syy), ridge)
    u, s, vt = np.linalg.svd(rx @ sxy @ ry, full_matrices=False)
    return CcaSolution(
        wx=rx @ u[:, :k],
        wy=ry @ vt[:k].T,
        correlations=np.clip(s[:k], 0.0, 1.0),
    )


def cca_solve(x, y, k=None, ridge=DEFAULT_RIDGE):
    """Fit linear CCA by SVD of the whitened cross-covariance.

    Parameters
    ----------
    x : array (n, dx)
    y : array (n, dy)
    k : int, optional
        Number of canonical pairs, at most ``min(dx, dy)``. Defaults to that
        maximum.
    ridge : float
        Added to the diagonal of both auto-covariances before whitening.

    Returns
    -------
    CcaSolution
    """
    x, y = _check_pair(x, y)
    n, dx = x.shape
    dy = y.shape[1]
    if n <= max(dx, dy):
        warnings.warn(
            f"only {n} samples for views of dimension {dx} and {dy}; "
            "canonical correlations will be inflated",
            RuntimeWarning,
            stacklevel=2,
        )
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    return cca_from_covariances(
        xc.T @ xc / (n - 1), yc.T @ yc / (n - 1), xc.T @ yc / (n - 1), k, ridge
    )


def total_correlation(x, y, ridge=DEFAULT_RIDGE):
    """Sum of all canonical correlations between two batches (trace norm of T)."""
    x, y = _check_pair(x, y)
    if x.shape[1] != y.shape[1]:
        raise DimensionMismatchError(
            f"views must have equal widths, got {x.shape[1]} and {y.shape[1]}"
        )
    _, _, _, _, t = _whitened_cross(x, y, ridge)
    return float(np.linalg.svd(t, compute_uv=False).sum())


def total_correlation_grad(x, y, ridge=DEFAULT_RIDGE):
    """Trace norm of T together with its gradients w.r.t. ``x`` and ``y``.

    With ``T = U D Vᵀ`` the derivative splits into a cross term through
    ``Σxy`` and a self term through each auto-covariance::

        ∂/∂X = (2 X̄ ∇xx + Ȳ ∇xyᵀ) / (n - 1)
        ∇xy  = Σxx^-1/2 U Vᵀ Σyy^-1/2
        ∇xx  = -½ Σxx^-1/2 U D Uᵀ Σxx^-1/2

    and symmetrically for ``Y``. Requires ``T`` to have full rank.
    """
    x, y = _check_pair(x, y)
    n = x.shape[0]
    xc, yc, rx, ry, t = _whitened_cross(x, y, ridge)
    u, s, vt = np.linalg.svd(t, full_matrices=False)
    v = vt.T
    d_xy = rx @ u @ vt @ ry
    d_xx = -0.5 * rx @ (u * s) @ u.T @ rx
    d_yy = -0.5 * ry @ (v * s) @ v.T @ ry
    gx = (2.0 * xc @ d_xx + yc @ d_xy.T) / (n - 1)
    gy = (2.0 * yc @ d_yy + xc @ d_xy) / (n - 1)
    return float(s.sum()), gx, gy
