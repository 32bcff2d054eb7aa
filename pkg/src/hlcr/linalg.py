"""
Dense SPD inverse maintenance.

The public functions are value-semantic: they never modify their inputs.
The ``*_inplace`` kernels are numba-compiled and used by the Gibbs sampler's
hot loop; they operate on one F x F block and cost O(F^2).
"""
import numpy as np
import scipy.linalg
from numba import njit

from hlcr.errors import DowndateSingular, NonPositiveDefinite

#: Downdates whose denominator ``1 - s x'Hx`` is at or below this value are refused.
DOWNDATE_EPS = 1e-10


def symmetrize(M):
    return 0.5 * (M + M.T)


def invert(D):
    """Inverse of a symmetric positive-definite matrix via Cholesky.

    Raises :class:`NonPositiveDefinite` when the factorization fails.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise NonPositiveDefinite(f"expected a square matrix, got shape {D.shape}")
    try:
        factor = scipy.linalg.cho_factor(D, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonPositiveDefinite(str(exc)) from exc
    H = scipy.linalg.cho_solve(factor, np.eye(D.shape[0]), check_finite=False)
    return symmetrize(H)


def is_spd(M):
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@njit(cache=True, nogil=True)
def _mat_vec(H, x, out):
    F = x.shape[0]
    for a in range(F):
        acc = 0.0
        for b in range(F):
            acc += H[a, b] * x[b]
        out[a] = acc


@njit(cache=True, nogil=True)
def _dot(u, v):
    acc = 0.0
    for a in range(u.shape[0]):
        acc += u[a] * v[a]
    return acc


@njit(cache=True, nogil=True)
def _apply_rank1(H, hx, coef):
    # H <- sym(H) - coef * hx hx'
    F = hx.shape[0]
    for a in range(F):
        for b in range(a, F):
            v = 0.5 * (H[a, b] + H[b, a]) - coef * hx[a] * hx[b]
            H[a, b] = v
            H[b, a] = v


@njit(cache=True, nogil=True)
def update_inplace(H, x, s, work):
    """H <- (H^-1 + s x x')^-1. ``work`` is an F-vector scratch buffer."""
    _mat_vec(H, x, work)
    q = _dot(x, work)
    _apply_rank1(H, work, s / (1.0 + s * q))


@njit(cache=True, nogil=True)
def downdate_inplace(H, x, s, eps, work):
    """H <- (H^-1 - s x x')^-1. Returns False, leaving H untouched, if singular."""
    _mat_vec(H, x, work)
    q = _dot(x, work)
    denom = 1.0 - s * q
    if denom <= eps:
        return False
    _apply_rank1(H, work, -s / denom)
    return True


def _check_args(H, x, s):
    H = np.array(H, dtype=np.float64, order="C", copy=True)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or x.shape != (H.shape[0],):
        raise ValueError(f"shape mismatch: H {H.shape}, x {x.shape}")
    if not s > 0:
        raise ValueError(f"scale must be positive, got {s}")
    return H, x


def rank1_update_inverse(H, x, s):
    """Return ``(D + s x x')^-1`` given ``H = D^-1`` (Woodbury, O(F^2))."""
    H, x = _check_args(H, x, s)
    update_inplace(H, x, float(s), np.empty_like(x))
    return H


def rank1_downdate_inverse(H, x, s, eps=DOWNDATE_EPS):
    """Return ``(D - s x x')^-1`` given ``H = D^-1``.

    Raises :class:`DowndateSingular` when ``1 - s x'Hx <= eps``; the caller is
    expected to rebuild from ``D`` with :func:`invert`.
    """
    H, x = _check_args(H, x, s)
    if not downdate_inplace(H, x, float(s), eps, np.empty_like(x)):
        q = float(x @ H @ x)
        raise DowndateSingular(f"1 - s*x'Hx = {1.0 - s * q:.3e} <= {eps:g}")
    return H
