"""Riemannian geometry on the SPD cone.

The production metric is Log-Euclidean (LEM): distances and weighted
means have closed forms built from matrix logarithms, which is what
makes the attention module cheap.  The affine-invariant metric (AIM)
and its iterative Karcher mean are included as verification oracles
only; nothing in the decoding pipeline calls them.
"""

import math

import numpy as np

from .errors import ConvergenceError, ShapeError, WeightError
from .linalg import mat_exp_sym, mat_log_spd, mat_pow_spd

__all__ = [
    "lem_distance",
    "weighted_le_mean",
    "similarity",
    "aim_distance",
    "karcher_mean_aim",
]


def _check_same_dim(p1, p2, op):
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise ShapeError(f"{op}: shapes {p1.shape} and {p2.shape} differ")
    return p1, p2


def check_weights(w, k):
    """Validate the convexity constraint: positive entries summing to 1."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != k:
        raise WeightError(f"expected {k} weights, got {w.size}")
    if np.any(w <= 0):
        raise WeightError("weights must be strictly positive")
    if abs(float(w.sum()) - 1.0) > 1e-10:
        raise WeightError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def lem_distance(p1, p2):
    """Log-Euclidean distance between two SPD matrices.

    Parameters
    ----------
    p1, p2 : ndarray, shape (n, n)
        SPD matrices of equal dimension.

    Returns
    -------
    float
        ``||Log(P1) - Log(P2)||_F``.  Symmetric in its arguments and
        zero exactly when the matrices coincide.
    """
    p1, p2 = _check_same_dim(p1, p2, "lem_distance")
    diff = mat_log_spd(p1) - mat_log_spd(p2)
    return float(np.linalg.norm(diff))


def weighted_le_mean(mats, weights=None):
    """Weighted Log-Euclidean mean ``Exp(sum_l w_l Log(P_l))``.

    Parameters
    ----------
    mats : sequence of ndarray, each (n, n)
        SPD matrices of a common dimension.
    weights : array_like of shape (k,), optional
        Convex weights (positive, summing to 1).  Defaults to equal
        weights.

    Returns
    -------
    ndarray
        The weighted mean, itself SPD.

    Raises
    ------
    ShapeError
        On an empty input list or mismatched dimensions.
    WeightError
        If the weights violate the convexity constraint.
    """
    mats = [np.asarray(p, dtype=np.float64) for p in mats]
    if len(mats) == 0:
        raise ShapeError("weighted_le_mean requires at least one matrix")
    dim = mats[0].shape
    for p in mats:
        if p.shape != dim:
            raise ShapeError(f"mixed dimensions in mean: {p.shape} vs {dim}")
    if weights is None:
        weights = np.full(len(mats), 1.0 / len(mats))
    w = check_weights(weights, len(mats))
    acc = np.zeros(dim)
    for wl, p in zip(w, mats):
        acc += wl * mat_log_spd(p)
    return mat_exp_sym(acc)


def similarity(q, k):
    """Similarity used by the attention module.

    ``sim(q, k) = 1 / (1 + ln(1 + d))`` with ``d`` the Log-Euclidean
    distance.  Maps [0, inf) into (0, 1], strictly decreasing in the
    distance, and equals 1 exactly at distance zero.
    """
    d = lem_distance(q, k)
    return 1.0 / (1.0 + math.log1p(d))


def aim_distance(p1, p2):
    """Affine-invariant distance (verification oracle).

    ``delta_R(P1, P2) = ||Log(P1^{-1/2} P2 P1^{-1/2})||_F``, equal to
    the root sum of squared logs of the eigenvalues of ``P1^{-1} P2``.
    Invariant under congruence ``P -> A^T P A`` for invertible ``A``.
    """
    p1, p2 = _check_same_dim(p1, p2, "aim_distance")
    inv_sqrt = mat_pow_spd(p1, -0.5)
    inner = inv_sqrt @ p2 @ inv_sqrt
    return float(np.linalg.norm(mat_log_spd(inner)))


def karcher_mean_aim(mats, tol=1e-9, max_iter=200):
    """Karcher (Frechet) mean under the affine-invariant metric.

    Fixed-point iteration starting at the arithmetic mean:
    ``B <- B^{1/2} Exp(mean_l Log(B^{-1/2} P_l B^{-1/2})) B^{1/2}``,
    stopped when the Frobenius norm of the tangent mean drops below
    ``tol``.  Serves as the oracle against which the closed-form
    Log-Euclidean mean is checked on commuting inputs.

    Parameters
    ----------
    mats : sequence of ndarray
        Non-empty list of SPD matrices with a common dimension.
    tol : float
        Convergence threshold on the tangent-mean norm.
    max_iter : int
        Iteration budget.

    Raises
    ------
    ConvergenceError
        If the budget is exhausted; carries the last residual.
    """
    mats = [np.asarray(p, dtype=np.float64) for p in mats]
    if len(mats) == 0:
        raise ShapeError("karcher_mean_aim requires at least one matrix")
    dim = mats[0].shape
    for p in mats:
        if p.shape != dim:
            raise ShapeError(f"mixed dimensions in mean: {p.shape} vs {dim}")
    b = np.mean(mats, axis=0)
    residual = math.inf
    for _ in range(max_iter):
        b_sqrt = mat_pow_spd(b, 0.5)
        b_isqrt = mat_pow_spd(b, -0.5)
        tangent = np.zeros(dim)
        for p in mats:
            tangent += mat_log_spd(b_isqrt @ p @ b_isqrt)
        tangent /= len(mats)
        residual = float(np.linalg.norm(tangent))
        if residual < tol:
            return b
        b = b_sqrt @ mat_exp_sym(tangent) @ b_sqrt
        b = 0.5 * (b + b.T)
    raise ConvergenceError(
        f"Karcher mean did not converge in {max_iter} iterations "
        f"(residual {residual:.3e})",
        iterations=max_iter,
        residual=residual,
    )
