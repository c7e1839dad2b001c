"""Spectral linear algebra for symmetric and SPD matrices.

All heavy lifting goes through the symmetric eigendecomposition.  Matrix
functions (exp, log, powers) are realized as ``U diag(f(sigma)) U^T``,
which keeps them exact on the symmetric cone and gives the backward
rules in :mod:`spdattn.autodiff` access to the cached factorization.

Conventions
-----------
* Eigenvalues are returned in ascending order.
* Eigenvector gauge is fixed by making the first nonzero entry of each
  eigenvector positive, so factorizations are reproducible.
* Everything is computed in double precision.
"""

from typing import NamedTuple

import numpy as np

from .errors import (
    DomainError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    RangeError,
    ShapeError,
    SpectralError,
)

# Positivity threshold below which a matrix no longer counts as positive
# definite for the purpose of taking logarithms.
EIG_FLOOR = 1e-14

# Largest eigenvalue the matrix exponential can take without overflowing
# float64.
_EXP_MAX = float(np.log(np.finfo(np.float64).max))


class EigenPair(NamedTuple):
    """Eigendecomposition of a symmetric matrix (or stack of matrices).

    Attributes
    ----------
    vectors : ndarray, shape (..., n, n)
        Orthogonal matrix whose columns are eigenvectors.
    values : ndarray, shape (..., n)
        Eigenvalues in ascending order.
    """

    vectors: np.ndarray
    values: np.ndarray


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    return a


def _diagnostics(a):
    return {
        "dim": a.shape[-1],
        "frobenius_norm": float(np.sqrt(np.sum(a * a))),
        "max_abs": float(np.max(np.abs(a))) if a.size else 0.0,
        "finite": bool(np.all(np.isfinite(a))),
    }


def symmetrize(a):
    """Return the symmetric part ``(A + A^T) / 2``.

    Parameters
    ----------
    a : ndarray, shape (..., n, n)
        Square matrix or stack of square matrices.

    Returns
    -------
    ndarray
        Symmetric part, exactly equal to its own transpose and
        idempotent on symmetric input.
    """
    a = _as_square(a)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def is_symmetric(a, tol=1e-12):
    """Whether ``A`` equals ``A^T`` within ``tol`` (scaled for large entries)."""
    a = _as_square(a)
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2))) if a.size else 0.0
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    return asym <= tol * scale


def _fix_gauge(vectors):
    # Make the first entry of each eigenvector whose magnitude clears a
    # relative threshold positive; columns of an orthogonal matrix cannot
    # be all-zero, so the leading entry is well defined.
    absv = np.abs(vectors)
    lead_tol = 1e-12 * absv.max(axis=-2, keepdims=True)
    first = np.argmax(absv > lead_tol, axis=-2)
    lead = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    signs = np.where(lead < 0.0, -1.0, 1.0)
    return vectors * signs


def sym_eig(s, tol=1e-12):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    s : ndarray, shape (n, n)
        Symmetric matrix with finite entries.
    tol : float
        Maximum acceptable asymmetry, scaled by the largest entry for
        badly scaled input.

    Returns
    -------
    EigenPair
        Ascending eigenvalues and gauge-fixed orthonormal eigenvectors,
        satisfying ``U diag(sigma) U^T == S`` to working precision.

    Raises
    ------
    NotSymmetricError
        If the input is not symmetric within ``tol``.
    SpectralError
        If the eigensolver does not converge; carries condition
        diagnostics of the offending matrix.
    """
    s = _as_square(s, "sym_eig input")
    if s.ndim != 2:
        raise ShapeError(f"sym_eig expects a single matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise SpectralError("sym_eig input has non-finite entries", _diagnostics(s))
    if not is_symmetric(s, tol):
        raise NotSymmetricError(
            "sym_eig input is not symmetric within tolerance "
            f"(max asymmetry {np.max(np.abs(s - s.T)):.3e})"
        )
    return eigh_stack(s)


def eigh_stack(s):
    """Eigendecomposition of a (stack of) matrices, symmetrized first.

    Skips the symmetry validation of :func:`sym_eig`; used on internal
    products that are symmetric up to rounding.
    """
    s = _as_square(s)
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    try:
        values, vectors = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(
            f"symmetric eigensolver failed to converge: {exc}", _diagnostics(s)
        ) from exc
    return EigenPair(_fix_gauge(vectors), values)


def reconstruct(pair):
    """Assemble ``U diag(sigma) U^T`` from an :class:`EigenPair`."""
    u, sigma = pair.vectors, pair.values
    return np.einsum("...ik,...k,...jk->...ij", u, sigma, u)


def _spectral_map(s, fun, name):
    pair = eigh_stack(s)
    fvals = fun(pair.values)
    out = np.einsum("...ik,...k,...jk->...ij", pair.vectors, fvals, pair.vectors)
    return 0.5 * (out + np.swapaxes(out, -1, -2)), pair, fvals


def mat_exp_sym(s):
    """Matrix exponential of a symmetric matrix.

    Parameters
    ----------
    s : ndarray, shape (n, n)
        Symmetric matrix.

    Returns
    -------
    ndarray
        SPD matrix with the same eigenvectors as ``s`` and eigenvalues
        ``exp(sigma_i)``.

    Raises
    ------
    RangeError
        If the largest eigenvalue would overflow double precision.
    """
    s = _as_square(s, "mat_exp_sym input")
    pair = eigh_stack(s)
    if np.max(pair.values, initial=-np.inf) > _EXP_MAX:
        raise RangeError(
            f"matrix exponential overflows: max eigenvalue {np.max(pair.values):.6g} "
            f"> {_EXP_MAX:.6g}"
        )
    fvals = np.exp(pair.values)
    out = np.einsum("...ik,...k,...jk->...ij", pair.vectors, fvals, pair.vectors)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def mat_log_spd(p):
    """Principal matrix logarithm of an SPD matrix.

    Parameters
    ----------
    p : ndarray, shape (n, n)
        Symmetric positive definite matrix.

    Returns
    -------
    ndarray
        Symmetric matrix ``U diag(log sigma_i) U^T``;
        ``mat_exp_sym(mat_log_spd(P))`` recovers ``P``.

    Raises
    ------
    NotPositiveDefiniteError
        If the smallest eigenvalue is at or below ``EIG_FLOOR``
        (apply covariance regularization first).
    """
    p = _as_square(p, "mat_log_spd input")
    pair = eigh_stack(p)
    smallest = np.min(pair.values, initial=np.inf)
    if smallest <= EIG_FLOOR:
        raise NotPositiveDefiniteError(
            f"matrix log requires eigenvalues > {EIG_FLOOR:g}, "
            f"smallest is {smallest:.6g}"
        )
    fvals = np.log(pair.values)
    out = np.einsum("...ik,...k,...jk->...ij", pair.vectors, fvals, pair.vectors)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def mat_pow_spd(p, exponent):
    """Real matrix power ``P^t`` of an SPD matrix (used for square roots)."""
    p = _as_square(p, "mat_pow_spd input")
    pair = eigh_stack(p)
    smallest = np.min(pair.values, initial=np.inf)
    if smallest <= EIG_FLOOR:
        raise NotPositiveDefiniteError(
            f"matrix power requires a positive definite input, "
            f"smallest eigenvalue is {smallest:.6g}"
        )
    fvals = np.power(pair.values, exponent)
    out = np.einsum("...ik,...k,...jk->...ij", pair.vectors, fvals, pair.vectors)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def regularize_spd(c, eps):
    """Trace-normalize a covariance matrix and add a diagonal shift.

    Computes ``C / trace(C) + eps * I``.  A degenerate input whose trace
    is at most 1e-12 (a constant signal produces a zero SCM) maps to
    ``eps * I`` instead of dividing by ~0.

    Parameters
    ----------
    c : ndarray, shape (n, n)
        Symmetric positive semidefinite matrix.
    eps : float
        Diagonal shift, > 0.  The resulting smallest eigenvalue is at
        least ``eps`` up to rounding, so downstream logarithms are safe.

    Returns
    -------
    ndarray
        SPD matrix with trace ``1 + n * eps`` on the regular path.

    Raises
    ------
    NotPositiveDefiniteError
        If ``c`` has an eigenvalue below -1e-10.
    """
    c = _as_square(c, "regularize_spd input")
    if eps <= 0:
        raise DomainError(f"eps must be > 0, got {eps}")
    if not is_symmetric(c, 1e-10):
        raise NotSymmetricError("regularize_spd input is not symmetric")
    try:
        smallest = float(np.min(np.linalg.eigvalsh(0.5 * (c + c.T))))
    except np.linalg.LinAlgError as exc:
        raise SpectralError(
            f"eigensolver failed while validating PSD input: {exc}", _diagnostics(c)
        ) from exc
    if smallest < -1e-10:
        raise NotPositiveDefiniteError(
            f"regularize_spd input has eigenvalue {smallest:.6g} < -1e-10"
        )
    n = c.shape[-1]
    t = float(np.trace(c))
    if t <= 1e-12:
        return eps * np.eye(n)
    return c / t + eps * np.eye(n)


def is_spd(p, floor=0.0, tol=1e-10):
    """Whether ``p`` is symmetric with all eigenvalues above ``floor``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        return False
    if not is_symmetric(p, tol):
        return False
    return bool(np.min(np.linalg.eigvalsh(0.5 * (p + p.T))) > floor)
