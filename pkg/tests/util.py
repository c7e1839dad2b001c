"""Shared helpers for the test suite."""

import numpy as np


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_spd(rng, n, log_eig_lo=-1.0, log_eig_hi=1.0):
    """SPD matrix with log-eigenvalues uniform in the given range."""
    q = random_orthogonal(rng, n)
    eigs = np.exp(rng.uniform(log_eig_lo, log_eig_hi, size=n))
    return q @ np.diag(eigs) @ q.T


def random_spd_stack(rng, m, n, **kw):
    return np.stack([random_spd(rng, n, **kw) for _ in range(m)])


def random_symmetric(rng, n, eig_lo=-3.0, eig_hi=3.0):
    """Symmetric matrix with eigenvalues uniform in [eig_lo, eig_hi]."""
    q = random_orthogonal(rng, n)
    eigs = rng.uniform(eig_lo, eig_hi, size=n)
    return q @ np.diag(eigs) @ q.T


def rel_err(got, want):
    want = np.asarray(want, dtype=np.float64)
    got = np.asarray(got, dtype=np.float64)
    scale = max(np.linalg.norm(want.ravel()), np.linalg.norm(got.ravel()), 1e-12)
    return np.linalg.norm((got - want).ravel()) / scale
