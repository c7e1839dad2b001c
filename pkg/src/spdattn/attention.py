"""Attention over a sequence of SPD matrices.

Queries, keys, and values are bilinear images ``W X W^T`` of the input
epochs under three row-orthonormal weights.  Pairwise similarity is a
bounded, decreasing function of the Log-Euclidean distance; rows are
softmax-normalized; each output epoch is the weighted Log-Euclidean
mean of the values.  Everything stays on the SPD cone by construction.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import ShapeError

__all__ = ["AttentionMatrix", "attention_forward", "batched_qkv", "attention_scores"]


@dataclass
class AttentionMatrix:
    """Similarities before and after row normalization.

    Attributes
    ----------
    raw : ndarray, shape (m, m)
        Similarities in (0, 1]; entry (i, j) compares query i to key j.
    probabilities : ndarray, shape (m, m)
        Row-softmax of ``raw``; each row is a probability vector.
    """

    raw: np.ndarray
    probabilities: np.ndarray


def _check_inputs(xs, wq, wk, wv):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[-1] != xs.shape[-2] or xs.shape[0] < 1:
        raise ShapeError(f"expected an (m, d, d) SPD stack, got {xs.shape}")
    d = xs.shape[-1]
    mats = []
    for name, w in (("Wq", wq), ("Wk", wk), ("Wv", wv)):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != d:
            raise ShapeError(f"{name} shape {w.shape} does not match epoch dim {d}")
        mats.append(w)
    if not (mats[0].shape == mats[1].shape == mats[2].shape):
        raise ShapeError("Wq, Wk, Wv must share one shape")
    return xs, mats[0], mats[1], mats[2]


def attention_forward(xs, wq, wk, wv):
    """Forward pass of the manifold attention module.

    Parameters
    ----------
    xs : ndarray, shape (m, d, d)
        SPD epoch sequence.
    wq, wk, wv : ndarray, shape (d_u, d)
        Row-orthonormal projection weights.

    Returns
    -------
    out : ndarray, shape (m, d_u, d_u)
        Attended SPD epochs: ``out_i = Exp(sum_l a'_il Log(v_l))``.
    att : AttentionMatrix
        Raw similarities and row-stochastic probabilities, kept for
        interpretation exports.
    """
    xs, wq, wk, wv = _check_inputs(xs, wq, wk, wv)
    t = Tape()
    x = t.leaf(xs)
    log_q = t.spd_log(t.bimap(x, t.leaf(wq)))
    log_k = t.spd_log(t.bimap(x, t.leaf(wk)))
    log_v = t.spd_log(t.bimap(x, t.leaf(wv)))
    raw = t.dist_to_sim(t.pairwise_dist(log_q, log_k))
    prob = t.row_softmax(raw)
    out = t.sym_exp(t.mix(prob, log_v))
    return out.value, AttentionMatrix(raw.value, prob.value)


def batched_qkv(xs, wq, wk, wv):
    """All Q/K/V projections with one wide multiply per weight.

    The epochs are concatenated horizontally into a d x (m*d) block
    row; each weight multiplies the concatenation once, and the
    per-epoch right factors are applied to the reshaped result.  Agrees
    with the per-epoch loop to floating-point roundoff.

    Returns
    -------
    (q, k, v) : ndarrays, each (m, d_u, d_u)
    """
    xs, wq, wk, wv = _check_inputs(xs, wq, wk, wv)
    m, d, _ = xs.shape
    concat = xs.transpose(1, 0, 2).reshape(d, m * d)

    def project(w):
        wide = w @ concat
        wx = wide.reshape(-1, m, d).transpose(1, 0, 2)
        return np.einsum("mud,vd->muv", wx, w)

    return project(wq), project(wk), project(wv)


def attention_scores(att):
    """Per-epoch relevance: column means of the probability matrix.

    Entry j is the average attention epoch j receives across queries;
    the scores are positive and sum to 1.
    """
    prob = np.asarray(att.probabilities, dtype=np.float64)
    return prob.mean(axis=0)
