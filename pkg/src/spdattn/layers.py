"""Network layers: feature extraction, the Euclidean/SPD bridges, and
the classification head.

These are the value-level (ndarray in, ndarray out) forms.  The model
builds the same computations on a :class:`~spdattn.autodiff.Tape`; the
nontrivial kernels (convolution, epoch covariances) are routed through
the tape ops here as well so the two paths cannot drift apart.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import ConfigError, ShapeError
from .linalg import eigh_stack, mat_log_spd, regularize_spd

_LOG_CLAMP = 1e-12


@dataclass
class ConvSpec:
    """Shape of the two-layer convolutional feature extractor.

    The first layer is a full-height spatial filter bank (kernel
    C x 1), the second a temporal filter bank (kernel 1 x k applied
    across all spatial outputs).  Both layers are linear: no bias, no
    pooling, no nonlinearity, so second-order statistics are taken on
    an undistorted linear image of the signal.
    """

    spatial_filters: int
    temporal_filters: int
    temporal_kernel: int
    stride: int = 1

    def __post_init__(self):
        for field in ("spatial_filters", "temporal_filters", "temporal_kernel", "stride"):
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"ConvSpec.{field} must be positive")

    def weight_shapes(self, channels):
        """Shapes of (spatial, temporal) weight tensors for C input channels."""
        return (
            (self.spatial_filters, channels),
            (self.temporal_filters, self.spatial_filters, self.temporal_kernel),
        )

    def out_length(self, timepoints):
        """Feature-map length T' for a trial of the given duration."""
        if self.temporal_kernel > timepoints:
            raise ShapeError(
                f"temporal kernel {self.temporal_kernel} exceeds trial length {timepoints}"
            )
        return (timepoints - self.temporal_kernel) // self.stride + 1


def feature_extract(trial, w_spatial, w_temporal, stride=1):
    """Two-layer linear feature extraction.

    Parameters
    ----------
    trial : ndarray, shape (C, T)
    w_spatial : ndarray, shape (S, C)
        Full-height spatial filters.
    w_temporal : ndarray, shape (F, S, k)
        Temporal filters spanning all S spatial outputs.
    stride : int
        Temporal stride.

    Returns
    -------
    ndarray, shape (F, T')
        ``T' = (T - k)//stride + 1``.
    """
    trial = np.asarray(trial, dtype=np.float64)
    w_spatial = np.asarray(w_spatial, dtype=np.float64)
    w_temporal = np.asarray(w_temporal, dtype=np.float64)
    if trial.ndim != 2:
        raise ShapeError(f"trial must be 2-D (C, T), got {trial.shape}")
    if w_spatial.ndim != 2 or w_spatial.shape[1] != trial.shape[0]:
        raise ShapeError(
            f"spatial weights {w_spatial.shape} do not match {trial.shape[0]} channels"
        )
    if w_temporal.ndim != 3 or w_temporal.shape[1] != w_spatial.shape[0]:
        raise ShapeError(
            f"temporal weights {w_temporal.shape} do not match "
            f"{w_spatial.shape[0]} spatial outputs"
        )
    t = Tape()
    h = t.matmul(t.leaf(w_spatial), t.leaf(trial))
    fm = t.temporal_conv(h, t.leaf(w_temporal), stride)
    return fm.value


def e2r(fm, m, eps=1e-5):
    """Euclidean-to-SPD bridge: epoch covariances of a feature map.

    Splits the feature map into ``m`` equal contiguous epochs (the
    trailing remainder is dropped), row-centers each epoch, forms the
    sample covariance with denominator L-1, then trace-normalizes and
    shifts by ``eps * I``.

    Parameters
    ----------
    fm : ndarray, shape (d, T')
    m : int
        Epoch count, >= 1; epochs must hold at least 2 samples.
    eps : float
        Diagonal regularization.

    Returns
    -------
    ndarray, shape (m, d, d)
        Stack of SPD matrices.
    """
    fm = np.asarray(fm, dtype=np.float64)
    if fm.ndim != 2:
        raise ShapeError(f"feature map must be 2-D, got {fm.shape}")
    if m < 1:
        raise ShapeError(f"epoch count must be >= 1, got {m}")
    t = Tape()
    scm = t.epoch_scm(t.leaf(fm), m)
    return t.trace_norm(scm, eps).value


def bimap(x, w):
    """Bilinear dimension reduction ``W X W^T``.

    Positive definiteness is preserved whenever ``W`` has full row
    rank, which holds for the row-orthonormal attention weights.
    Accepts a single matrix or a stack.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"bimap shapes incompatible: X {x.shape}, W {w.shape}")
    return np.einsum("ud,...de,ve->...uv", w, x, w)


def reeig(p, eps_re=1e-4):
    """Eigenvalue clamp ``U diag(max(sigma, eps_re)) U^T``.

    Identity on matrices whose spectrum already clears the floor;
    guarantees the output spectrum is at least ``eps_re`` so the
    following logarithm is well conditioned.
    """
    p = np.asarray(p, dtype=np.float64)
    pair = eigh_stack(p)
    clamped = np.maximum(pair.values, eps_re)
    out = np.einsum("...ik,...k,...jk->...ij", pair.vectors, clamped, pair.vectors)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def triu_flatten(s):
    """Row-major upper-triangle flatten with sqrt(2) off-diagonal scaling.

    The scaling makes the map an isometry from symmetric matrices with
    the Frobenius norm to vectors with the 2-norm.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[-1]
    rows, cols = np.triu_indices(n)
    coef = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return s[..., rows, cols] * coef


def triu_unflatten(v):
    """Inverse of :func:`triu_flatten`."""
    v = np.asarray(v, dtype=np.float64)
    q = v.shape[-1]
    n = int(round((np.sqrt(8 * q + 1) - 1) / 2))
    if n * (n + 1) // 2 != q:
        raise ShapeError(f"vector length {q} is not a triangular number")
    rows, cols = np.triu_indices(n)
    coef = np.where(rows == cols, 1.0, np.sqrt(2.0))
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v / coef
    out[..., cols, rows] = v / coef
    return out


def r2e(p):
    """SPD-to-Euclidean bridge: matrix log plus isometric flatten.

    ``||r2e(P1) - r2e(P2)||_2`` equals the Log-Euclidean distance
    between ``P1`` and ``P2``.
    """
    return triu_flatten(mat_log_spd(p))


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def classify_head(vector, w, b):
    """Affine map plus softmax over classes.

    Parameters
    ----------
    vector : ndarray, shape (D,)
        Concatenated per-epoch features.
    w : ndarray, shape (classes, D)
    b : ndarray, shape (classes,)

    Returns
    -------
    ndarray
        Probability vector: positive entries summing to 1.
    """
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != vector.shape[0] or b.shape != (w.shape[0],):
        raise ShapeError(
            f"classifier shapes incompatible: W {w.shape}, b {b.shape}, "
            f"input {vector.shape}"
        )
    return softmax(w @ vector + b)


def cross_entropy(probs, label):
    """Negative log likelihood ``-ln(probs[label])``, clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < probs.shape[0]:
        raise IndexError(f"label {label} out of range for {probs.shape[0]} classes")
    return float(-np.log(max(float(probs[label]), _LOG_CLAMP)))


# regularize_spd is re-exported here because it is the e2r regularizer;
# see spdattn.linalg for the implementation.
__all__ = [
    "ConvSpec",
    "feature_extract",
    "e2r",
    "bimap",
    "reeig",
    "r2e",
    "triu_flatten",
    "triu_unflatten",
    "softmax",
    "classify_head",
    "cross_entropy",
    "regularize_spd",
]
