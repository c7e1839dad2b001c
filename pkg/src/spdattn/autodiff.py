"""Reverse-mode differentiation for the decoder's operation set.

This is a deliberately small tape engine, not a general autodiff
framework.  Operations are matrix-level (a whole covariance stack per
node) so the eigendecompositions computed in the forward pass stay
cached on the node and are reused by the spectral backward rules.

The backward rule for a spectral map ``f(P) = U diag(f(sigma)) U^T`` is
the Daleckii-Krein formula: the adjoint of the upstream gradient ``G``
is ``U (K o (U^T G U)) U^T`` where ``K`` is the matrix of divided
differences of ``f`` at the eigenvalues, with ``f'`` on (numerically)
coincident pairs.  Spectral inputs are symmetrized in the forward pass
and upstream gradients are symmetrized in backward, which makes every
spectral node a well-defined function on raw square arrays and lets
finite differences validate the rules entry by entry.

Stiefel-manifold utilities (tangent projection, QR retraction, the
descent step) live here too, since they consume the Euclidean gradients
the tape produces.
"""

import numpy as np

from .errors import (
    ContractError,
    DomainError,
    NotPositiveDefiniteError,
    RangeError,
    RankError,
    ShapeError,
)
from .linalg import EIG_FLOOR, EigenPair, eigh_stack

_EXP_MAX = float(np.log(np.finfo(np.float64).max))
_LOG_CLAMP = 1e-12


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def divided_differences(values, fvals, f_prime, rel_tol=1e-12):
    """Matrix of divided differences ``(f(s_i)-f(s_j))/(s_i-s_j)``.

    Entries whose eigenvalue gap is below ``rel_tol * max|s|`` (the
    diagonal always, and repeated eigenvalues) take the limit value
    ``f'`` at the pair midpoint.
    """
    d = values[..., :, None] - values[..., None, :]
    num = fvals[..., :, None] - fvals[..., None, :]
    tol = rel_tol * np.max(np.abs(values), axis=-1)[..., None, None]
    close = np.abs(d) <= tol
    mid = 0.5 * (values[..., :, None] + values[..., None, :])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        limit = f_prime(mid)
        quotient = num / np.where(close, 1.0, d)
    return np.where(close, limit, quotient)


def vjp_spectral(eig, f, f_prime, upstream):
    """Adjoint of a spectral matrix map through its factorization.

    Parameters
    ----------
    eig : EigenPair
        Factorization of the *input* of ``P -> U f(Sigma) U^T`` from
        the forward pass.
    f, f_prime : callable
        The scalar function and its derivative, vectorized over arrays.
    upstream : ndarray
        Gradient with respect to the map's output; symmetrized here.

    Returns
    -------
    ndarray
        Symmetric gradient with respect to the input matrix.

    Raises
    ------
    DomainError
        If ``f`` is undefined (non-finite) at some eigenvalue.
    """
    u, sigma = eig.vectors, eig.values
    with np.errstate(divide="ignore", invalid="ignore"):
        fvals = f(sigma)
    if not np.all(np.isfinite(fvals)):
        raise DomainError("spectral function undefined at some eigenvalue")
    k = divided_differences(sigma, fvals, f_prime)
    inner = np.einsum("...ji,...jk,...kl->...il", u, _sym(upstream), u)
    out = np.einsum("...ij,...jk,...lk->...il", u, k * inner, u)
    return _sym(out)


class Node:
    """One value in the computation graph.

    Attributes
    ----------
    value : ndarray or float
        Forward result.
    op : str
        Operation tag (``"leaf"`` for inputs and parameters).
    parents : tuple of Node
        Direct inputs, all created earlier on the same tape.
    eig : EigenPair or None
        For spectral ops, the factorization of the node's value.
    name : str or None
        Optional label on leaves.
    """

    __slots__ = ("value", "op", "parents", "vjp", "eig", "index", "name")

    def __init__(self, value, op, parents, vjp, index, eig=None, name=None):
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.index = index
        self.eig = eig
        self.name = name

    def __repr__(self):
        shape = getattr(self.value, "shape", ())
        return f"Node#{self.index}({self.op}, shape={shape})"


class Tape:
    """Append-only operation record with a single reverse sweep.

    Nodes are stored in creation order, which is a topological order by
    construction (an op can only consume already-created nodes), so
    :meth:`backward` is one pass over the list in reverse.
    """

    def __init__(self):
        self.nodes = []
        self.grads = None

    def _push(self, value, op, parents, vjp, eig=None, name=None):
        for p in parents:
            if p.index >= len(self.nodes) or self.nodes[p.index] is not p:
                raise ContractError("parent node does not belong to this tape")
        node = Node(value, op, tuple(parents), vjp, len(self.nodes), eig, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None):
        """Register an input or parameter array."""
        value = np.asarray(value, dtype=np.float64)
        return self._push(value, "leaf", (), None, name=name)

    # -- generic linear algebra -------------------------------------------

    def matmul(self, a, b):
        value = a.value @ b.value
        at, bt = a.value, b.value

        def vjp(g):
            return g @ bt.T, at.T @ g

        return self._push(value, "matmul", (a, b), vjp)

    def temporal_conv(self, x, w, stride=1):
        """Correlation of each weight kernel with the signal rows.

        ``x`` is (channels, T), ``w`` is (filters, channels, k); output
        is (filters, T') with ``T' = (T - k)//stride + 1``.
        """
        xv, wv = x.value, w.value
        k = wv.shape[-1]
        if k > xv.shape[-1]:
            raise ShapeError(
                f"temporal kernel {k} longer than signal {xv.shape[-1]}"
            )
        windows = np.lib.stride_tricks.sliding_window_view(xv, k, axis=1)
        windows = windows[:, ::stride, :]
        value = np.einsum("fsk,stk->ft", wv, windows)
        t_out = value.shape[-1]

        def vjp(g):
            dw = np.einsum("ft,stk->fsk", g, windows)
            dx = np.zeros_like(xv)
            cols = stride * np.arange(t_out)
            for tau in range(k):
                dx[:, cols + tau] += np.einsum("ft,fs->st", g, wv[:, :, tau])
            return dx, dw

        return self._push(value, "temporal_conv", (x, w), vjp)

    def epoch_scm(self, x, m):
        """Split (d, T') into m equal contiguous epochs and take SCMs.

        The trailing ``T' mod m`` samples are dropped.  Each epoch is
        row-centered; SCM = Z Z^T / (L - 1).
        """
        xv = x.value
        d, t = xv.shape
        length = t // m
        if length < 2:
            raise ShapeError(
                f"epochs of length {length} from T'={t}, m={m}; need >= 2"
            )
        used = m * length
        z = xv[:, :used].reshape(d, m, length).transpose(1, 0, 2)
        z = z - z.mean(axis=-1, keepdims=True)
        value = np.einsum("mal,mbl->mab", z, z) / (length - 1)

        def vjp(g):
            dz = np.einsum("mab,mbl->mal", g + np.swapaxes(g, -1, -2), z)
            dz /= length - 1
            dz -= dz.mean(axis=-1, keepdims=True)
            dx = np.zeros_like(xv)
            dx[:, :used] = dz.transpose(1, 0, 2).reshape(d, used)
            return (dx,)

        return self._push(value, "epoch_scm", (x,), vjp)

    def trace_norm(self, x, eps):
        """Per-matrix ``X/trace(X) + eps I`` with the degenerate guard."""
        xv = x.value
        n = xv.shape[-1]
        traces = np.trace(xv, axis1=-2, axis2=-1)
        degenerate = traces <= 1e-12
        safe_t = np.where(degenerate, 1.0, traces)
        eye = np.eye(n)
        value = xv / safe_t[..., None, None] + eps * eye
        value = np.where(degenerate[..., None, None], eps * eye, value)

        def vjp(g):
            # d/dX [X/t + eps I] applied to G: G/t - (<G, X>/t^2) I,
            # where the trace dependence lands on the diagonal.
            inner = np.einsum("...ab,...ab->...", g, xv)
            dx = g / safe_t[..., None, None]
            dx -= (inner / safe_t**2)[..., None, None] * eye
            dx = np.where(degenerate[..., None, None], 0.0, dx)
            return (dx,)

        return self._push(value, "trace_norm", (x,), vjp)

    def bimap(self, xs, w):
        """Congruence ``W X_i W^T`` over a stack of matrices."""
        xv, wv = xs.value, w.value
        if xv.ndim != 3 or xv.shape[-1] != xv.shape[-2]:
            raise ShapeError(f"bimap expects an (m, d, d) stack, got {xv.shape}")
        if wv.shape[-1] != xv.shape[-1]:
            raise ShapeError(
                f"bimap: weight columns {wv.shape[-1]} != matrix dim {xv.shape[-1]}"
            )
        wx = np.einsum("ud,mde->mue", wv, xv)
        value = np.einsum("mue,ve->muv", wx, wv)

        def vjp(g):
            # dX_i = W^T G_i W; dW = sum_i (G_i W X_i^T + G_i^T W X_i),
            # valid for general X_i (symmetry not assumed).
            dxs = np.einsum("ua,muv,vb->mab", wv, g, wv)
            gw = np.einsum("muv,vd->mud", g, wv)
            gtw = np.einsum("mvu,vd->mud", g, wv)
            dw = np.einsum("mud,mad->ua", gw, xv)
            dw += np.einsum("mud,mda->ua", gtw, xv)
            return dxs, dw

        return self._push(value, "bimap", (xs, w), vjp)

    # -- spectral stack ops ------------------------------------------------

    def _spectral(self, x, op, f, f_prime, domain_check=None):
        pair = eigh_stack(x.value)
        u, sigma = pair.vectors, pair.values
        if domain_check is not None:
            domain_check(sigma)
        fvals = f(sigma)
        value = _sym(np.einsum("...ik,...k,...jk->...ij", u, fvals, u))
        k = divided_differences(sigma, fvals, f_prime)

        def vjp(g):
            inner = np.einsum("...ji,...jk,...kl->...il", u, _sym(g), u)
            dx = np.einsum("...ij,...jk,...lk->...il", u, k * inner, u)
            return (_sym(dx),)

        return self._push(value, op, (x,), vjp, eig=EigenPair(u, fvals))

    def spd_log(self, x):
        """Matrix logarithm of each matrix in an SPD stack."""

        def check(sigma):
            smallest = float(np.min(sigma))
            if smallest <= EIG_FLOOR:
                raise NotPositiveDefiniteError(
                    f"matrix log on tape requires eigenvalues > {EIG_FLOOR:g}, "
                    f"smallest is {smallest:.6g}"
                )

        return self._spectral(x, "spd_log", np.log, lambda s: 1.0 / s, check)

    def sym_exp(self, x):
        """Matrix exponential of each matrix in a symmetric stack."""

        def check(sigma):
            largest = float(np.max(sigma))
            if largest > _EXP_MAX:
                raise RangeError(
                    f"matrix exp on tape overflows: max eigenvalue {largest:.6g}"
                )

        return self._spectral(x, "sym_exp", np.exp, np.exp, check)

    def eig_clamp(self, x, floor):
        """Eigenvalue clamp ``max(sigma, floor)`` (the ReEig nonlinearity)."""
        return self._spectral(
            x,
            "eig_clamp",
            lambda s: np.maximum(s, floor),
            lambda s: (s > floor).astype(np.float64),
        )

    # -- attention plumbing -------------------------------------------------

    def pairwise_dist(self, a, b):
        """Frobenius distances between all pairs of two matrix stacks."""
        av, bv = a.value, b.value
        diff = av[:, None, :, :] - bv[None, :, :, :]
        value = np.sqrt(np.einsum("ijab,ijab->ij", diff, diff))

        def vjp(g):
            scale = np.where(value > 0.0, g / np.where(value > 0.0, value, 1.0), 0.0)
            da = np.einsum("ij,ijab->iab", scale, diff)
            db = -np.einsum("ij,ijab->jab", scale, diff)
            return da, db

        return self._push(value, "pairwise_dist", (a, b), vjp)

    def dist_to_sim(self, d):
        """Elementwise ``1 / (1 + ln(1 + d))`` on non-negative distances."""
        dv = d.value
        value = 1.0 / (1.0 + np.log1p(dv))

        def vjp(g):
            return (-g * value * value / (1.0 + dv),)

        return self._push(value, "dist_to_sim", (d,), vjp)

    def row_softmax(self, a):
        av = a.value
        shifted = av - av.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            dot = np.sum(g * value, axis=-1, keepdims=True)
            return (value * (g - dot),)

        return self._push(value, "row_softmax", (a,), vjp)

    def mix(self, p, stack):
        """Weighted sums of a matrix stack: ``out_i = sum_l p_il M_l``."""
        pv, sv = p.value, stack.value
        value = np.einsum("il,lab->iab", pv, sv)

        def vjp(g):
            dp = np.einsum("iab,lab->il", g, sv)
            ds = np.einsum("il,iab->lab", pv, g)
            return dp, ds

        return self._push(value, "mix", (p, stack), vjp)

    # -- readout -------------------------------------------------------------

    def triu_flatten(self, x):
        """Row-major upper-triangle flatten with sqrt(2) off-diagonals.

        The scaling makes the flatten an isometry: the 2-norm of the
        difference of two flattened logs equals the Log-Euclidean
        distance of the originals.
        """
        xv = x.value
        n = xv.shape[-1]
        rows, cols = np.triu_indices(n)
        coef = np.where(rows == cols, 1.0, np.sqrt(2.0))
        value = xv[..., rows, cols] * coef

        def vjp(g):
            dx = np.zeros_like(xv)
            dx[..., rows, cols] = g * coef
            return (dx,)

        return self._push(value, "triu_flatten", (x,), vjp)

    def reshape(self, x, shape):
        xv = x.value
        value = xv.reshape(shape)

        def vjp(g):
            return (np.asarray(g).reshape(xv.shape),)

        return self._push(value, "reshape", (x,), vjp)

    def affine(self, w, x, b):
        value = w.value @ x.value + b.value
        wv, xv = w.value, x.value

        def vjp(g):
            return np.outer(g, xv), wv.T @ g, g.copy()

        return self._push(value, "affine", (w, x, b), vjp)

    def softmax(self, z):
        zv = z.value
        e = np.exp(zv - zv.max())
        value = e / e.sum()

        def vjp(g):
            dot = float(np.dot(g, value))
            return (value * (g - dot),)

        return self._push(value, "softmax", (z,), vjp)

    def nll(self, p, label):
        """Clamped negative log likelihood ``-ln(max(p[label], 1e-12))``."""
        pv = p.value
        label = int(label)
        if not 0 <= label < pv.shape[0]:
            raise IndexError(f"label {label} out of range for {pv.shape[0]} classes")
        clamped = max(float(pv[label]), _LOG_CLAMP)
        value = -np.log(clamped)

        def vjp(g):
            dp = np.zeros_like(pv)
            if pv[label] > _LOG_CLAMP:
                dp[label] = -g / pv[label]
            return (dp,)

        return self._push(float(value), "nll", (p,), vjp)

    def pick(self, v, index):
        """Scalar extraction ``v[index]`` (used for saliency logits)."""
        vv = v.value
        index = int(index)
        if not 0 <= index < vv.shape[0]:
            raise IndexError(f"index {index} out of range for length {vv.shape[0]}")

        def vjp(g):
            dv = np.zeros_like(vv)
            dv[index] = g
            return (dv,)

        return self._push(float(vv[index]), "pick", (v,), vjp)

    def trace(self, x):
        xv = x.value
        n = xv.shape[-1]

        def vjp(g):
            return (g * np.eye(n),)

        return self._push(float(np.trace(xv)), "trace", (x,), vjp)

    def fro_norm_sq(self, x):
        xv = x.value

        def vjp(g):
            return (2.0 * g * xv,)

        return self._push(float(np.sum(xv * xv)), "fro_norm_sq", (x,), vjp)

    # -- reverse sweep ---------------------------------------------------------

    def backward(self, loss):
        """Reverse sweep from a scalar node.

        Returns a dict mapping every leaf node to its adjoint (zeros
        for leaves the loss does not depend on).  The sweep runs in
        reverse creation order, visiting each node once, so results are
        bitwise deterministic for a fixed tape.
        """
        if loss.index >= len(self.nodes) or self.nodes[loss.index] is not loss:
            raise ContractError("loss node does not belong to this tape")
        if np.ndim(loss.value) != 0:
            raise ContractError(
                f"backward requires a scalar loss, got shape {np.shape(loss.value)}"
            )
        grads = [None] * len(self.nodes)
        grads[loss.index] = np.float64(1.0)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        self.grads = grads
        out = {}
        for node in self.nodes:
            if node.op == "leaf":
                g = grads[node.index]
                out[node] = np.zeros_like(node.value) if g is None else g
        return out


def backward(tape, loss):
    """Module-level alias for :meth:`Tape.backward`."""
    return tape.backward(loss)


# -- Stiefel manifold -----------------------------------------------------------


def stiefel_tangent(w, g):
    """Project a Euclidean gradient onto the tangent space at ``W``.

    ``W`` has orthonormal rows, so the normal space at ``W`` is
    ``{S W : S symmetric}`` and the orthogonal projection removes
    ``sym(G W^T) W``.  The result ``G~`` satisfies tangency
    ``G~ W^T + W G~^T = 0`` and the projection is idempotent: vertical
    rotations ``(antisymmetric) W`` and directions whose rows are
    orthogonal to the row space of ``W`` pass through unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape:
        raise ShapeError(f"gradient shape {g.shape} != parameter shape {w.shape}")
    gwt = g @ w.T
    return g - (0.5 * (gwt + gwt.T)) @ w


def retract_qr(w_raw):
    """Map a full-row-rank matrix back onto the Stiefel manifold.

    QR-factorizes the transpose with the positive-diagonal-R sign
    convention, so an already row-orthonormal input is returned
    unchanged and the map is deterministic.
    """
    w_raw = np.asarray(w_raw, dtype=np.float64)
    if w_raw.ndim != 2 or w_raw.shape[0] > w_raw.shape[1]:
        raise ShapeError(
            f"expected a wide matrix (rows <= columns), got {w_raw.shape}"
        )
    q, r = np.linalg.qr(w_raw.T)
    diag = np.diagonal(r)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(r))))
    if np.any(np.abs(diag) < tol):
        raise RankError(
            f"retraction input is rank deficient (|R_ii| min {np.min(np.abs(diag)):.3e})"
        )
    signs = np.where(diag < 0.0, -1.0, 1.0)
    return (q * signs).T


def stiefel_step(w, g, lr):
    """One Riemannian descent step: retract ``W - lr * tangent(G)``."""
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    if lr == 0:
        # Retraction of an already-orthonormal W is exact only up to
        # rounding; a zero step must leave W bitwise unchanged.
        return np.array(w, dtype=np.float64)
    return retract_qr(w - lr * stiefel_tangent(w, g))


def random_stiefel(d_u, d_c, rng):
    """Random row-orthonormal matrix: Gaussian draw plus retraction."""
    if d_u > d_c:
        raise ShapeError(f"need d_u <= d_c, got {d_u} > {d_c}")
    return retract_qr(rng.standard_normal((d_u, d_c)))
