import numpy as np
import pytest

from spdattn.attention import (
    attention_forward,
    attention_scores,
    batched_qkv,
)
from spdattn.autodiff import random_stiefel
from spdattn.errors import ShapeError
from spdattn.layers import bimap
from util import random_orthogonal, random_spd_stack


def make_weights(rng, d_u, d_c):
    return tuple(random_stiefel(d_u, d_c, rng) for _ in range(3))


class TestAttentionForward:
    def test_single_epoch_is_value_passthrough(self, rng):
        xs = random_spd_stack(rng, 1, 6)
        wq, wk, wv = make_weights(rng, 4, 6)
        out, att = attention_forward(xs, wq, wk, wv)
        np.testing.assert_array_equal(att.probabilities, [[1.0]])
        np.testing.assert_allclose(out[0], bimap(xs[0], wv), atol=1e-10)

    def test_identical_epochs_give_uniform_rows(self, rng):
        p = random_spd_stack(rng, 1, 5)[0]
        xs = np.stack([p, p, p])
        wq, wk, wv = make_weights(rng, 3, 5)
        out, att = attention_forward(xs, wq, wk, wv)
        np.testing.assert_allclose(att.probabilities, np.full((3, 3), 1 / 3), atol=1e-12)
        want = bimap(p, wv)
        for i in range(3):
            np.testing.assert_allclose(out[i], want, atol=1e-10)

    def test_two_epoch_diagonal_case_matches_scalar_computation(self):
        # diagonal inputs with axis-aligned weights stay diagonal, so the
        # whole attention block reduces to arithmetic on the eigenvalues
        xs = np.stack([np.diag([1.0, 1.0, 1.0]), np.diag([4.0, 1.0, 1.0])])
        w = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out, att = attention_forward(xs, w, w, w)

        d01 = np.log(4.0)  # Frobenius norm of diag(ln 4, 0)
        s = 1.0 / (1.0 + np.log1p(d01))
        raw = np.array([[1.0, s], [s, 1.0]])
        np.testing.assert_allclose(att.raw, raw, atol=1e-12)
        e = np.exp(raw)
        probs = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(att.probabilities, probs, atol=1e-12)

        logs = np.log(np.array([[1.0, 1.0], [4.0, 1.0]]))  # eigenvalues per epoch
        for i in range(2):
            want = np.diag(np.exp(probs[i] @ logs))
            np.testing.assert_allclose(out[i], want, atol=1e-12)

    def test_outputs_spd(self, rng):
        xs = random_spd_stack(rng, 5, 7, log_eig_lo=-2, log_eig_hi=2)
        wq, wk, wv = make_weights(rng, 4, 7)
        out, _ = attention_forward(xs, wq, wk, wv)
        for p in out:
            assert np.min(np.linalg.eigvalsh(p)) > 0
            assert np.max(np.abs(p - p.T)) < 1e-12

    def test_rows_stochastic(self, rng):
        xs = random_spd_stack(rng, 4, 6)
        wq, wk, wv = make_weights(rng, 3, 6)
        _, att = attention_forward(xs, wq, wk, wv)
        np.testing.assert_allclose(att.probabilities.sum(axis=1), np.ones(4), atol=1e-12)
        assert np.all(att.probabilities > 0)
        assert np.all(att.raw > 0) and np.all(att.raw <= 1)

    def test_probability_compression_bounds(self, rng):
        # raw similarities live in (0, 1], so softmax entries are pinned
        # inside (1/(1+(m-1)e), e/(e+m-1))
        m = 6
        xs = random_spd_stack(rng, m, 5, log_eig_lo=-3, log_eig_hi=3)
        wq, wk, wv = make_weights(rng, 4, 5)
        _, att = attention_forward(xs, wq, wk, wv)
        lo = 1.0 / (1.0 + (m - 1) * np.e)
        hi = np.e / (np.e + m - 1)
        assert np.all(att.probabilities > lo)
        assert np.all(att.probabilities < hi)

    def test_permutation_equivariance(self, rng):
        xs = random_spd_stack(rng, 4, 6)
        wq, wk, wv = make_weights(rng, 3, 6)
        out, att = attention_forward(xs, wq, wk, wv)
        perm = np.array([2, 0, 3, 1])
        out_p, att_p = attention_forward(xs[perm], wq, wk, wv)
        np.testing.assert_allclose(out_p, out[perm], atol=1e-10)
        np.testing.assert_allclose(
            att_p.probabilities, att.probabilities[np.ix_(perm, perm)], atol=1e-12)

    def test_block_rotation_equivariance(self, rng):
        # with W = [I 0], rotating inputs by diag(R1, R2) rotates queries,
        # keys, and values by R1 alone: the attention matrix is invariant
        # and outputs are conjugated by R1
        d, u, m = 6, 3, 4
        w = np.eye(d)[:u]
        xs = random_spd_stack(rng, m, d)
        r1 = random_orthogonal(rng, u)
        r2 = random_orthogonal(rng, d - u)
        r = np.block([[r1, np.zeros((u, d - u))], [np.zeros((d - u, u)), r2]])
        xs_rot = np.einsum("ab,mbc,dc->mad", r, xs, r)
        out, att = attention_forward(xs, w, w, w)
        out_rot, att_rot = attention_forward(xs_rot, w, w, w)
        np.testing.assert_allclose(att_rot.raw, att.raw, atol=1e-10)
        np.testing.assert_allclose(
            out_rot, np.einsum("ab,mbc,dc->mad", r1, out, r1), atol=1e-9)

    def test_shape_errors(self, rng):
        xs = random_spd_stack(rng, 3, 5)
        wq, wk, wv = make_weights(rng, 3, 5)
        with pytest.raises(ShapeError):
            attention_forward(xs[0], wq, wk, wv)
        with pytest.raises(ShapeError):
            attention_forward(xs, wq[:, :4], wk, wv)
        with pytest.raises(ShapeError):
            attention_forward(xs, wq, wk[:2], wv)


class TestBatchedQkv:
    def test_single_epoch_matches_bimap(self, rng):
        xs = random_spd_stack(rng, 1, 5)
        wq, wk, wv = make_weights(rng, 3, 5)
        q, k, v = batched_qkv(xs, wq, wk, wv)
        np.testing.assert_allclose(q[0], bimap(xs[0], wq), atol=1e-13)
        np.testing.assert_allclose(k[0], bimap(xs[0], wk), atol=1e-13)
        np.testing.assert_allclose(v[0], bimap(xs[0], wv), atol=1e-13)

    def test_matches_per_epoch_loop(self, rng):
        xs = random_spd_stack(rng, 5, 8)
        wq, wk, wv = make_weights(rng, 6, 8)
        q, k, v = batched_qkv(xs, wq, wk, wv)
        for i in range(5):
            np.testing.assert_allclose(q[i], wq @ xs[i] @ wq.T, atol=1e-12)
            np.testing.assert_allclose(k[i], wk @ xs[i] @ wk.T, atol=1e-12)
            np.testing.assert_allclose(v[i], wv @ xs[i] @ wv.T, atol=1e-12)

    def test_concatenation_layout(self, rng):
        # the single multiply runs over the horizontal concatenation
        # [X_1 | ... | X_m] of shape (d, m d)
        xs = random_spd_stack(rng, 4, 3)
        concat = np.concatenate(list(xs), axis=1)
        assert concat.shape == (3, 12)
        wq, wk, wv = make_weights(rng, 2, 3)
        wide = wq @ concat
        q, _, _ = batched_qkv(xs, wq, wk, wv)
        for i in range(4):
            np.testing.assert_allclose(
                q[i], wide[:, 3 * i: 3 * (i + 1)] @ wq.T, atol=1e-13)


class TestAttentionScores:
    def test_uniform(self):
        from spdattn.attention import AttentionMatrix

        att = AttentionMatrix(raw=np.ones((3, 3)), probabilities=np.full((3, 3), 1 / 3))
        np.testing.assert_allclose(attention_scores(att), np.full(3, 1 / 3))

    def test_column_mass(self):
        from spdattn.attention import AttentionMatrix

        probs = np.array([[1.0, 0.0], [1.0, 0.0]])
        att = AttentionMatrix(raw=probs, probabilities=probs)
        np.testing.assert_allclose(attention_scores(att), [1.0, 0.0])

    def test_sums_to_one(self, rng):
        xs = random_spd_stack(rng, 5, 6)
        wq, wk, wv = make_weights(rng, 4, 6)
        _, att = attention_forward(xs, wq, wk, wv)
        assert attention_scores(att).sum() == pytest.approx(1.0, abs=1e-12)
