import numpy as np
import pytest

from spdattn.errors import (
    ConvergenceError,
    NotPositiveDefiniteError,
    ShapeError,
    WeightError,
)
from spdattn.geometry import (
    aim_distance,
    check_weights,
    karcher_mean_aim,
    lem_distance,
    similarity,
    weighted_le_mean,
)
from spdattn.linalg import is_spd
from util import random_orthogonal, random_spd


class TestLemDistance:
    def test_self_distance_zero(self, rng):
        p = random_spd(rng, 5)
        assert lem_distance(p, p) == 0.0

    def test_log_scale_example(self):
        # diag(e, 1) maps to diag(1, 0) in log coordinates, distance 1 to I
        assert abs(lem_distance(np.diag([np.e, 1.0]), np.eye(2)) - 1.0) < 1e-12

    def test_symmetry(self, rng):
        p1, p2 = random_spd(rng, 6), random_spd(rng, 6)
        assert lem_distance(p1, p2) == pytest.approx(lem_distance(p2, p1), abs=1e-14)

    def test_positive_for_distinct(self, rng):
        p1, p2 = random_spd(rng, 4), random_spd(rng, 4)
        assert lem_distance(p1, p2) > 0

    def test_triangle_inequality(self, rng):
        for _ in range(20):
            a, b, c = (random_spd(rng, 5) for _ in range(3))
            assert lem_distance(a, c) <= lem_distance(a, b) + lem_distance(b, c) + 1e-12

    def test_inversion_invariance(self, rng):
        p1, p2 = random_spd(rng, 6), random_spd(rng, 6)
        d = lem_distance(p1, p2)
        d_inv = lem_distance(np.linalg.inv(p1), np.linalg.inv(p2))
        assert abs(d - d_inv) < 1e-8

    def test_orthogonal_congruence_invariance(self, rng):
        p1, p2 = random_spd(rng, 6), random_spd(rng, 6)
        q = random_orthogonal(rng, 6)
        d = lem_distance(p1, p2)
        d_rot = lem_distance(q @ p1 @ q.T, q @ p2 @ q.T)
        assert abs(d - d_rot) < 1e-8

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            lem_distance(random_spd(rng, 4), random_spd(rng, 5))


class TestWeightedLeMean:
    def test_single(self, rng):
        p = random_spd(rng, 5)
        np.testing.assert_allclose(weighted_le_mean([p], [1.0]), p, atol=1e-10)

    def test_one_hot(self, rng):
        mats = [random_spd(rng, 4) for _ in range(3)]
        got = weighted_le_mean(mats, [0.0 + 1e-30, 1.0 - 2e-30, 1e-30])
        np.testing.assert_allclose(got, mats[1], atol=1e-9)

    def test_commuting_pair(self):
        # logs average to diag(ln 2, ln 2), so the mean is 2 I
        got = weighted_le_mean([np.diag([1.0, 4.0]), np.diag([4.0, 1.0])])
        np.testing.assert_allclose(got, 2.0 * np.eye(2), atol=1e-12)

    def test_identical_inputs(self, rng):
        p = random_spd(rng, 6)
        got = weighted_le_mean([p, p, p, p])
        np.testing.assert_allclose(got, p, atol=1e-10)

    def test_permutation_invariance(self, rng):
        mats = [random_spd(rng, 5) for _ in range(4)]
        w = np.array([0.1, 0.2, 0.3, 0.4])
        got = weighted_le_mean(mats, w)
        perm = [2, 0, 3, 1]
        got_p = weighted_le_mean([mats[i] for i in perm], w[perm])
        np.testing.assert_allclose(got_p, got, atol=1e-10)

    def test_none_weights_are_uniform(self, rng):
        mats = [random_spd(rng, 4) for _ in range(3)]
        np.testing.assert_array_equal(
            weighted_le_mean(mats), weighted_le_mean(mats, np.full(3, 1.0 / 3.0))
        )

    def test_output_spd(self, rng):
        mats = [random_spd(rng, 5, log_eig_lo=-2, log_eig_hi=2) for _ in range(6)]
        assert is_spd(weighted_le_mean(mats))

    def test_empty(self):
        with pytest.raises(ShapeError):
            weighted_le_mean([])

    def test_bad_weights(self, rng):
        mats = [random_spd(rng, 3) for _ in range(2)]
        with pytest.raises(WeightError):
            weighted_le_mean(mats, [0.7, 0.2])
        with pytest.raises(WeightError):
            weighted_le_mean(mats, [1.5, -0.5])
        with pytest.raises(WeightError):
            weighted_le_mean(mats, [1.0])


def test_check_weights():
    check_weights(np.array([0.25, 0.75]), 2)
    with pytest.raises(WeightError):
        check_weights(np.array([0.5, 0.6]), 2)
    with pytest.raises(WeightError):
        check_weights(np.array([-0.1, 1.1]), 2)


class TestSimilarity:
    def test_identical_arguments(self, rng):
        p = random_spd(rng, 4)
        assert similarity(p, p) == 1.0

    def test_half_at_distance_e_minus_one(self):
        # distance e-1 gives 1/(1 + ln(e)) = 1/2
        p = np.diag([np.exp(np.e - 1.0), 1.0])
        assert abs(similarity(p, np.eye(2)) - 0.5) < 1e-12

    def test_distance_ten(self):
        p = np.diag([np.exp(10.0), 1.0])
        want = 1.0 / (1.0 + np.log(11.0))
        assert abs(similarity(p, np.eye(2)) - want) < 1e-12

    def test_range_and_monotone(self, rng):
        base = np.eye(3)
        prev = None
        for t in np.linspace(0.1, 5.0, 12):
            s = similarity(np.diag([np.exp(t), 1.0, 1.0]), base)
            assert 0.0 < s <= 1.0
            if prev is not None:
                assert s < prev
            prev = s

    def test_symmetric(self, rng):
        q, k = random_spd(rng, 5), random_spd(rng, 5)
        assert similarity(q, k) == pytest.approx(similarity(k, q), abs=1e-14)


class TestAimDistance:
    def test_self_distance_zero(self, rng):
        p = random_spd(rng, 4)
        assert aim_distance(p, p) < 1e-12

    def test_log_scale_example(self):
        assert abs(aim_distance(np.eye(2), np.diag([np.e**2, 1.0])) - 2.0) < 1e-12

    def test_symmetry(self, rng):
        p1, p2 = random_spd(rng, 5), random_spd(rng, 5)
        assert abs(aim_distance(p1, p2) - aim_distance(p2, p1)) < 1e-9

    def test_affine_invariance(self, rng):
        p1, p2 = random_spd(rng, 5), random_spd(rng, 5)
        a = rng.standard_normal((5, 5)) + 3 * np.eye(5)
        d = aim_distance(p1, p2)
        d_a = aim_distance(a @ p1 @ a.T, a @ p2 @ a.T)
        assert abs(d - d_a) < 1e-8

    def test_not_positive_definite(self, rng):
        with pytest.raises(NotPositiveDefiniteError):
            aim_distance(np.diag([1.0, -1.0]), np.eye(2))


class TestKarcherMean:
    def test_single(self, rng):
        p = random_spd(rng, 4)
        np.testing.assert_allclose(karcher_mean_aim([p]), p, atol=1e-8)

    def test_duplicates(self, rng):
        p = random_spd(rng, 5)
        np.testing.assert_allclose(karcher_mean_aim([p, p]), p, atol=1e-8)

    def test_commuting_pair(self):
        got = karcher_mean_aim([np.diag([1.0, 4.0]), np.diag([4.0, 1.0])])
        np.testing.assert_allclose(got, 2.0 * np.eye(2), atol=1e-8)

    def test_agrees_with_le_mean_on_commuting_family(self, rng):
        # with a shared eigenbasis the two barycentres coincide
        q = random_orthogonal(rng, 5)
        mats = [q @ np.diag(np.exp(rng.uniform(-1, 1, 5))) @ q.T for _ in range(3)]
        le = weighted_le_mean(mats)
        ka = karcher_mean_aim(mats)
        assert np.linalg.norm(le - ka) < 1e-6

    def test_convergence_error(self, rng):
        mats = [random_spd(rng, 4, log_eig_lo=-2, log_eig_hi=2) for _ in range(3)]
        with pytest.raises(ConvergenceError) as err:
            karcher_mean_aim(mats, tol=1e-14, max_iter=1)
        assert err.value.iterations == 1
        assert err.value.residual > 0
