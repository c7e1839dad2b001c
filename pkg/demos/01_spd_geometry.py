"""
Geometry of covariance matrices
===============================

Covariance matrices live on the manifold of symmetric positive
definite (SPD) matrices, not in a flat vector space.  This script
walks through the primitives the package builds on: the matrix
exponential and logarithm, the log-Euclidean distance, weighted
means, and the similarity used by the attention module.
"""

import numpy as np

from spdattn.geometry import (
    aim_distance,
    karcher_mean_aim,
    lem_distance,
    similarity,
    weighted_le_mean,
)
from spdattn.linalg import mat_exp_sym, mat_log_spd, regularize_spd

rng = np.random.default_rng(7)

#####################################################################
# An SPD matrix from data.  The sample covariance of a short random
# signal is only positive semidefinite, so it gets the standard
# trace-normalize-plus-ridge treatment first.

x = rng.standard_normal((4, 50))
scm = (x - x.mean(axis=1, keepdims=True)) @ (x - x.mean(axis=1, keepdims=True)).T / 49
p1 = regularize_spd(scm, 1e-5)
print("eigenvalues of P1:", np.round(np.linalg.eigvalsh(p1), 4))

#####################################################################
# Log maps an SPD matrix to a plain symmetric matrix and Exp maps it
# back.  The round trip is exact to floating-point precision, which
# is what makes the log-Euclidean framework workable.

s = mat_log_spd(p1)
back = mat_exp_sym(s)
print("round trip residual:", np.linalg.norm(back - p1))

#####################################################################
# Distance between two SPD matrices is the Frobenius distance between
# their logarithms.  It is symmetric, zero only for equal inputs, and
# invariant under joint rotation of both matrices.

y = rng.standard_normal((4, 50))
scm2 = (y - y.mean(axis=1, keepdims=True)) @ (y - y.mean(axis=1, keepdims=True)).T / 49
p2 = regularize_spd(scm2, 1e-5)

d = lem_distance(p1, p2)
print("lem distance:", round(d, 4))

q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
print("after joint rotation:", round(lem_distance(q @ p1 @ q.T, q @ p2 @ q.T), 4))

#####################################################################
# The weighted log-Euclidean mean is a single Exp of a weighted sum
# of logarithms.  Weights must be strictly positive and sum to one;
# skewing them pulls the mean toward the heavier input.  On commuting
# matrices the uniform mean agrees with the fixed-point Karcher mean
# under the affine-invariant metric.

stack = np.stack([p1, p2])
skewed = weighted_le_mean(stack, [0.9, 0.1])
print("distance from skewed mean to P1:",
      round(lem_distance(skewed, p1), 4))
print("distance from skewed mean to P2:",
      round(lem_distance(skewed, p2), 4))

eigs = rng.uniform(0.5, 2.0, (3, 4))
commuting = np.stack([q @ np.diag(e) @ q.T for e in eigs])
le = weighted_le_mean(commuting)
ka = karcher_mean_aim(commuting)
print("LE vs Karcher on commuting inputs:", np.linalg.norm(le - ka))

#####################################################################
# The attention module never uses raw distances.  It compresses them
# to a similarity in (0, 1]: identical inputs score 1 and the score
# decays slowly as matrices move apart.  Scaled exponentials of the
# identity sit at an exactly known distance, handy for a quick table.

eye = np.eye(4)
for dist in (0.0, np.e - 1.0, 10.0):
    far = mat_exp_sym((dist / 2.0) * eye)
    print(f"similarity at distance {dist:5.2f}:",
          round(similarity(eye, far), 4))

#####################################################################
# The affine-invariant distance is also available for reference.  It
# is the metric the Karcher mean minimizes over, and it is immune to
# any invertible congruence, not just rotations.

a = rng.standard_normal((4, 4))
g = a @ a.T + 4 * np.eye(4)
print("aim distance:", round(aim_distance(p1, p2), 4))
print("after congruence by a random invertible map:",
      round(aim_distance(g @ p1 @ g.T, g @ p2 @ g.T), 4))
