import numpy as np
import pytest
from scipy.stats import ortho_group

from msno._validation import RankDeficiencyError, ShapeError
from msno.subspace import (
    grassmann_distance,
    orthonormalize,
    overlap,
    principal_angles,
    projector_distance,
    rbfl2_loss,
    sal_loss,
    sal_pr_loss,
)


def gram_schmidt(X):
    """Modified Gram-Schmidt, applied twice for stability."""
    Q = np.array(X, dtype=float)
    for _ in range(2):
        for j in range(Q.shape[1]):
            for i in range(j):
                Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
            Q[:, j] /= np.linalg.norm(Q[:, j])
    return Q


def test_orthonormalize_matches_gram_schmidt(rng):
    X = rng.standard_normal((50, 8))
    ob = orthonormalize(X)
    np.testing.assert_allclose(ob.Q.T @ ob.Q, np.eye(8), atol=1e-12)
    G = gram_schmidt(X)
    # same subspace, same columns up to sign
    np.testing.assert_allclose(np.abs(np.sum(ob.Q * G, axis=0)), 1.0, atol=1e-12)
    assert ob.rank == 8 and not ob.deficient.any()


def test_orthonormal_input_kept(rng):
    Q = ortho_group.rvs(12, random_state=3)[:, :4]
    ob = orthonormalize(Q)
    np.testing.assert_allclose(np.abs(ob.Q), np.abs(Q), atol=1e-12)


def test_duplicate_column_flagged(rng):
    X = rng.standard_normal((30, 5))
    X[:, 3] = X[:, 1]
    ob = orthonormalize(X)
    assert ob.rank == 4 and ob.deficient.tolist() == [False, False, False, True, False]
    with pytest.raises(RankDeficiencyError):
        orthonormalize(np.zeros((5, 2)))


def test_sal_examples(rng):
    X = rng.standard_normal((40, 6))
    assert sal_loss(X, X) == pytest.approx(0.0, abs=1e-12)
    U = ortho_group.rvs(6, random_state=1)
    assert sal_loss(X, X @ U) == pytest.approx(0.0, abs=1e-12)
    E = np.eye(4)
    assert sal_loss(E[:, :2], E[:, 2:]) == 2.0


def test_sal_pr_examples(rng):
    X = rng.standard_normal((40, 6))
    for lam in (0.0, 1.0, 5.0):
        assert sal_pr_loss(X, X, lam=lam) == pytest.approx(0.0, abs=1e-12)
    import inspect

    assert inspect.signature(sal_pr_loss).parameters["n_vectors"].default == 10


def test_sal_pr_penalty_orthogonal_prediction():
    E = np.eye(6)
    target, pred = E[:, :2], E[:, 2:4]
    from msno.field import STREAM_SUBSPACE, stream_rng

    c = stream_rng(0, STREAM_SUBSPACE).standard_normal((2, 3))
    V = target @ c
    expected = np.mean(np.sum(V * V, axis=0))
    assert sal_pr_loss(target, pred, lam=1.0, n_vectors=3) == pytest.approx(2.0 + expected, rel=1e-12)


def test_rbfl2_examples(rng):
    T = rng.standard_normal((30, 4))
    assert rbfl2_loss(T, -T) == 0.0
    assert rbfl2_loss(T, np.zeros_like(T)) == 1.0
    assert rbfl2_loss(T, 2 * T) == 1.0
    with pytest.raises(ShapeError):
        rbfl2_loss(T, T[:, :3])


def test_grassmann_examples(rng):
    X = rng.standard_normal((40, 5))
    assert grassmann_distance(X, X) == pytest.approx(0.0, abs=1e-7)
    for theta in np.linspace(0.0, np.pi, 7):
        a = np.array([[1.0], [0.0]])
        b = np.array([[np.cos(theta)], [np.sin(theta)]])
        assert grassmann_distance(a, b) == pytest.approx(abs(np.sin(theta)), abs=1e-12)


def test_grassmann_formulas_agree(rng):
    for _ in range(20):
        A, B = rng.standard_normal((60, 7)), rng.standard_normal((60, 7))
        d = grassmann_distance(A, B, self_check=True)
        assert d == pytest.approx(projector_distance(orthonormalize(A).Q, orthonormalize(B).Q), abs=1e-8)
        angles = principal_angles(A, B)
        assert d == pytest.approx(np.sqrt(np.sum(np.sin(angles) ** 2)), abs=1e-10)
        assert sal_loss(A, B) == pytest.approx(d * d, abs=1e-10)
        assert overlap(A, B) == pytest.approx(7 - d * d, abs=1e-10)


def test_rank_deficient_distance_warns(rng):
    A = rng.standard_normal((20, 3))
    B = A.copy()
    B[:, 2] = B[:, 0]
    with pytest.warns(RuntimeWarning):
        grassmann_distance(A, B)
