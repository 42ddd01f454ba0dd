import numpy as np
import pytest

from src.core.errors import ShapeMismatch, SingularGram
from src.core.matcore import (Side, Space, as_matrix, damped_gram_inverse, format_matrix, gauge_sample, gaussian,
                              make_rng, parse_matrix, projector)


def test_damped_inverse_of_zero_matrix():
    out = damped_gram_inverse(np.zeros((2, 1)), Side.LEFT, 1.0)
    np.testing.assert_allclose(out, [[1.0]])


def test_damped_inverse_of_orthonormal_column():
    out = damped_gram_inverse(np.array([[1.0], [0.0]]), Side.LEFT, 0.0)
    np.testing.assert_allclose(out, [[1.0]])


def test_damped_inverse_right_side():
    out = damped_gram_inverse(np.array([[2.0, 0.0], [0.0, 0.5]]), Side.RIGHT, 0.1)
    np.testing.assert_allclose(out, np.linalg.inv([[4.1, 0.0], [0.0, 0.35]]), rtol=1e-12)


def test_damped_inverse_is_symmetric(rng):
    out = damped_gram_inverse(gaussian(rng, (10, 4)), Side.LEFT, 1e-6)
    assert np.array_equal(out, out.T)


def test_singular_gram_without_damping():
    with pytest.raises(SingularGram):
        damped_gram_inverse(np.zeros((3, 2)), Side.LEFT, 0.0)
    with pytest.raises(SingularGram):
        damped_gram_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]), Side.LEFT, 0.0)


def test_singular_gram_is_a_linalg_error():
    with pytest.raises(np.linalg.LinAlgError):
        damped_gram_inverse(np.zeros((3, 2)), Side.RIGHT, 0.0)


def test_damping_regularizes_rank_deficient_gram():
    out = damped_gram_inverse(np.array([[1e4, 0.0], [0.0, 0.0]]), Side.LEFT, 1e-6)
    np.testing.assert_allclose(out, [[1e-8, 0.0], [0.0, 1e6]], rtol=1e-12)


@pytest.mark.parametrize("side", list(Side))
@pytest.mark.parametrize("lam", [1e-6, 1e-2, 1.0])
def test_damped_inverse_times_damped_gram_is_identity(rng, side, lam):
    M = gaussian(rng, (12, 4)) if side is Side.LEFT else gaussian(rng, (4, 12))
    damped = (M.T @ M if side is Side.LEFT else M @ M.T) + lam * np.eye(4)
    product = damped_gram_inverse(M, side, lam) @ damped
    assert np.linalg.norm(product - np.eye(4)) / np.linalg.norm(np.eye(4)) < 1e-9


def test_projector_fixes_its_subspace_and_is_symmetric(rng):
    B = gaussian(rng, (9, 3))
    P = projector(B, Space.COLUMN, 0.0)
    assert np.linalg.norm(P @ B - B) / np.linalg.norm(B) < 1e-9
    assert np.linalg.norm(P - P.T) / np.linalg.norm(P) < 1e-12
    A = gaussian(rng, (3, 9))
    Q = projector(A, Space.ROW, 0.0)
    assert np.linalg.norm(A @ Q - A) / np.linalg.norm(A) < 1e-9
    assert np.linalg.norm(Q - Q.T) / np.linalg.norm(Q) < 1e-12


def test_projector_examples():
    np.testing.assert_allclose(projector(np.array([[1.0], [1.0]]), Space.COLUMN, 0.0), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(projector(np.array([[1.0, 0.0]]), Space.ROW, 0.0), [[1.0, 0.0], [0.0, 0.0]])


def test_projector_is_idempotent_with_rank_trace(rng):
    P = projector(gaussian(rng, (8, 2)), Space.COLUMN, 0.0)
    assert np.linalg.norm(P @ P - P) / np.linalg.norm(P) < 1e-10
    assert abs(np.trace(P) - 2.0) < 1e-8


def test_gauge_sample_examples():
    R = gauge_sample(1, 1.0, seed=3)
    assert abs(abs(np.linalg.det(R)) - 1.0) < 1e-12
    R = gauge_sample(3, 4.0, seed=7)
    sigma = np.linalg.svd(R, compute_uv=False)
    assert sigma[0] / sigma[-1] <= 4.0 + 1e-9
    assert np.array_equal(gauge_sample(3, 4.0, seed=7), R)


def test_gaussian_is_deterministic_and_standard():
    first = gaussian(make_rng(42), (200, 50))
    assert np.array_equal(first, gaussian(make_rng(42), (200, 50)))
    assert abs(first.mean()) < 0.05
    assert abs(first.std() - 1.0) < 0.05


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ShapeMismatch):
        as_matrix([1.0, 2.0])
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.nan]])


def test_matrix_text_format(rng):
    mat = gaussian(rng, (3, 4))
    text = format_matrix(mat)
    assert len(text.splitlines()) == 3
    assert np.array_equal(parse_matrix(text), mat)
    with pytest.raises(ShapeMismatch):
        parse_matrix("1 2\n3\n")
