import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guided_es.linalg import (
    DegenerateVectorError,
    DimensionError,
    OrthoSet,
    cosine,
    dot,
    gram_schmidt,
    norm,
    project_onto_span,
    sample_orthogonal_complement,
    sample_orthonormal,
    sample_orthonormal_stack,
)


def test_vector_helpers():
    assert dot([1, 2, 3], [4, 5, 6]) == 32.0
    assert norm([3, 4]) == 5.0
    assert cosine([1, 0], [0, 2]) == 0.0
    assert cosine([1, 1], [2, 2]) == pytest.approx(1.0)
    assert cosine([1, 0], [-3, 0]) == -1.0


def test_cosine_is_clipped_into_unit_interval():
    v = np.full(7, 0.1)
    assert -1.0 <= cosine(v, v * (1 + 1e-16)) <= 1.0


@pytest.mark.parametrize("fn", [dot, cosine])
def test_length_mismatch(fn):
    with pytest.raises(DimensionError):
        fn([1, 2], [1, 2, 3])


def test_zero_vector_cosine_raises():
    with pytest.raises(DegenerateVectorError):
        cosine([0, 0], [1, 0])


def test_gram_schmidt_matches_qr_up_to_sign():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 9))
    basis, dropped = gram_schmidt(a)
    q, r = np.linalg.qr(a.T)
    oracle = (q * np.sign(np.diag(r))).T
    assert dropped == 0
    np.testing.assert_allclose(basis.directions, oracle, atol=1e-12)


def test_gram_schmidt_drops_dependent_vectors():
    basis, dropped = gram_schmidt([[1.0, 0, 0], [2.0, 0, 0], [1.0, 1.0, 0], [0, 0, 0]])
    assert dropped == 2
    np.testing.assert_allclose(basis.directions, [[1, 0, 0], [0, 1, 0]], atol=1e-15)


def test_gram_schmidt_drop_is_scale_relative():
    # A tiny but independent vector survives; a large nearly dependent one is dropped.
    basis, dropped = gram_schmidt([[1.0, 0], [0, 1e-20]])
    assert dropped == 0 and basis.count == 2
    basis, dropped = gram_schmidt([[1.0, 0], [1e6, 1e-7]])
    assert dropped == 1


def test_gram_schmidt_errors():
    with pytest.raises(DimensionError):
        gram_schmidt([])
    with pytest.raises(DimensionError):
        gram_schmidt([[1.0, 0], [1.0, 0, 0]])
    with pytest.raises(ValueError):
        gram_schmidt([[1.0]], tol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1), st.data())
def test_sample_orthonormal_is_orthonormal(n, seed, data):
    p = data.draw(st.integers(1, n))
    s = sample_orthonormal(n, p, seed)
    off, unit = s.gram_error()
    assert s.directions.shape == (p, n)
    assert off <= 1e-10 and unit <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.data())
def test_complement_is_orthogonal_to_basis(n, seed, data):
    k = data.draw(st.integers(1, n - 1))
    p = data.draw(st.integers(0, n - k))
    rng = np.random.default_rng(seed)
    basis = sample_orthonormal(n, k, rng)
    comp = sample_orthogonal_complement(basis, p, rng)
    assert comp.count == p
    if p:
        assert np.abs(comp.directions @ basis.directions.T).max() <= 1e-10
        basis.concat(comp).check()


def test_sampling_is_seed_deterministic():
    a = sample_orthonormal(20, 5, 11).directions
    b = sample_orthonormal(20, 5, 11).directions
    assert np.array_equal(a, b)


def test_directions_marginally_uniform():
    # Each coordinate of a uniform unit vector has E[x_i^2] = 1/n; the first
    # coordinate has mean zero and E[x_1^4] = 3/(n(n+2)).
    n, trials = 8, 20000
    frames = sample_orthonormal_stack(n, 3, trials, 5)
    first = frames[:, 1, 0]
    assert abs(np.mean(first ** 2) - 1 / n) < 4 * np.std(first ** 2) / np.sqrt(trials)
    assert abs(np.mean(first)) < 4 / np.sqrt(n * trials)
    m4 = np.mean(first ** 4)
    assert m4 == pytest.approx(3 / (n * (n + 2)), rel=0.05)


def test_complement_projection_is_isotropic():
    # Directions orthogonal to e_1 spread evenly over the remaining n - 1 axes.
    n, trials = 6, 8000
    e1 = OrthoSet.from_rows(np.eye(n)[:1])
    rng = np.random.default_rng(2)
    sq = np.array([sample_orthogonal_complement(e1, 1, rng).directions[0] ** 2 for _ in range(trials)])
    assert np.abs(sq[:, 0]).max() < 1e-20
    np.testing.assert_allclose(sq[:, 1:].mean(axis=0), 1 / (n - 1), atol=0.015)


def test_sampling_errors():
    with pytest.raises(DimensionError):
        sample_orthonormal(3, 4)
    with pytest.raises(DimensionError):
        sample_orthonormal(3, 0)
    basis = sample_orthonormal(4, 3, 0)
    with pytest.raises(DimensionError):
        sample_orthogonal_complement(basis, 2)
    assert sample_orthogonal_complement(basis, 0).count == 0


def test_orthoset_validation_and_projection():
    s = OrthoSet.from_rows(np.eye(3)[:2])
    np.testing.assert_allclose(project_onto_span([1.0, 2.0, 3.0], s), [1.0, 2.0, 0.0])
    assert len(s) == 2 and s.ambient_dim == 3
    with pytest.raises(DegenerateVectorError):
        OrthoSet.from_rows([[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DimensionError):
        OrthoSet(np.zeros((3, 2)), 2)
    with pytest.raises(DimensionError):
        project_onto_span([1.0, 2.0], OrthoSet.empty(2))
    with pytest.raises(ValueError):
        s.directions[0, 0] = 5.0
