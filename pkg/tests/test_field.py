import numpy as np
import pytest
import scipy.linalg as sla

from msno._validation import ConfigurationError, DegenerateFieldError
from msno.field import (
    ForcingKind,
    KleParams,
    covariance_matrix,
    kle_eigendecomposition,
    sample_forcing,
    sample_kle_field,
    stream_rng,
)
from msno.grid import build_grid


def test_covariance_diagonal_is_variance():
    C = covariance_matrix(KleParams(aux_grid=8))
    np.testing.assert_array_equal(np.diag(C), 2.0)


def test_isotropic_covariance_rotation_invariant():
    p = KleParams(l_x=0.3, l_y=0.3, aux_grid=6)
    C = covariance_matrix(p)
    n = p.aux_grid
    perm = np.rot90(np.arange(n * n).reshape(n, n)).ravel()
    np.testing.assert_allclose(C[np.ix_(perm, perm)], C, atol=1e-15)


def test_eigenvalues_match_dense_oracle():
    p = KleParams(aux_grid=16, energy_fraction=1.0)
    d = kle_eigendecomposition(p)
    C = covariance_matrix(p)
    oracle = sla.eigh(C, eigvals_only=True)[::-1] / C.shape[0]
    oracle = np.clip(oracle, 0.0, None)
    assert d.n_terms == 256
    np.testing.assert_allclose(d.eigenvalues, oracle, rtol=0, atol=1e-12 * oracle[0])
    assert np.all(np.diff(d.eigenvalues) <= 0)
    assert np.all(np.diff(np.cumsum(d.eigenvalues)) >= 0)


def test_eigenfunctions_reconstruct_covariance():
    p = KleParams(aux_grid=10, l_x=0.2, l_y=0.4, energy_fraction=1.0)
    d = kle_eigendecomposition(p)
    phi = d.eigenfunctions.reshape(d.n_terms, -1)
    n = phi.shape[1]
    np.testing.assert_allclose(phi @ phi.T / n, np.eye(d.n_terms), atol=1e-10)
    np.testing.assert_allclose((phi.T * d.eigenvalues) @ phi, covariance_matrix(p), atol=1e-10)


def test_energy_truncation(kle):
    lam = kle.eigenvalues
    assert lam.sum() >= 0.95 * kle.total_energy
    assert lam[:-1].sum() < 0.95 * kle.total_energy


def test_contrast_range(grid5, kle):
    for seed in range(3):
        k = sample_kle_field(kle, seed, grid5)
        assert k.contrast_lo == 1.0 and k.contrast_hi == 9600.0


def test_zero_coefficients_are_degenerate(grid5, kle):
    with pytest.raises(DegenerateFieldError):
        sample_kle_field(kle, 0, grid5, theta=np.zeros(kle.n_terms))


def test_same_seed_bitwise(grid5, kle):
    a = sample_kle_field(kle, 11, grid5).values
    b = sample_kle_field(kle, 11, grid5).values
    c = sample_kle_field(kle, 12, grid5).values
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_streams_independent_of_call_order():
    x = stream_rng(5, 1).standard_normal(4)
    stream_rng(5, 0).standard_normal(100)
    assert np.array_equal(stream_rng(5, 1).standard_normal(4), x)


def test_invalid_params():
    with pytest.raises(ConfigurationError):
        KleParams(l_x=0.0)
    with pytest.raises(ConfigurationError):
        KleParams(energy_fraction=1.5)
    with pytest.raises(ConfigurationError):
        KleParams(contrast_target=1.0)


def test_unit_forcing(grid5):
    f = sample_forcing("unit", 3, grid5)
    assert f.kind is ForcingKind.UNIT and np.all(f.values == 1.0)


def test_forcing_defaults():
    import inspect

    sig = inspect.signature(sample_forcing).parameters
    assert (sig["gamma"].default, sig["alpha"].default, sig["beta"].default) == (2000.0, 1.0, 0.5)


def test_spectral_forcing_smoother_with_beta():
    g = build_grid(4, 65)
    seminorms = []
    for beta in (0.5, 2.0, 8.0):
        f = sample_forcing("spectral", 9, g, beta=beta).values
        gy, gx = np.gradient(f, g.h)
        seminorms.append(np.sqrt(np.mean(gx**2 + gy**2)) / np.sqrt(np.mean(f**2)))
    assert seminorms[0] > seminorms[1] > seminorms[2]


def test_spectral_forcing_deterministic(grid5):
    a = sample_forcing("spectral", 4, grid5).values
    assert np.array_equal(a, sample_forcing("spectral", 4, grid5).values)
    with pytest.raises(ConfigurationError):
        sample_forcing("spectral", 4, grid5, beta=0.0)
