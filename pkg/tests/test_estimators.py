import numpy as np
import pytest
from sklearn.base import clone

from msno._validation import ConfigurationError, NotFittedError, ShapeError
from msno.estimators import BasisPredictor, ExactBasis, MultiscaleSolver, check_fields
from msno.field import sample_forcing, sample_kle_field
from msno.msbasis import BasisSet
from msno.predictor.training import PredictorCheckpoint


@pytest.fixture(scope="module")
def kappas(small_grid, kle):
    return np.stack([sample_kle_field(kle, 60 + s, small_grid).values for s in range(3)])


def test_get_params_and_clone():
    est = BasisPredictor(loss="rbfl2", epochs=3)
    params = est.get_params()
    assert params["loss"] == "rbfl2" and params["epochs"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert ExactBasis(n_basis=4).set_params(n_basis=6).n_basis == 6


def test_check_fields(small_grid, kappas):
    assert check_fields(kappas[0], small_grid).shape == (1, 31, 31)
    assert check_fields(kappas.reshape(3, -1), small_grid).shape == (3, 31, 31)
    with pytest.raises(ShapeError):
        check_fields(np.ones((2, 5, 5)), small_grid)
    with pytest.raises(ValueError):
        check_fields(-kappas, small_grid)


def test_not_fitted(kappas):
    with pytest.raises(NotFittedError):
        ExactBasis(3, 31).transform(kappas)
    with pytest.raises(NotFittedError):
        BasisPredictor(3, 31).predict(kappas)


def test_exact_basis_oracle_matches_classical(small_grid, kappas):
    f = np.ones((31, 31))
    oracle = ExactBasis(3, 31, n_basis=4).fit()
    learned_slot = MultiscaleSolver(3, 31, "richards", basis=oracle).fit()
    classical = MultiscaleSolver(3, 31, "richards", basis=ExactBasis(3, 31, n_basis=4).fit()).fit()
    np.testing.assert_array_equal(learned_slot.predict(kappas, f), classical.predict(kappas, f))


def test_solver_fine_and_equations(small_grid, kappas):
    f = np.ones((31, 31))
    fine = MultiscaleSolver(3, 31, "diffusion").fit().predict(kappas, f)
    coarse = MultiscaleSolver(3, 31, "diffusion", basis=ExactBasis(3, 31, n_basis=8).fit()).fit().predict(kappas, f)
    err = np.linalg.norm(fine - coarse) / np.linalg.norm(fine)
    assert fine.shape == (3, 31, 31) and err < 0.2
    wrapped = MultiscaleSolver(3, 31, "diffusion").fit().predict(kappas[:1], sample_forcing("unit", 0, small_grid))
    np.testing.assert_array_equal(wrapped[0], fine[0])
    with pytest.raises(ConfigurationError):
        MultiscaleSolver(3, 31, "heat").fit()


def test_basis_predictor_fit_predict(small_grid, kappas):
    est = BasisPredictor(3, 31, n_basis=3, epochs=2, kinds=("corner",), seed=1).fit(kappas)
    assert isinstance(est.checkpoint_, PredictorCheckpoint)
    out = est.predict(kappas[:2])
    assert len(out) == 2 and len(out[0]) == 16
    assert out[0][0].vectors.shape == (3, 11, 11)
    # untrained kinds fall back to the exact bases
    exact = ExactBasis(3, 31, n_basis=3).fit().transform(kappas[:1])[0]
    assert all(isinstance(b, BasisSet) for b in out[0])
    np.testing.assert_array_equal(out[0][5].vectors, exact[5].vectors)
    wrapped = BasisPredictor.from_checkpoint(est.checkpoint_)
    assert wrapped.kinds == ("corner",)
    np.testing.assert_array_equal(wrapped.predict(kappas[:1])[0][0].vectors, out[0][0].vectors)
