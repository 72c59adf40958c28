"""scikit-learn style wrappers around the offline stage, the predictor and the online solve.

Inputs ``X`` are stacks of coefficient fields, shaped ``(n_samples, n_fine, n_fine)``
or flattened ``(n_samples, n_fine**2)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConfigurationError, ShapeError, check_field, check_is_fitted
from .fem import PicardOptions, solve_fine_diffusion, solve_fine_richards
from .gmsfem import solve_gmsfem_diffusion, solve_gmsfem_richards
from .grid import DomainKind, build_grid
from .msbasis import assemble_restriction, compute_bases, local_basis
from .predictor.training import PredictorCheckpoint, TrainOptions, predict_basis, train

EQUATIONS = ("diffusion", "richards")


def check_fields(X, grid, name="X") -> np.ndarray:
    """Validate a stack of positive nodal fields and return it as ``(n, n_fine, n_fine)``."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1 or (arr.ndim == 2 and arr.shape == (grid.n_fine, grid.n_fine)):
        arr = arr[None]
    if arr.ndim not in (2, 3):
        raise ShapeError(f"{name} must be a stack of fields, got shape {arr.shape}")
    if len(arr) == 0:
        raise ShapeError(f"{name} is empty")
    return np.stack([check_field(a, grid, name=name, positive=True) for a in arr])


class ExactBasis(TransformerMixin, BaseEstimator):
    """Classical offline stage: coefficient fields to per-domain spectral basis sets.

    ``predict`` is an alias of ``transform`` so the class can stand in for a
    learned predictor (it is the exact-eigensolve oracle).
    """

    def __init__(self, n_coarse=5, n_fine=101, n_basis=8, n_extra=4, method="sparse"):
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.n_basis = n_basis
        self.n_extra = n_extra
        self.method = method

    def fit(self, X=None, y=None):
        self.grid_ = build_grid(self.n_coarse, self.n_fine)
        if X is not None:
            check_fields(X, self.grid_)
        return self

    def transform(self, X):
        check_is_fitted(self, ["grid_"])
        kappas = check_fields(X, self.grid_)
        return [compute_bases(self.grid_, k, self.n_basis, self.n_extra, self.method) for k in kappas]

    predict = transform

    def domain_basis(self, kappa, domain):
        """Exact basis for a single domain; used as a fallback for untrained domain types."""
        check_is_fitted(self, ["grid_"])
        return local_basis(self.grid_, kappa, domain, self.n_basis, self.n_extra, self.method)[0]


class BasisPredictor(BaseEstimator):
    """Learned basis predictor: one F-FNO per domain type.

    ``fit(X, y)`` takes coefficient fields and, optionally, their exact basis
    sets (computed on the fly when ``y`` is None).  Domain kinds left out of
    ``kinds`` fall back to the exact eigensolve at prediction time.
    """

    def __init__(
        self,
        n_coarse=5,
        n_fine=101,
        n_basis=8,
        loss="sal",
        epochs=100,
        batch_size=16,
        learning_rate=1e-3,
        weight_decay=1e-4,
        lam=1.0,
        n_vectors=10,
        dtype="float32",
        seed=0,
        kinds=("full", "half", "corner"),
        configs=None,
    ):
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.n_basis = n_basis
        self.loss = loss
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lam = lam
        self.n_vectors = n_vectors
        self.dtype = dtype
        self.seed = seed
        self.kinds = kinds
        self.configs = configs

    def _options(self) -> TrainOptions:
        return TrainOptions(
            loss=self.loss,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            lam=self.lam,
            n_vectors=self.n_vectors,
            dtype=self.dtype,
        )

    def fit(self, X, y=None):
        grid = build_grid(self.n_coarse, self.n_fine)
        kappas = check_fields(X, grid)
        if y is None:
            y = ExactBasis(self.n_coarse, self.n_fine, self.n_basis).fit().transform(kappas)
        if len(y) != len(kappas):
            raise ShapeError(f"{len(kappas)} fields but {len(y)} basis lists")
        self.grid_ = grid
        self.checkpoint_ = train(grid, kappas, y, self._options(), self.configs, self.kinds)
        self.exact_ = ExactBasis(self.n_coarse, self.n_fine, self.n_basis).fit()
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: PredictorCheckpoint, n_basis: int | None = None):
        """Wrap a loaded checkpoint without retraining."""
        m = checkpoint.manifest
        kinds = tuple(k.value for k in checkpoint.models)
        if n_basis is None:
            n_basis = next(iter(checkpoint.models.values())).config.n_basis
        est = cls(
            n_coarse=m["n_coarse"],
            n_fine=m["n_fine"],
            n_basis=n_basis,
            loss=m.get("loss", "sal"),
            epochs=m.get("epochs", 100),
            seed=m.get("seed", 0),
            kinds=kinds,
        )
        est.grid_ = build_grid(est.n_coarse, est.n_fine)
        est.checkpoint_ = checkpoint
        est.exact_ = ExactBasis(est.n_coarse, est.n_fine, n_basis).fit()
        return est

    def predict(self, X):
        check_is_fitted(self, ["checkpoint_"])
        kappas = check_fields(X, self.grid_)
        complete = all(k in self.checkpoint_.models for k in DomainKind)
        out = []
        for k in kappas:
            fallback = None if complete else (lambda d, k=k: self.exact_.domain_basis(k, d))
            out.append(predict_basis(self.checkpoint_, k, self.grid_, fallback=fallback))
        return out

    transform = predict


class MultiscaleSolver(BaseEstimator):
    """Solve diffusion or steady Richards problems for a stack of coefficient fields.

    ``basis`` selects the offline stage: ``None`` solves on the fine grid,
    otherwise any fitted object with ``predict(X) -> list of basis lists``
    (:class:`ExactBasis` for classical GMsFEM, :class:`BasisPredictor` for
    the learned variant).
    """

    def __init__(self, n_coarse=5, n_fine=101, equation="richards", basis=None, picard_tol=1e-6, picard_max_iter=50):
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.equation = equation
        self.basis = basis
        self.picard_tol = picard_tol
        self.picard_max_iter = picard_max_iter

    def fit(self, X=None, y=None):
        if self.equation not in EQUATIONS:
            raise ConfigurationError(f"equation must be one of {EQUATIONS}, got {self.equation!r}")
        self.grid_ = build_grid(self.n_coarse, self.n_fine)
        self.picard_ = PicardOptions(self.picard_tol, self.picard_max_iter)
        return self

    def solve(self, X, forcing, bases=None):
        """Full solution objects (values plus Picard diagnostics), one per field."""
        check_is_fitted(self, ["grid_"])
        kappas = check_fields(X, self.grid_)
        f = check_field(getattr(forcing, "values", forcing), self.grid_, name="forcing")
        if self.basis is None:
            if self.equation == "diffusion":
                return [solve_fine_diffusion(self.grid_, k, f) for k in kappas]
            return [solve_fine_richards(self.grid_, k, f, self.picard_) for k in kappas]
        if bases is None:
            bases = self.basis.predict(kappas)
        out = []
        for k, b in zip(kappas, bases):
            R = assemble_restriction(b, self.grid_)
            if self.equation == "diffusion":
                out.append(solve_gmsfem_diffusion(self.grid_, k, f, R))
            else:
                out.append(solve_gmsfem_richards(self.grid_, k, f, R, self.picard_))
        return out

    def predict(self, X, forcing):
        return np.stack([s.values for s in self.solve(X, forcing)])
