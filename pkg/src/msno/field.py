"""Random high-contrast coefficient fields (Karhunen-Loeve) and forcing terms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, asdict

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._validation import ConfigurationError, CovarianceError, DegenerateFieldError
from .grid import GridPair

# stream ids for counter-based generators; keep stable, they key stored datasets
STREAM_KLE = 0
STREAM_FORCING = 1
STREAM_SUBSPACE = 2
STREAM_TRAIN = 3


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *stream)``.

    Independent of call order, so samples can be drawn in any order or in
    parallel and still reproduce bitwise.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class KleParams:
    l_x: float = 0.02
    l_y: float = 0.6
    sigma2: float = 2.0
    energy_fraction: float = 0.95
    aux_grid: int = 32
    contrast_target: float = 9600.0

    def __post_init__(self):
        if self.l_x <= 0 or self.l_y <= 0:
            raise ConfigurationError("correlation lengths must be positive")
        if not 0 < self.energy_fraction <= 1:
            raise ConfigurationError("energy_fraction must lie in (0, 1]")
        if self.contrast_target <= 1:
            raise ConfigurationError("contrast_target must exceed 1")
        if self.aux_grid < 2 or self.aux_grid > 64:
            raise ConfigurationError("aux_grid must lie in [2, 64]")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class KleDecomposition:
    eigenvalues: np.ndarray  # (L,) descending
    eigenfunctions: np.ndarray  # (L, aux, aux), discrete-L2 orthonormal
    params: KleParams
    total_energy: float

    @property
    def n_terms(self) -> int:
        return len(self.eigenvalues)


@dataclass
class CoefficientField:
    values: np.ndarray

    @property
    def contrast_lo(self) -> float:
        return float(self.values.min())

    @property
    def contrast_hi(self) -> float:
        return float(self.values.max())


class ForcingKind(str, enum.Enum):
    UNIT = "unit"
    SPECTRAL = "spectral"


@dataclass
class ForcingField:
    values: np.ndarray
    kind: ForcingKind


def covariance_matrix(params: KleParams) -> np.ndarray:
    """Exponential covariance between all pairs of auxiliary-grid nodes."""
    t = np.linspace(0.0, 1.0, params.aux_grid)
    X, Y = np.meshgrid(t, t, indexing="xy")
    x, y = X.ravel(), Y.ravel()
    dx = (x[:, None] - x[None, :]) / params.l_x
    dy = (y[:, None] - y[None, :]) / params.l_y
    return params.sigma2 * np.exp(-np.sqrt(dx * dx + dy * dy))


def kle_eigendecomposition(params: KleParams = KleParams(), psd_tol: float = 1e-10) -> KleDecomposition:
    """Truncated Nystrom discretization of the covariance eigenproblem.

    Uses equal quadrature weights ``1/n`` on the auxiliary nodes; eigenfunctions
    are orthonormal in the matching discrete L2 inner product.
    """
    C = covariance_matrix(params)
    n = C.shape[0]
    asym = np.abs(C - C.T).max()
    if asym > psd_tol * np.abs(C).max():
        raise CovarianceError(f"covariance matrix not symmetric (max asymmetry {asym:.3e})")
    w = 1.0 / n
    lam, vec = np.linalg.eigh(w * C)
    lam, vec = lam[::-1], vec[:, ::-1]
    if lam[-1] < -psd_tol * lam[0]:
        raise CovarianceError(
            f"covariance matrix indefinite: smallest eigenvalue {lam[-1]:.3e} vs largest {lam[0]:.3e}"
        )
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    cumulative = np.cumsum(lam)
    L = int(np.searchsorted(cumulative, params.energy_fraction * total * (1 - 1e-14)) + 1)
    L = min(L, n)
    phi = (vec[:, :L] / np.sqrt(w)).T.reshape(L, params.aux_grid, params.aux_grid)
    return KleDecomposition(lam[:L].copy(), np.ascontiguousarray(phi), params, float(total))


def _interpolate_to_fine(aux_values: np.ndarray, grid: GridPair) -> np.ndarray:
    t = np.linspace(0.0, 1.0, aux_values.shape[0])
    interp = RegularGridInterpolator((t, t), aux_values, method="linear")
    s = np.linspace(0.0, 1.0, grid.n_fine)
    YY, XX = np.meshgrid(s, s, indexing="ij")
    pts = np.column_stack([YY.ravel(), XX.ravel()])
    return interp(pts).reshape(grid.n_fine, grid.n_fine)


def sample_kle_field(decomp: KleDecomposition, seed: int, grid: GridPair, theta=None) -> CoefficientField:
    """Draw one permeability field ``kappa = exp(ln(contrast) * Y_norm)``.

    ``theta`` overrides the standard-normal coefficients (length ``L``).
    """
    if theta is None:
        theta = stream_rng(seed, STREAM_KLE).standard_normal(decomp.n_terms)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (decomp.n_terms,):
        raise ConfigurationError(f"theta must have shape ({decomp.n_terms},)")
    Y_aux = np.tensordot(np.sqrt(decomp.eigenvalues) * theta, decomp.eigenfunctions, axes=1)
    Y = _interpolate_to_fine(Y_aux, grid)
    lo, hi = Y.min(), Y.max()
    if not hi - lo > 1e-12 * max(1.0, abs(hi)):
        raise DegenerateFieldError("random field is constant; cannot normalize contrast")
    Y_norm = (Y - lo) / (hi - lo)
    a = np.log(decomp.params.contrast_target)
    kappa = np.exp(a * Y_norm)
    # pin the extremes exactly; exp(log(c)) is not always c in floating point
    kappa[Y_norm == 0.0] = 1.0
    kappa[Y_norm == 1.0] = decomp.params.contrast_target
    return CoefficientField(kappa)


def spectral_symbol(grid: GridPair, alpha: float, beta: float) -> np.ndarray:
    k = np.fft.fftfreq(grid.n_fine, d=grid.h)
    KY, KX = np.meshgrid(k, k, indexing="ij")
    return alpha * (1.0 + 4.0 * np.pi**2 * (KX**2 + KY**2)) ** (-beta)


def sample_forcing(
    kind,
    seed: int,
    grid: GridPair,
    gamma: float = 2000.0,
    alpha: float = 1.0,
    beta: float = 0.5,
) -> ForcingField:
    """Unit forcing, or white noise filtered by ``alpha (I - Laplacian)^(-beta)`` times ``gamma``."""
    kind = ForcingKind(kind)
    if kind is ForcingKind.UNIT:
        return ForcingField(np.ones((grid.n_fine, grid.n_fine)), kind)
    if not beta > 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    noise = stream_rng(seed, STREAM_FORCING).standard_normal((grid.n_fine, grid.n_fine))
    filtered = np.fft.ifft2(np.fft.fft2(noise) * spectral_symbol(grid, alpha, beta)).real
    return ForcingField(gamma * filtered, kind)
