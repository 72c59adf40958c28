"""Generalized multiscale finite elements with neural-operator basis prediction."""

from .estimators import BasisPredictor, ExactBasis, MultiscaleSolver
from .fem import PicardOptions, relative_errors, solve_fine_diffusion, solve_fine_richards
from .field import KleParams, kle_eigendecomposition, sample_forcing, sample_kle_field
from .gmsfem import breakeven, solve_gmsfem_diffusion, solve_gmsfem_richards
from .grid import DomainKind, build_grid, enumerate_local_domains
from .msbasis import assemble_restriction, compute_bases
from .subspace import grassmann_distance, rbfl2_loss, sal_loss, sal_pr_loss

__version__ = "0.1.0"

__all__ = [
    "BasisPredictor",
    "DomainKind",
    "ExactBasis",
    "KleParams",
    "MultiscaleSolver",
    "PicardOptions",
    "assemble_restriction",
    "breakeven",
    "build_grid",
    "compute_bases",
    "enumerate_local_domains",
    "grassmann_distance",
    "kle_eigendecomposition",
    "rbfl2_loss",
    "relative_errors",
    "sal_loss",
    "sal_pr_loss",
    "sample_forcing",
    "sample_kle_field",
    "solve_fine_diffusion",
    "solve_fine_richards",
    "solve_gmsfem_diffusion",
    "solve_gmsfem_richards",
]
