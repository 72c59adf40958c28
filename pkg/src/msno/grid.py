"""Nested coarse/fine structured grids on the unit square and their local domains.

Node arrays are stored y-outer, x-inner: ``field[iy, ix]`` is the value at
``(ix * h, iy * h)``. A local domain ``omega_i`` is the union of coarse cells
sharing coarse node ``x_i``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import ConfigurationError, ShapeError


class DomainKind(str, enum.Enum):
    FULL = "full"
    HALF = "half"
    CORNER = "corner"


_KIND_BY_CELLS = {4: DomainKind.FULL, 2: DomainKind.HALF, 1: DomainKind.CORNER}


@dataclass(frozen=True)
class GridPair:
    """A fine grid of ``n_fine x n_fine`` nodes refining ``n_coarse x n_coarse`` cells."""

    n_coarse: int
    n_fine: int
    dimension: int = 2

    @property
    def H(self) -> float:
        return 1.0 / self.n_coarse

    @property
    def h(self) -> float:
        return 1.0 / (self.n_fine - 1)

    @property
    def refinement(self) -> int:
        """Fine cells per coarse cell along one axis."""
        return (self.n_fine - 1) // self.n_coarse

    @property
    def n_domains(self) -> int:
        return (self.n_coarse + 1) ** 2

    @property
    def n_nodes(self) -> int:
        return self.n_fine**2

    @property
    def n_interior(self) -> int:
        return (self.n_fine - 2) ** 2

    def coordinates(self):
        """Return ``(X, Y)`` node coordinate arrays of shape ``(n_fine, n_fine)``."""
        t = np.linspace(0.0, 1.0, self.n_fine)
        return np.meshgrid(t, t, indexing="xy")

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_fine, self.n_fine), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Flat node index of every interior dof, in interior-dof order."""
        idx = np.flatnonzero(~self.boundary_mask.ravel())
        idx.setflags(write=False)
        return idx

    def to_interior(self, values) -> np.ndarray:
        return np.asarray(values).reshape(-1)[self.interior_index]

    def from_interior(self, interior) -> np.ndarray:
        full = np.zeros(self.n_nodes)
        full[self.interior_index] = interior
        return full.reshape(self.n_fine, self.n_fine)


def build_grid(n_coarse: int, n_fine: int) -> GridPair:
    """Validate and build a :class:`GridPair`.

    >>> build_grid(5, 101).n_domains
    36
    """
    if int(n_coarse) != n_coarse or n_coarse < 2:
        raise ConfigurationError(f"n_coarse must be an integer >= 2, got {n_coarse!r}")
    if int(n_fine) != n_fine or n_fine < 3:
        raise ConfigurationError(f"n_fine must be an integer >= 3, got {n_fine!r}")
    n_coarse, n_fine = int(n_coarse), int(n_fine)
    if (n_fine - 1) % n_coarse:
        raise ConfigurationError(
            f"fine grid with {n_fine - 1} cells does not refine {n_coarse} coarse cells"
        )
    if (n_fine - 1) // n_coarse < 2:
        # h < H strictly and the PoU needs at least one interior fine node per cell
        raise ConfigurationError("fine grid must refine each coarse cell at least twice")
    return GridPair(n_coarse, n_fine)


@dataclass(frozen=True)
class LocalDomain:
    index: int
    coarse_node: tuple[int, int]  # (ix, iy)
    cells: tuple[tuple[int, int], ...]  # (cx, cy) of each coarse cell
    kind: DomainKind
    patch: tuple[int, int, int, int]  # (iy0, iy1, ix0, ix1), half-open fine node ranges
    orientation: int

    @property
    def patch_shape(self) -> tuple[int, int]:
        iy0, iy1, ix0, ix1 = self.patch
        return (iy1 - iy0, ix1 - ix0)

    @property
    def slices(self) -> tuple[slice, slice]:
        iy0, iy1, ix0, ix1 = self.patch
        return slice(iy0, iy1), slice(ix0, ix1)

    def node_in_patch(self, grid: GridPair) -> tuple[int, int]:
        """Array position (row, col) of ``x_i`` inside the patch."""
        ix, iy = self.coarse_node
        r = grid.refinement
        return iy * r - self.patch[0], ix * r - self.patch[2]

    def extract(self, values) -> np.ndarray:
        """Restrict a global nodal field to this domain's patch."""
        return np.asarray(values)[..., self.slices[0], self.slices[1]]

    def patch_node_index(self, grid: GridPair) -> np.ndarray:
        """Flat global node indices of the patch nodes, patch-row-major."""
        iy0, iy1, ix0, ix1 = self.patch
        iy, ix = np.mgrid[iy0:iy1, ix0:ix1]
        return (iy * grid.n_fine + ix).ravel()


def _canonical_position(kind: DomainKind, shape) -> tuple[int, int]:
    rows, cols = shape
    if kind is DomainKind.FULL:
        return rows // 2, cols // 2
    if kind is DomainKind.HALF:
        # node at the midpoint of the top edge (largest y)
        return rows - 1, cols // 2
    return rows - 1, 0  # corner: top-left


def _orientation_code(kind: DomainKind, shape, node_pos) -> int:
    marker = np.zeros(shape, dtype=np.int8)
    marker[node_pos] = 1
    for k in range(4):
        rotated = np.rot90(marker, k)
        if np.argwhere(rotated)[0].tolist() == list(_canonical_position(kind, rotated.shape)):
            if kind is not DomainKind.HALF or rotated.shape[0] < rotated.shape[1]:
                return k
    raise AssertionError("no rotation reaches the canonical pose")  # pragma: no cover


def enumerate_local_domains(grid: GridPair) -> list[LocalDomain]:
    """One :class:`LocalDomain` per coarse node, lexicographic by (iy, ix)."""
    nc, r = grid.n_coarse, grid.refinement
    domains = []
    for iy in range(nc + 1):
        for ix in range(nc + 1):
            cells = tuple(
                (cx, cy)
                for cy in (iy - 1, iy)
                for cx in (ix - 1, ix)
                if 0 <= cx < nc and 0 <= cy < nc
            )
            kind = _KIND_BY_CELLS[len(cells)]
            cx0 = min(c[0] for c in cells)
            cx1 = max(c[0] for c in cells) + 1
            cy0 = min(c[1] for c in cells)
            cy1 = max(c[1] for c in cells) + 1
            patch = (cy0 * r, cy1 * r + 1, cx0 * r, cx1 * r + 1)
            shape = (patch[1] - patch[0], patch[3] - patch[2])
            node_pos = (iy * r - patch[0], ix * r - patch[2])
            domains.append(
                LocalDomain(
                    index=len(domains),
                    coarse_node=(ix, iy),
                    cells=cells,
                    kind=kind,
                    patch=patch,
                    orientation=_orientation_code(kind, shape, node_pos),
                )
            )
    return domains


def canonical_patch_shape(grid: GridPair, kind: DomainKind) -> tuple[int, int]:
    r = grid.refinement
    if kind is DomainKind.FULL:
        return (2 * r + 1, 2 * r + 1)
    if kind is DomainKind.HALF:
        return (r + 1, 2 * r + 1)
    return (r + 1, r + 1)


@dataclass(frozen=True)
class PartitionFunction:
    domain_index: int
    values: np.ndarray


def partition_of_unity(grid: GridPair, domain: LocalDomain) -> PartitionFunction:
    """Coarse bilinear hat of ``x_i`` sampled at the patch's fine nodes."""
    iy0, iy1, ix0, ix1 = domain.patch
    ix, iy = domain.coarse_node
    r = grid.refinement
    # exact integer arithmetic in fine-cell units
    hat_x = np.clip(1.0 - np.abs(np.arange(ix0, ix1) - ix * r) / r, 0.0, 1.0)
    hat_y = np.clip(1.0 - np.abs(np.arange(iy0, iy1) - iy * r) / r, 0.0, 1.0)
    return PartitionFunction(domain.index, np.outer(hat_y, hat_x))


def canonicalize(patch_field, domain: LocalDomain):
    """Rotate ``patch_field`` (trailing two axes) into the canonical pose of its kind.

    Returns ``(rotated, code)``; :func:`decanonicalize` with ``code`` inverts it.
    """
    arr = np.asarray(patch_field)
    if arr.shape[-2:] != domain.patch_shape:
        raise ShapeError(
            f"field shape {arr.shape[-2:]} does not match patch shape {domain.patch_shape}"
        )
    k = domain.orientation
    return np.rot90(arr, k, axes=(-2, -1)), k


def decanonicalize(canonical_field, code: int) -> np.ndarray:
    return np.rot90(np.asarray(canonical_field), -code, axes=(-2, -1))


def kind_counts(domains) -> dict[DomainKind, int]:
    counts = {kind: 0 for kind in DomainKind}
    for d in domains:
        counts[d.kind] += 1
    return counts
