"""Uniform rectangular meshes on the unit square and overlapping decompositions.

The fine and coarse meshes are tensor grids of square cells on (0,1)^2.
Vertices are indexed by integer lattice coordinates (i, j) with
0 <= i, j <= n and live at (i/n, j/n); cells by (i, j) with 0 <= i, j < n.
Flat ids are row-major with i varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Grid:
    """Uniform n-by-n mesh of the unit square."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError(f"grid needs at least one cell per side, got n={self.n}")

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_vertices(self):
        return (self.n + 1) ** 2

    @property
    def n_elements(self):
        return self.n ** 2

    def vertex_id(self, i, j):
        return j * (self.n + 1) + i

    def element_id(self, i, j):
        return j * self.n + i

    def vertex_lattice(self, ids=None):
        """Integer (i, j) lattice coordinates for flat vertex ids."""
        if ids is None:
            ids = np.arange(self.n_vertices)
        ids = np.asarray(ids)
        return np.column_stack((ids % (self.n + 1), ids // (self.n + 1)))

    def vertex_coords(self, ids=None):
        return self.vertex_lattice(ids) / float(self.n)


def build_fine_grid(n):
    """Uniform n-by-n mesh; n >= 2 so that interior vertices exist."""
    if n < 2:
        raise ConfigurationError(f"fine grid needs n >= 2 cells per side, got n={n}")
    return Grid(n)


@dataclass(frozen=True)
class Subdomain:
    """One overlapping subdomain: a coarse cell dilated by whole fine-cell layers.

    ``cells`` holds half-open fine-cell index ranges (i0, i1, j0, j1); the
    subdomain is the union of those cells, clipped to the unit square.
    """

    k: int
    coarse_ij: tuple
    cells: tuple

    def element_ids(self, grid):
        i0, i1, j0, j1 = self.cells
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
        return (jj * grid.n + ii).ravel()

    def owned_vertex_box(self, grid):
        """Inclusive vertex index ranges whose incident cells all lie inside.

        Functions supported on these vertices extend by zero to globally C1
        functions; on parts of the subdomain boundary that lie on the domain
        boundary the vertices are kept (their constrained DOFs are handled by
        the boundary conditions).
        """
        i0, i1, j0, j1 = self.cells
        a0 = i0 + 1 if i0 > 0 else 0
        a1 = i1 - 1 if i1 < grid.n else grid.n
        b0 = j0 + 1 if j0 > 0 else 0
        b1 = j1 - 1 if j1 < grid.n else grid.n
        return a0, a1, b0, b1


@dataclass(frozen=True)
class Patch:
    """Closure of the coarse cells sharing one coarse vertex, as fine data.

    ``vi``/``vj`` are inclusive fine-vertex index ranges; the patch cells are
    the fine cells between those vertices. ``center`` is the coarse vertex
    location, used as the expansion point of linear functions on the patch.
    """

    coarse_ij: tuple
    center: tuple
    vi: tuple
    vj: tuple
    interior: bool

    def vertex_ids(self, grid):
        ii, jj = np.meshgrid(
            np.arange(self.vi[0], self.vi[1] + 1),
            np.arange(self.vj[0], self.vj[1] + 1),
            indexing="ij",
        )
        return (jj * (grid.n + 1) + ii).ravel()

    def vertex_lattice(self):
        ii, jj = np.meshgrid(
            np.arange(self.vi[0], self.vi[1] + 1),
            np.arange(self.vj[0], self.vj[1] + 1),
            indexing="ij",
        )
        return np.column_stack((ii.ravel(), jj.ravel()))

    def cell_centers(self, grid):
        ii, jj = np.meshgrid(
            np.arange(self.vi[0], self.vi[1]),
            np.arange(self.vj[0], self.vj[1]),
            indexing="ij",
        )
        return np.column_stack(((ii.ravel() + 0.5) * grid.h, (jj.ravel() + 0.5) * grid.h))

    @property
    def width_cells(self):
        return max(self.vi[1] - self.vi[0], self.vj[1] - self.vj[0])


@dataclass(frozen=True)
class DomainDecomposition:
    """Fine/coarse grid pair with overlapping subdomains and vertex patches.

    ``ratio`` is the coarse-to-fine cell ratio H/h, ``overlap`` the number of
    fine-cell layers each coarse cell is dilated by (overlap half-width in
    units of h). Subdomains are indexed by coarse cell in row-major order.
    """

    fine: Grid
    coarse: Grid
    ratio: int
    overlap: int
    subdomains: tuple
    patches: dict

    @property
    def n_subdomains(self):
        return len(self.subdomains)

    def interior_patches(self):
        return [p for p in self.patches.values() if p.interior]


def build_decomposition(n_fine, m, d):
    """Overlapping decomposition with subdomain size H = m*h and overlap d*h.

    Requires m | n_fine and 1 <= d < m/2 so that only neighboring subdomains
    overlap and the overlap band between neighbors is 2*d fine cells wide.
    """
    if n_fine < 2:
        raise ConfigurationError(f"fine grid needs n >= 2, got {n_fine}")
    if m < 1 or n_fine % m != 0:
        raise ConfigurationError(f"subdomain ratio m={m} must divide n_fine={n_fine}")
    if not (1 <= d < m / 2):
        raise ConfigurationError(
            f"overlap d={d} must satisfy 1 <= d < m/2 = {m / 2} (overlap below half a subdomain)"
        )
    fine = Grid(n_fine)
    n_coarse = n_fine // m
    coarse = Grid(n_coarse)

    subdomains = []
    for J in range(n_coarse):
        for I in range(n_coarse):
            cells = (
                max(0, I * m - d),
                min(n_fine, (I + 1) * m + d),
                max(0, J * m - d),
                min(n_fine, (J + 1) * m + d),
            )
            subdomains.append(Subdomain(k=len(subdomains), coarse_ij=(I, J), cells=cells))

    patches = {}
    for J in range(n_coarse + 1):
        for I in range(n_coarse + 1):
            patches[(I, J)] = Patch(
                coarse_ij=(I, J),
                center=(I * m / n_fine, J * m / n_fine),
                vi=(max(0, (I - 1) * m), min(n_fine, (I + 1) * m)),
                vj=(max(0, (J - 1) * m), min(n_fine, (J + 1) * m)),
                interior=(1 <= I <= n_coarse - 1 and 1 <= J <= n_coarse - 1),
            )

    return DomainDecomposition(
        fine=fine,
        coarse=coarse,
        ratio=m,
        overlap=d,
        subdomains=tuple(subdomains),
        patches=patches,
    )
