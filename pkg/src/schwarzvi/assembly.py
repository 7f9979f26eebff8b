"""Global assembly of the constrained discrete problems.

Two model problems share the quadratic structure

    minimize  1/2 v' A v - f' v   subject to  (value of v) <= psi at vertices:

* ``plate``   - clamped-plate bending energy on H0^2: at every boundary
  vertex all four DOFs vanish (the value, both first derivatives, and -- by
  differentiating the normal-derivative condition along the straight edge --
  the mixed derivative).
* ``control`` - beta * bending + L2 mass on H^2 n H0^1: the value and the
  tangential derivative vanish at boundary-edge vertices (that pins the
  cubic edge trace to zero), value and both first derivatives at corners;
  the mixed derivative is never constrained.

Elimination is by row/column deletion, so the reduced matrix stays symmetric
positive definite.  The obstacle bound applies at every vertex whose value
DOF survives elimination; eliminated boundary values sit at zero, which is
admissible only when psi >= 0 there (checked at assembly).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import bfs
from .errors import ConfigurationError
from .grid import Grid


@dataclass(frozen=True)
class ProblemSpec:
    """Which energy to assemble and with what data.

    ``load`` needs only point values; ``obstacle`` needs derivatives as well
    (tests interpolate it into the discrete space).
    """

    form: str
    load: bfs.ScalarField
    obstacle: bfs.ScalarField
    beta: float = 0.0

    def __post_init__(self):
        if self.form not in ("plate", "control"):
            raise ConfigurationError(f"unknown form {self.form!r}")
        if self.form == "control" and self.beta <= 0:
            raise ConfigurationError(f"control form needs beta > 0, got {self.beta}")


def free_dof_mask(grid, form):
    """Boolean mask over raw DOFs surviving boundary-condition elimination."""
    n = grid.n
    lat = grid.vertex_lattice()
    i, j = lat[:, 0], lat[:, 1]
    on_v = (i == 0) | (i == n)  # vertical boundary edges
    on_h = (j == 0) | (j == n)  # horizontal boundary edges
    mask = np.ones((grid.n_vertices, 4), dtype=bool)
    if form == "plate":
        boundary = on_v | on_h
        mask[boundary, :] = False
    else:
        mask[on_v | on_h, 0] = False  # value
        mask[on_h, 1] = False         # tangential derivative along horizontal edges
        mask[on_v, 2] = False         # tangential derivative along vertical edges
    return mask.ravel()


def assemble_raw(spec, grid):
    """Stiffness matrix and load vector over all raw DOFs (no BC applied)."""
    em = bfs.element_matrices(spec.form, beta=spec.beta, h=grid.h)
    ids = bfs.element_dof_ids(grid)  # (ne, 16)
    ne = ids.shape[0]

    rows = np.repeat(ids, 16, axis=1).ravel()
    cols = np.tile(ids, (1, 16)).ravel()
    vals = np.tile(em.matrix.ravel(), ne)
    ndof = 4 * grid.n_vertices
    A = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()

    # per-element load by quadrature of the source against the local basis
    qpts, qwts = bfs._tensor_rule(4)
    basis = bfs.shape_batch(qpts)  # (nq, 16)
    scale = bfs.dof_scaling(grid.h)
    eids = np.arange(ne)
    ox = (eids % grid.n) * grid.h
    oy = (eids // grid.n) * grid.h
    x = ox[:, None] + qpts[None, :, 0] * grid.h  # (ne, nq)
    y = oy[:, None] + qpts[None, :, 1] * grid.h
    fvals = spec.load.value(x, y) * qwts[None, :]
    contrib = grid.h**2 * (fvals @ basis) * scale[None, :]  # (ne, 16)
    f = np.zeros(ndof)
    np.add.at(f, ids.ravel(), contrib.ravel())
    return A, f


@dataclass
class DiscreteProblem:
    """Assembled constrained quadratic problem over free DOFs.

    ``value_matrix`` (one row per constrained vertex, a single 1 per row)
    extracts the vertex values from a free-DOF vector; ``obstacle`` holds the
    bound at those vertices.  ``vertex_rows`` maps rows back to vertex ids.
    """

    grid: Grid
    form: str
    beta: float
    A: sp.csr_matrix
    f: np.ndarray
    free_mask: np.ndarray
    value_matrix: sp.csr_matrix
    obstacle: np.ndarray
    vertex_rows: np.ndarray
    spec: ProblemSpec = field(repr=False, default=None)

    @property
    def n_free(self):
        return self.f.shape[0]

    def energy(self, v):
        """1/2 v'Av - f'v."""
        v = np.asarray(v)
        if v.shape != self.f.shape:
            raise ConfigurationError(f"dimension mismatch: {v.shape} vs {self.f.shape}")
        return 0.5 * float(v @ (self.A @ v)) - float(self.f @ v)

    def vertex_values(self, v):
        if np.asarray(v).shape != self.f.shape:
            raise ConfigurationError("dimension mismatch")
        return self.value_matrix @ v

    def feasible(self, v):
        tol = 1e-12 * (1.0 + np.abs(self.obstacle))
        return bool(np.all(self.vertex_values(v) <= self.obstacle + tol))

    def violation(self, v):
        """Largest positive obstacle violation (0 if feasible everywhere)."""
        return float(np.maximum(self.vertex_values(v) - self.obstacle, 0.0).max(initial=0.0))

    def restrict(self, raw):
        return np.asarray(raw)[self.free_mask]

    def extend(self, free):
        raw = np.zeros(4 * self.grid.n_vertices)
        raw[self.free_mask] = free
        return raw


def assemble(spec, grid):
    """Assemble, eliminate boundary DOFs, and attach the vertex-value bounds."""
    A_raw, f_raw = assemble_raw(spec, grid)
    mask = free_dof_mask(grid, spec.form)
    free = np.flatnonzero(mask)
    A = A_raw[free][:, free].tocsr()
    f = f_raw[free]

    xy = grid.vertex_coords()
    psi = np.asarray(spec.obstacle.value(xy[:, 0], xy[:, 1]), dtype=float)
    psi = np.broadcast_to(psi, (grid.n_vertices,))

    value_free = mask.reshape(-1, 4)[:, 0]
    pinned = np.flatnonzero(~value_free)
    if np.any(psi[pinned] < 0):
        bad = pinned[psi[pinned] < 0][0]
        raise ConfigurationError(
            f"obstacle is negative ({psi[bad]:.3g}) at constrained boundary vertex {bad}; "
            "the zero boundary value would be infeasible"
        )

    vertex_rows = np.flatnonzero(value_free)
    pos_of_raw = -np.ones(4 * grid.n_vertices, dtype=int)
    pos_of_raw[free] = np.arange(free.size)
    cols = pos_of_raw[4 * vertex_rows]
    J = sp.csr_matrix(
        (np.ones(vertex_rows.size), (np.arange(vertex_rows.size), cols)),
        shape=(vertex_rows.size, free.size),
    )

    return DiscreteProblem(
        grid=grid,
        form=spec.form,
        beta=spec.beta,
        A=A,
        f=f,
        free_mask=mask,
        value_matrix=J,
        obstacle=psi[vertex_rows].copy(),
        vertex_rows=vertex_rows,
        spec=spec,
    )
