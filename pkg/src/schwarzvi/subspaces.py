"""Subspace operators for the one- and two-level space decompositions.

Local spaces take all free DOFs at fine vertices whose incident cells lie
inside the subdomain; extending such a function by zero keeps it globally C1
and leaves vertex values outside the subdomain untouched, which is what the
constrained correction steps need.

The coarse space is spanned by products phi_i * {1, x - x_i, y - y_i} over
interior coarse vertices, where phi_i is the coarse bicubic value basis
function at x^i.  The phi_i form a nonnegative C1 partition of unity
subordinate to the vertex patches, and the prolongation into the fine space
is plain nodal interpolation, which preserves fine-vertex values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import bfs
from .errors import ConfigurationError
from .grid import DomainDecomposition, Grid
from .qp import power_lipschitz


@dataclass(frozen=True)
class LocalSpace:
    """Free DOFs owned by one subdomain, with its obstacle-row bookkeeping.

    ``dof_ids`` are positions in the free-DOF numbering (sorted).
    ``bound_pos`` marks which local components are vertex values subject to
    the obstacle, and ``bound_rows`` the matching rows of the problem's
    value matrix.
    """

    k: int
    dof_ids: np.ndarray
    bound_pos: np.ndarray
    bound_rows: np.ndarray

    @property
    def dim(self):
        return self.dof_ids.size


def build_local_spaces(dd, problem):
    """One LocalSpace per subdomain; checks that together they cover all free DOFs."""
    grid = dd.fine
    nvert = grid.n_vertices
    free = np.flatnonzero(problem.free_mask)
    pos_of_raw = -np.ones(4 * nvert, dtype=int)
    pos_of_raw[free] = np.arange(free.size)

    row_of_vertex = -np.ones(nvert, dtype=int)
    row_of_vertex[problem.vertex_rows] = np.arange(problem.vertex_rows.size)

    spaces = []
    covered = np.zeros(free.size, dtype=bool)
    for sub in dd.subdomains:
        a0, a1, b0, b1 = sub.owned_vertex_box(grid)
        ii, jj = np.meshgrid(np.arange(a0, a1 + 1), np.arange(b0, b1 + 1), indexing="ij")
        vids = (jj * (grid.n + 1) + ii).ravel()
        raw = (4 * vids[:, None] + np.arange(4)[None, :]).ravel()
        raw = raw[problem.free_mask[raw]]
        ids = np.sort(pos_of_raw[raw])

        local_of_free = -np.ones(free.size, dtype=int)
        local_of_free[ids] = np.arange(ids.size)
        rows = row_of_vertex[vids]
        rows = rows[rows >= 0]
        value_pos = pos_of_raw[4 * problem.vertex_rows[rows]]
        bound_pos = local_of_free[value_pos]
        keep = bound_pos >= 0
        spaces.append(
            LocalSpace(
                k=sub.k,
                dof_ids=ids,
                bound_pos=bound_pos[keep],
                bound_rows=rows[keep],
            )
        )
        covered[ids] = True

    if not covered.all():
        missing = int(np.flatnonzero(~covered)[0])
        raise ConfigurationError(
            f"free DOF {missing} is covered by no subdomain; increase the overlap"
        )
    return spaces


def _interaction(box_a, box_b):
    """Two owned-vertex boxes interact when some basis supports share a cell."""
    (a0, a1, b0, b1), (c0, c1, d0, d1) = box_a, box_b
    return a0 <= c1 + 1 and c0 <= a1 + 1 and b0 <= d1 + 1 and d0 <= b1 + 1


def coloring_number(dd, two_level=False):
    """Number of classes of mutually non-interacting subdomains (greedy on the
    interference graph); the coarse space, overlapping everything, adds one."""
    boxes = [s.owned_vertex_box(dd.fine) for s in dd.subdomains]
    n = len(boxes)
    colors = np.full(n, -1, dtype=int)
    for k in range(n):
        taken = {
            colors[j]
            for j in range(k)
            if colors[j] >= 0 and _interaction(boxes[k], boxes[j])
        }
        c = 0
        while c in taken:
            c += 1
        colors[k] = c
    n_colors = int(colors.max()) + 1
    return n_colors + 1 if two_level else n_colors


@dataclass(frozen=True)
class PartitionOfUnity:
    """Family of coarse bicubic value basis functions, one per coarse vertex.

    Each member is represented by its coarse DOF vector (a single unit value
    DOF), so evaluation reuses the standard bicubic evaluator.
    """

    grid: Grid

    def basis_dofs(self, I, J):
        dofs = np.zeros(4 * self.grid.n_vertices)
        dofs[4 * self.grid.vertex_id(I, J)] = 1.0
        return dofs

    def evaluate(self, I, J, pts, deriv=(0, 0)):
        return bfs.evaluate_batch(self.basis_dofs(I, J), self.grid, pts, deriv)

    def nodal_data(self, I, J, pts):
        """(phi, phi_x, phi_y, phi_xy) at the given points."""
        dofs = self.basis_dofs(I, J)
        return tuple(
            bfs.evaluate_batch(dofs, self.grid, pts, d)
            for d in ((0, 0), (1, 0), (0, 1), (1, 1))
        )


def build_pou(coarse):
    """Partition of unity subordinate to the coarse vertex patches.

    Nonnegative, C1, supported on the patch of each vertex, and summing to
    one because the bicubic value bases interpolate the constant function.
    """
    return PartitionOfUnity(grid=coarse)


@dataclass
class CoarseSpace:
    """Prolongation and assembled operator data of the coarse space.

    ``P`` maps coarse coefficients to free fine DOFs by nodal interpolation.
    ``dofs`` lists (I, J, monomial) per column with monomial 0, 1, 2 for
    1, x - x_i, y - y_i.  ``G = value_matrix @ P`` expresses the obstacle
    rows in coarse coordinates (kept dense with its transpose: both are
    applied every step of the dual iteration); ``dual_lipschitz`` bounds
    G A0^{-1} G'.
    """

    dofs: list
    P: sp.csr_matrix
    Pt: sp.csr_matrix
    A0: np.ndarray
    G: np.ndarray
    Gt: np.ndarray
    B: np.ndarray
    dual_lipschitz: float
    _cho: object

    @property
    def dim(self):
        return len(self.dofs)

    def solve(self, rhs):
        return sla.cho_solve(self._cho, rhs, check_finite=False)


def _admissible_monomials(I, J, n_coarse, form):
    """Coarse monomial indices at vertex (I, J) compatible with the boundary
    condition: interior vertices carry {1, x - x_i, y - y_i}.  When only the
    value is pinned on the boundary, a non-corner edge vertex keeps the
    centered monomial along the inward direction (it vanishes on the edge,
    and the partition function kills the other boundary parts); the clamped
    form admits no boundary combination at all.
    """
    on_v = I in (0, n_coarse)
    on_h = J in (0, n_coarse)
    if not on_v and not on_h:
        return (0, 1, 2)
    if form != "control" or (on_v and on_h):
        return ()
    return (1,) if on_v else (2,)


def build_coarse_space(dd, problem):
    """Assemble the partition-of-unity coarse space for a two-level method."""
    grid = dd.fine
    coarse = dd.coarse
    pou = build_pou(coarse)

    if not dd.interior_patches():
        raise ConfigurationError(
            "coarse space is empty: the coarse grid has no interior vertices"
        )

    free = np.flatnonzero(problem.free_mask)
    pos_of_raw = -np.ones(4 * grid.n_vertices, dtype=int)
    pos_of_raw[free] = np.arange(free.size)

    dofs = []
    rows, cols, vals = [], [], []
    for (I, J), patch in dd.patches.items():
        monos = _admissible_monomials(I, J, coarse.n, problem.form)
        if not monos:
            continue
        vids = patch.vertex_ids(grid)
        pts = grid.vertex_coords(vids)
        phi, phix, phiy, phixy = pou.nodal_data(I, J, pts)
        cx, cy = patch.center
        gx = pts[:, 0] - cx
        gy = pts[:, 1] - cy

        # nodal data of phi_i * monomial by the product rule
        columns = (
            (phi, phix, phiy, phixy),
            (phi * gx, phix * gx + phi, phiy * gx, phixy * gx + phiy),
            (phi * gy, phix * gy, phiy * gy + phi, phixy * gy + phix),
        )
        for mono in monos:
            data = columns[mono]
            col = len(dofs)
            dofs.append((I, J, mono))
            for t in range(4):
                raw = 4 * vids + t
                keep = problem.free_mask[raw]
                rows.append(pos_of_raw[raw[keep]])
                cols.append(np.full(int(keep.sum()), col))
                vals.append(np.asarray(data[t])[keep])

    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(free.size, len(dofs)),
    )
    A0 = np.asarray((P.T @ (problem.A @ P)).todense())
    A0 = 0.5 * (A0 + A0.T)
    cho = sla.cho_factor(A0)
    G = np.asarray((problem.value_matrix @ P).todense())
    Gt = np.ascontiguousarray(G.T)
    B = sla.cho_solve(cho, Gt, check_finite=False)  # A0^{-1} G', reused heavily
    L = power_lipschitz(lambda x: G @ (B @ x), G.shape[0])
    return CoarseSpace(
        dofs=dofs, P=P, Pt=P.T.tocsr(), A0=A0, G=G, Gt=Gt, B=B, dual_lipschitz=L, _cho=cho
    )


def extract_values(problem, v):
    """Vertex values of a free-DOF vector (rows follow the obstacle rows)."""
    return problem.vertex_values(v)
