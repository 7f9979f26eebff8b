"""Bogner-Fox-Schmit bicubic Hermite element on square cells.

Conventions used throughout the package:

* Every grid vertex carries 4 degrees of freedom, in the order
  (value, d/dx, d/dy, d2/dxdy), all in physical units.  The raw global DOF
  id of vertex ``v`` and type ``t`` is ``4*v + t``.
* Element-local DOFs follow the corner order (0,0), (1,0), (0,1), (1,1) of
  the reference square [0,1]^2, with the same 4 types per corner, so that
  local index = 4*corner + type.
* The reference basis is the tensor product of 1D cubic Hermite functions
  and is dual to the reference-unit nodal data.  Physical derivative DOFs
  pick up powers of the cell size h: a physical DOF vector d corresponds to
  reference data S d with S = diag(1, h, h, h^2) per corner.  All h
  scalings are applied inside the element matrices and the evaluators, so
  callers only ever see physical quantities.

Element integrals use a 4x4 tensor Gauss-Legendre rule, which is exact for
the per-variable degree <= 6 integrands appearing in the bending and mass
forms (the rule is exact up to degree 7).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .grid import Grid

# corner -> (a, b) lattice offsets, matching local index order
_CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))
# dof type -> (x-derivative flag, y-derivative flag)
_TYPES = ((0, 0), (1, 0), (0, 1), (1, 1))


def _hermite_1d(t, order):
    """The four cubic Hermite shape functions on [0,1], differentiated ``order`` times.

    Function order: value at 0, slope at 0, value at 1, slope at 1.
    Returns an array of shape (4,) + shape(t).
    """
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    if order == 0:
        return np.stack(
            [
                1.0 - 3.0 * t**2 + 2.0 * t**3,
                t - 2.0 * t**2 + t**3,
                3.0 * t**2 - 2.0 * t**3,
                -(t**2) + t**3,
            ]
        )
    if order == 1:
        return np.stack(
            [
                -6.0 * t + 6.0 * t**2,
                1.0 - 4.0 * t + 3.0 * t**2,
                6.0 * t - 6.0 * t**2,
                -2.0 * t + 3.0 * t**2,
            ]
        )
    if order == 2:
        return np.stack(
            [
                -6.0 * one + 12.0 * t,
                -4.0 * one + 6.0 * t,
                6.0 * one - 12.0 * t,
                -2.0 * one + 6.0 * t,
            ]
        )
    raise ConfigurationError(f"derivative order {order} not supported (max 2)")


def shape_functions(xi, deriv=(0, 0)):
    """Reference-basis derivatives at one point of the reference square.

    Returns the 16-vector of d^a/dxi^a d^b/deta^b applied to each basis
    function at ``xi``; ``deriv = (a, b)`` with a, b in {0, 1, 2}.
    """
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < -1e-12) or np.any(xi > 1 + 1e-12):
        raise ConfigurationError(f"reference point {xi} outside [0,1]^2")
    return shape_batch(xi.reshape(1, 2), deriv)[0]


def shape_batch(pts, deriv=(0, 0)):
    """Reference basis at many points; returns shape (npts, 16)."""
    da, db = deriv
    if not (0 <= da <= 2 and 0 <= db <= 2):
        raise ConfigurationError(f"derivative orders {deriv} not supported (max (2,2))")
    pts = np.asarray(pts, dtype=float)
    gx = _hermite_1d(pts[:, 0], da)  # (4, npts)
    gy = _hermite_1d(pts[:, 1], db)
    out = np.empty((pts.shape[0], 16))
    for c, (a, b) in enumerate(_CORNERS):
        for t, (u, v) in enumerate(_TYPES):
            out[:, 4 * c + t] = gx[2 * a + u] * gy[2 * b + v]
    return out


def dof_scaling(h):
    """Reference-unit scale of each local DOF: 1 for values, h per first
    derivative, h^2 for the mixed derivative."""
    return np.array([h ** (u + v) for _ in _CORNERS for (u, v) in _TYPES])


def gauss_rule(npts):
    """Gauss-Legendre nodes/weights on [0,1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def _tensor_rule(npts):
    x, w = gauss_rule(npts)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w).ravel()
    return np.column_stack((X.ravel(), Y.ravel())), W


@dataclass(frozen=True)
class ElementMatrix:
    """Element contributions over physical DOFs for one square cell.

    ``matrix`` is the 16x16 bilinear form; ``load_template`` integrates each
    basis function over the cell (the load for a unit constant source).
    """

    matrix: np.ndarray
    load_template: np.ndarray
    form: str
    beta: float
    h: float


def element_matrices(form, beta=0.0, h=1.0):
    """Element matrix of the bending form or the control form on an h-cell.

    ``plate`` integrates the Frobenius product of Hessians,
    v_xx w_xx + 2 v_xy w_xy + v_yy w_yy.  ``control`` is beta times the
    bending form plus the L2 mass term; beta must be positive there.
    """
    if form not in ("plate", "control"):
        raise ConfigurationError(f"unknown form {form!r}")
    if h <= 0:
        raise ConfigurationError(f"cell size must be positive, got {h}")
    if form == "control" and beta <= 0:
        raise ConfigurationError(f"control form needs beta > 0, got {beta}")

    pts, wts = _tensor_rule(4)
    nxx = shape_batch(pts, (2, 0))
    nxy = shape_batch(pts, (1, 1))
    nyy = shape_batch(pts, (0, 2))
    n00 = shape_batch(pts, (0, 0))

    bend_ref = (
        (nxx * wts[:, None]).T @ nxx
        + 2.0 * (nxy * wts[:, None]).T @ nxy
        + (nyy * wts[:, None]).T @ nyy
    )
    mass_ref = (n00 * wts[:, None]).T @ n00

    s = dof_scaling(h)
    bend = (s[:, None] * bend_ref * s[None, :]) / h**2
    mass = (s[:, None] * mass_ref * s[None, :]) * h**2

    if form == "plate":
        matrix = bend
    else:
        matrix = beta * bend + mass
    matrix = 0.5 * (matrix + matrix.T)

    load = h**2 * s * (wts @ n00)
    return ElementMatrix(matrix=matrix, load_template=load, form=form, beta=beta, h=h)


def _zero_field(x, y):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


@dataclass(frozen=True)
class ScalarField:
    """Scalar function with the partial derivatives nodal interpolation needs.

    Callables must broadcast over numpy arrays.  Derivatives default to zero,
    which is only correct for piecewise-constant data; supply them for
    anything else that gets interpolated.
    """

    value: Callable
    dx: Callable = _zero_field
    dy: Callable = _zero_field
    dxy: Callable = _zero_field

    @staticmethod
    def constant(c):
        return ScalarField(value=lambda x, y: np.full(np.broadcast(x, y).shape, float(c)))


def interpolate(field, grid):
    """Nodal interpolant of ``field``: raw DOF vector matching its values and
    derivatives at every grid vertex."""
    xy = grid.vertex_coords()
    x, y = xy[:, 0], xy[:, 1]
    out = np.empty(4 * grid.n_vertices)
    out[0::4] = field.value(x, y)
    out[1::4] = field.dx(x, y)
    out[2::4] = field.dy(x, y)
    out[3::4] = field.dxy(x, y)
    return out


def element_dof_ids(grid, element_ids=None):
    """Raw DOF ids per element, shape (ne, 16), in local DOF order."""
    n = grid.n
    if element_ids is None:
        element_ids = np.arange(grid.n_elements)
    element_ids = np.asarray(element_ids)
    ei = element_ids % n
    ej = element_ids // n
    v00 = ej * (n + 1) + ei
    corners = np.stack([v00, v00 + 1, v00 + (n + 1), v00 + (n + 2)], axis=1)
    return (4 * corners[:, :, None] + np.arange(4)[None, None, :]).reshape(-1, 16)


def evaluate_batch(dofs, grid, pts, deriv=(0, 0), cells=None):
    """Evaluate a DOF vector's piecewise-bicubic function at many points.

    ``deriv = (a, b)`` returns d^a/dx^a d^b/dy^b; supported up to (2, 2).
    Points must lie in the closed unit square.  ``cells`` optionally pins the
    cell used per point (for checking continuity across cell interfaces);
    by default the containing cell is used, with ties resolved downward.
    """
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 2)
    if np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12):
        raise ConfigurationError("evaluation point outside the unit square")
    n = grid.n
    da, db = deriv
    scaled = np.clip(pts, 0.0, 1.0) * n
    if cells is None:
        ci = np.clip(scaled[:, 0].astype(int), 0, n - 1)
        cj = np.clip(scaled[:, 1].astype(int), 0, n - 1)
    else:
        cells = np.asarray(cells)
        ci, cj = cells[:, 0], cells[:, 1]
    local = np.column_stack((scaled[:, 0] - ci, scaled[:, 1] - cj))
    ids = element_dof_ids(grid, cj * n + ci)
    coeffs = dofs[ids] * dof_scaling(grid.h)[None, :]
    basis = shape_batch(local, deriv)
    return (coeffs * basis).sum(axis=1) * grid.h ** (-(da + db))


def evaluate(dofs, grid, p, deriv=(0, 0)):
    """Point evaluation; see ``evaluate_batch``."""
    return float(evaluate_batch(dofs, grid, np.asarray(p, dtype=float).reshape(1, 2), deriv)[0])
