"""Sign-preserving linear interpolation of C1 grid functions on vertex patches.

Given a smooth grid function v and a patch around a coarse vertex, the goal
is a patchwise-linear function squeezed between 0 and v at every fine vertex
of the patch: where v > 0 it stays in [0, v], where v < 0 in [v, 0], and it
vanishes where v does.  No fixed linear map can do this, so the construction
is nonlinear and case-based:

* If the sampled gradient directions of v spread over more than half the
  admissible angle (v is "unbiased"), a constant equal to the sample value
  of smallest magnitude works, snapped to zero whenever the samples straddle
  zero (a sign change forces the true infimum of |v| to be zero).
* Otherwise v varies essentially along one direction, and a one-dimensional
  argument produces a linear function that touches v at a vertex: starting
  from the vertex of smallest |v|, the fine vertices inside a narrow double
  cone around the level-line direction are collinear (a consequence of the
  minimum-angle property of the vertex lattice), and scaling the distance
  to that line by the worst value/distance ratio gives the touching linear
  lower (upper) bound.  Up to three such linear stages are subtracted; the
  residual then has gradients vanishing in two well-separated directions
  and the remaining correction is zero.

Combining the per-patch functions with the partition of unity gives a
coarse-space function with the same vertexwise sign sandwich globally, which
is what keeps coarse corrections of an obstacle-constrained iteration
feasible.

The admissible cone angle comes from the minimum sine of angles formed by
noncollinear lattice points: enumerated exactly for small patches and
bounded below by 1/(2 m^2) for an m-cell patch in general.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import bfs
from .errors import ConfigurationError, ConstructionError
from .grid import Patch


@lru_cache(maxsize=None)
def _min_sine_cached(m):
    pts = np.array([(i, j) for j in range(m + 1) for i in range(m + 1)], dtype=float)
    best = np.inf
    witness = None
    for p2 in pts:
        d = pts - p2
        norms = np.linalg.norm(d, axis=1)
        keep = norms > 0
        d = d[keep]
        norms = norms[keep]
        cross = np.abs(np.outer(d[:, 0], d[:, 1]) - np.outer(d[:, 1], d[:, 0]))
        denom = np.outer(norms, norms)
        sines = np.where(cross > 0, cross / denom, np.inf)
        k = np.argmin(sines)
        i, j = np.unravel_index(k, sines.shape)
        if sines[i, j] < best:
            best = float(sines[i, j])
            witness = (
                tuple(int(x) for x in (d[i] + p2)),
                tuple(int(x) for x in p2),
                tuple(int(x) for x in (d[j] + p2)),
            )
    return best, witness


def min_sine_angle(m, with_witness=False):
    """Minimum sine of the angle at the middle point over all noncollinear
    triples of the (m+1) x (m+1) integer lattice, by exhaustive enumeration.

    Capped at m <= 8 (the enumeration grows like m^6).
    """
    if not (1 <= m <= 8):
        raise ConfigurationError(f"exhaustive angle search supports 1 <= m <= 8, got {m}")
    best, witness = _min_sine_cached(int(m))
    if with_witness:
        return best, witness
    return best


def patch_alpha(width_cells):
    """Admissible cone angle for a patch of the given cell width: the arcsine
    of the exact lattice minimum when enumerable, else of the 1/(2 m^2) bound."""
    m = int(width_cells)
    if m < 1:
        raise ConfigurationError(f"patch width must be >= 1 cell, got {m}")
    sine = _min_sine_cached(m)[0] if m <= 8 else 1.0 / (2.0 * m * m)
    return float(np.arcsin(sine))


@dataclass(frozen=True)
class BiasReport:
    """Outcome of the gradient-direction spread test on a patch."""

    biased: bool
    spread: float
    points: np.ndarray

    @property
    def n_samples(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class PatchInterpolant:
    """Linear function c0 + c1 (x - cx) + c2 (y - cy) on one patch.

    ``stages`` traces which construction branches fired ("linear" entries
    and/or a final "constant").
    """

    center: tuple
    coeffs: tuple
    stages: tuple

    def __call__(self, x, y):
        c0, c1, c2 = self.coeffs
        return c0 + c1 * (np.asarray(x) - self.center[0]) + c2 * (np.asarray(y) - self.center[1])

    @property
    def gradient(self):
        return self.coeffs[1], self.coeffs[2]


class _PatchSamples:
    """Values and gradients of a grid function at patch vertices and cell centers.

    Vertex data comes straight from the DOF vector; center data from bicubic
    evaluation.  Linear stages are subtracted analytically.
    """

    def __init__(self, dofs, grid, patch):
        self.patch = patch
        self.lattice = patch.vertex_lattice()
        self.vids = patch.vertex_ids(grid)
        self.vertex_xy = self.lattice / grid.n
        self.v = dofs[4 * self.vids].astype(float).copy()
        self.grad_v = np.column_stack((dofs[4 * self.vids + 1], dofs[4 * self.vids + 2]))
        centers = patch.cell_centers(grid)
        self.center_xy = centers
        self.cv = bfs.evaluate_batch(dofs, grid, centers)
        self.grad_c = np.column_stack(
            (
                bfs.evaluate_batch(dofs, grid, centers, (1, 0)),
                bfs.evaluate_batch(dofs, grid, centers, (0, 1)),
            )
        )

    def subtract(self, interpolant):
        c1, c2 = interpolant.gradient
        self.v -= interpolant(self.vertex_xy[:, 0], self.vertex_xy[:, 1])
        self.cv -= interpolant(self.center_xy[:, 0], self.center_xy[:, 1])
        self.grad_v -= (c1, c2)
        self.grad_c -= (c1, c2)

    @property
    def all_points(self):
        return np.vstack((self.vertex_xy, self.center_xy))

    @property
    def all_values(self):
        return np.concatenate((self.v, self.cv))

    @property
    def all_grads(self):
        return np.vstack((self.grad_v, self.grad_c))


def _spread(grads, scale):
    """Minimal width (radians) of an arc of the half-turn circle containing
    all gradient directions; None when some sampled gradient vanishes."""
    norms = np.linalg.norm(grads, axis=1)
    if np.any(norms <= 1e-12 * scale):
        return None
    theta = np.mod(np.arctan2(grads[:, 1], grads[:, 0]), np.pi)
    theta = np.sort(theta)
    if theta.size == 1:
        return 0.0
    gaps = np.diff(theta)
    wrap = theta[0] + np.pi - theta[-1]
    return float(np.pi - max(gaps.max(), wrap))


def _bias_of_samples(samples, alpha):
    grads = samples.all_grads
    scale = float(np.linalg.norm(grads, axis=1).max(initial=0.0))
    spread = _spread(grads, scale if scale > 0 else 1.0)
    if spread is None:
        return BiasReport(biased=False, spread=np.pi, points=samples.all_points)
    if spread > alpha / 2.0:
        return BiasReport(biased=False, spread=spread, points=samples.all_points)
    # Directions stay in a narrow double cone, but if the projection onto the
    # cone axis reverses sign between samples, continuity forces the gradient
    # to vanish somewhere inside the (convex) patch: unbiased after all.
    axis = grads[int(np.argmax(np.linalg.norm(grads, axis=1)))]
    proj = grads @ (axis / np.linalg.norm(axis))
    if proj.min() < 0.0 < proj.max():
        return BiasReport(biased=False, spread=np.pi, points=samples.all_points)
    return BiasReport(biased=True, spread=spread, points=samples.all_points)


def gradient_bias(dofs, grid, patch, alpha):
    """Test whether the function's gradient directions on the patch stay
    within a cone of half-angle alpha/2 (sampled at vertices and centers).

    A vanishing sampled gradient counts as unbiased: it admits constraints
    in every direction.
    """
    if not (0 < alpha < np.pi / 2):
        raise ConfigurationError(f"alpha must lie in (0, pi/2), got {alpha}")
    return _bias_of_samples(_PatchSamples(dofs, grid, patch), alpha)


def _linear_stage(samples, alpha, patch):
    """One touching linear function for a biased residual; see module docstring."""
    v = samples.v
    lattice = samples.lattice
    k0 = int(np.argmin(np.abs(v)))
    p0 = lattice[k0]
    g0 = samples.grad_v[k0]
    ng = np.linalg.norm(g0)
    if ng == 0.0:
        raise ConstructionError(
            "vanishing gradient at the minimum-|v| vertex of a biased function",
            vertex=tuple(int(x) for x in p0),
        )
    tangent = np.array([-g0[1], g0[0]]) / ng

    d = lattice - p0
    dn = np.linalg.norm(d, axis=1)
    cross = np.abs(tangent[0] * d[:, 1] - tangent[1] * d[:, 0])
    in_cone = np.zeros(lattice.shape[0], dtype=bool)
    nz = dn > 0
    in_cone[nz] = cross[nz] <= np.sin(alpha / 2.0) * dn[nz]
    in_cone[k0] = True

    cone_pts = np.flatnonzero(in_cone & nz)
    if cone_pts.size == 0:
        on_line = np.zeros(lattice.shape[0], dtype=bool)
        on_line[k0] = True
        normal = g0 / ng
    else:
        ref = cone_pts[np.argmax(dn[cone_pts])]
        direction = d[ref]
        det = d[cone_pts, 0] * direction[1] - d[cone_pts, 1] * direction[0]
        if np.any(det != 0):
            bad = cone_pts[np.flatnonzero(det != 0)[0]]
            raise ConstructionError(
                "fine vertices inside the level-line cone are not collinear; "
                "the cone angle is too wide for this patch",
                vertex=tuple(int(x) for x in lattice[bad]),
            )
        on_line = (d[:, 0] * direction[1] - d[:, 1] * direction[0]) == 0
        normal = np.array([-direction[1], direction[0]], dtype=float)
        normal /= np.linalg.norm(normal)
        if normal @ g0 < 0:
            normal = -normal
        if normal @ g0 == 0.0:
            raise ConstructionError(
                "level line degenerate: normal orthogonal to the gradient",
                vertex=tuple(int(x) for x in p0),
            )

    off = np.flatnonzero(~on_line)
    dist = (samples.vertex_xy[off] - samples.vertex_xy[k0]) @ normal
    ratios = v[off] / dist
    slope = float(ratios.min())
    touch = off[int(np.argmin(ratios))]

    cx, cy = patch.center
    c1 = slope * normal[0]
    c2 = slope * normal[1]
    c0 = slope * float((np.array([cx, cy]) - samples.vertex_xy[k0]) @ normal)
    ell = PatchInterpolant(center=patch.center, coeffs=(c0, c1, c2), stages=("linear",))
    return ell, int(touch)


def _check_sandwich(values, ell_values, lattice, tol):
    """Vertexwise sign conditions of the sandwich; returns a violating vertex or None."""
    pos = values > 0
    neg = values < 0
    zero = ~pos & ~neg
    bad = (
        (pos & ((ell_values < -tol) | (ell_values > values + tol)))
        | (neg & ((ell_values > tol) | (ell_values < values - tol)))
        | (zero & (np.abs(ell_values) > tol))
    )
    if np.any(bad):
        return tuple(int(x) for x in lattice[np.flatnonzero(bad)[0]])
    return None


def linear_touch(dofs, grid, patch, alpha):
    """Single-stage sandwiched linear function for a biased grid function.

    Verifies the sign sandwich and the touching condition at the fine
    vertices before returning; failures raise ``ConstructionError`` with a
    counterexample vertex.
    """
    samples = _PatchSamples(dofs, grid, patch)
    report = _bias_of_samples(samples, alpha)
    if not report.biased:
        raise ConfigurationError("linear_touch requires a biased function on the patch")
    ell, touch = _linear_stage(samples, alpha, patch)
    vals = ell(samples.vertex_xy[:, 0], samples.vertex_xy[:, 1])
    tol = 1e-10 * max(1.0, float(np.abs(samples.v).max(initial=0.0)))
    bad = _check_sandwich(samples.v, vals, samples.lattice, tol)
    if bad is not None:
        raise ConstructionError("sign sandwich violated by the linear stage", vertex=bad)
    if abs(vals[touch] - samples.v[touch]) > tol:
        raise ConstructionError(
            "touching condition failed at the designated vertex",
            vertex=tuple(int(x) for x in samples.lattice[touch]),
        )
    return ell


def patch_linearize(dofs, grid, patch, alpha=None):
    """Sign-preserving linear fit of a grid function on one patch.

    Runs up to three touching linear stages while the residual stays biased,
    otherwise takes the snapped minimum-magnitude constant.  The result is
    verified vertexwise against the original function; a failed sweep raises
    ``ConstructionError`` rather than returning a bad interpolant.
    """
    if alpha is None:
        alpha = patch_alpha(patch.width_cells)
    if not (0 < alpha < np.pi / 2):
        raise ConfigurationError(f"alpha must lie in (0, pi/2), got {alpha}")

    samples = _PatchSamples(dofs, grid, patch)
    original_v = samples.v.copy()
    coeffs = np.zeros(3)
    stages = []
    report = _bias_of_samples(samples, alpha)
    if not report.biased:
        # unbiased from the start: constant touching the smallest sample
        # magnitude, snapped to zero when the samples straddle zero (a sign
        # change forces the infimum of |v| over the patch to be zero)
        values = samples.all_values
        c = float(values[np.argmin(np.abs(values))])
        if values.min(initial=0.0) < 0.0 < values.max(initial=0.0):
            c = 0.0
        coeffs[0] = c
        stages.append("constant")
    else:
        # touching linear stages while the residual stays biased; after three
        # the residual vanishes at three noncollinear vertices, so it cannot
        # stay biased and no further correction is taken
        while len(stages) < 3 and report.biased:
            ell, _ = _linear_stage(samples, alpha, patch)
            coeffs += np.asarray(ell.coeffs)
            stages.append("linear")
            samples.subtract(ell)
            if len(stages) < 3:
                report = _bias_of_samples(samples, alpha)

    result = PatchInterpolant(center=patch.center, coeffs=tuple(coeffs), stages=tuple(stages))
    vals = result(samples.vertex_xy[:, 0], samples.vertex_xy[:, 1])
    tol = 1e-10 * max(1.0, float(np.abs(original_v).max(initial=0.0)))
    bad = _check_sandwich(original_v, vals, samples.lattice, tol)
    if bad is not None:
        raise ConstructionError(
            "sign sandwich violated after the patch construction", vertex=bad
        )
    return result


def coarse_linearize(dofs, grid, dd, coarse_space, alpha=None):
    """Coarse-space coefficients of the sign-preserving fit over all patches.

    Runs the patch construction on every interior coarse vertex and returns
    the coefficient vector in the coarse basis (per-vertex constants and
    centered slopes multiply the partition of unity), plus the per-patch
    interpolants keyed by coarse vertex.
    """
    coeffs = np.zeros(coarse_space.dim)
    fits = {}
    for col, (I, J, mono) in enumerate(coarse_space.dofs):
        if mono != 0:
            continue
        patch = dd.patches[(I, J)]
        fit = patch_linearize(dofs, grid, patch, alpha=alpha)
        fits[(I, J)] = fit
        coeffs[col] = fit.coeffs[0]
        coeffs[col + 1] = fit.coeffs[1]
        coeffs[col + 2] = fit.coeffs[2]
    return coeffs, fits
