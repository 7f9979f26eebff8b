"""Solvers for the constrained quadratic subproblems.

All subproblems minimize 1/2 w'Aw - g'w with SPD A.  Local problems carry
upper bounds on a subset of components (the vertex-value DOFs) and are
solved either by a primal-dual active set iteration or by projected
gradient (forward-backward) steps.  The coarse problem carries general
inequality rows G w <= c and is solved through its nonnegativity-constrained
dual, again by projected gradient, with the primal recovered from the cached
factorization of A.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NonConvergenceError, SolverError


@dataclass
class BoundQP:
    """min 1/2 w'Aw - g'w  s.t.  w[bound_idx] <= bound (other components free)."""

    A: object
    g: np.ndarray
    bound_idx: np.ndarray
    bound: np.ndarray

    def __post_init__(self):
        self.bound_idx = np.asarray(self.bound_idx, dtype=int)
        self.bound = np.asarray(self.bound, dtype=float)
        if self.bound_idx.shape != self.bound.shape:
            raise ConfigurationError("bound index/value length mismatch")
        if not np.all(np.isfinite(self.bound)):
            raise ConfigurationError("bounds must be finite where constrained")

    @property
    def dim(self):
        return self.g.shape[0]

    def objective(self, w):
        return 0.5 * float(w @ (self.A @ w)) - float(self.g @ w)

    def project(self, w):
        out = np.array(w, dtype=float)
        out[self.bound_idx] = np.minimum(out[self.bound_idx], self.bound)
        return out


@dataclass
class DualQP:
    """min 1/2 w'Aw - g'w  s.t.  G w <= c, handled through the nonnegative dual.

    ``solve`` applies the cached inverse of the SPD matrix A.  For a dual
    iterate lam >= 0 the recovered primal is w = A^{-1}(g - G'lam), so
    A w = g - G'lam holds in closed form and both objectives below avoid any
    extra matrix application.  ``lipschitz`` may carry a precomputed bound on
    the dual Hessian G A^{-1} G'.  ``Gt`` caches the transpose; the dual
    iteration applies both maps every step.
    """

    solve: Callable
    G: object
    g: np.ndarray
    c: np.ndarray
    lipschitz: Optional[float] = None
    Gt: object = None

    def __post_init__(self):
        if self.Gt is None:
            self.Gt = self.G.T
            if sp.issparse(self.Gt):
                self.Gt = self.Gt.tocsr()

    def recover(self, lam):
        return self.solve(self.g - self.Gt @ lam)

    def primal_objective(self, w, lam, theta=1.0):
        """Objective of theta * w where w is the primal recovered from lam."""
        Aw = self.g - self.Gt @ lam
        return 0.5 * theta**2 * float(w @ Aw) - theta * float(self.g @ w)

    def dual_value(self, w, lam, Gw=None):
        """Lower bound on the primal optimum: the negated dual objective."""
        if Gw is None:
            Gw = self.G @ w
        Aw = self.g - self.Gt @ lam
        lagr = 0.5 * float(w @ Aw) - float(self.g @ w) + float(lam @ (Gw - self.c))
        return lagr


def spd_solve(A, rhs, tol=1e-10, max_iter=None):
    """Solve SPD A x = rhs: Cholesky when dense, Jacobi-preconditioned CG when sparse.

    Guarantees ||A x - rhs|| <= tol * ||rhs|| or raises ``SolverError`` with
    the last residual attached.
    """
    rhs = np.asarray(rhs, dtype=float)
    nrm = np.linalg.norm(rhs)
    if nrm == 0.0:
        return np.zeros_like(rhs)
    if sp.issparse(A):
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise SolverError("matrix has nonpositive diagonal; not SPD")
        M = spla.LinearOperator(A.shape, matvec=lambda x: x / diag)
        max_iter = max_iter if max_iter is not None else 10 * A.shape[0]
        x, _ = spla.cg(A, rhs, rtol=min(tol, 1e-10) * 0.05, atol=0.0, maxiter=max_iter, M=M)
        res = np.linalg.norm(A @ x - rhs)
        if res > tol * nrm:
            raise SolverError(
                f"conjugate gradients stalled: residual {res:.3e} > {tol:.1e} * ||rhs||",
                iterate=x,
                residual=res,
            )
        return x
    x = sla.cho_solve(sla.cho_factor(A), rhs)
    res = np.linalg.norm(A @ x - rhs)
    if res > tol * nrm:
        raise SolverError(f"factorized solve residual {res:.3e} too large", iterate=x, residual=res)
    return x


def power_lipschitz(matvec, dim, iters=50, margin=1.05):
    """Spectral-norm estimate by power iteration with a safety margin.

    Deterministic start vector; 50 iterations and a 5% margin are enough of a
    bound for the step sizes used here.
    """
    x = np.ones(dim) + 1e-3 * np.arange(dim) / max(dim - 1, 1)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = matvec(x)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        lam = float(x @ y)
        x = y / nrm
    return margin * max(lam, nrm)


class FactorCache:
    """Small FIFO cache of reduced-system factorizations keyed by active-set bytes."""

    def __init__(self, capacity=40):
        self.capacity = capacity
        self._store = {}

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value):
        if len(self._store) >= self.capacity:
            self._store.pop(next(iter(self._store)))
        self._store[key] = value


class SchurBoundSolver:
    """Reduced solves for varying active sets from one dense factorization.

    Factors A once; a solve with components F pinned to b uses the identity
    w = A^{-1} g~ - A^{-1}E_F nu with nu from the small Schur system
    (E_F' A^{-1} E_F) nu = E_F' A^{-1} g~ - b, so changing the active set
    costs a few cached column solves instead of a fresh factorization.
    """

    def __init__(self, A):
        self.A = np.asarray(A)
        self._cho = sla.cho_factor(self.A, check_finite=False)
        self._columns = {}

    def full_solve(self, rhs):
        return sla.cho_solve(self._cho, rhs, check_finite=False)

    def _column(self, j):
        col = self._columns.get(j)
        if col is None:
            e = np.zeros(self.A.shape[0])
            e[j] = 1.0
            col = sla.cho_solve(self._cho, e, check_finite=False)
            self._columns[j] = col
        return col

    def pinned_solve(self, fixed, bvals, g):
        """Solve (A w)_I = g_I with w[fixed] = bvals."""
        z = self.full_solve(g)
        if fixed.size == 0:
            return z
        cols = np.column_stack([self._column(int(j)) for j in fixed])
        S = cols[fixed, :]
        S = 0.5 * (S + S.T)
        nu = sla.solve(S, z[fixed] - bvals, assume_a="pos", check_finite=False)
        w = z - cols @ nu
        w[fixed] = bvals
        return w


def pdas_solve(qp, w0=None, tol=1e-12, max_iter=100, active0=None, cache=None, reducer=None):
    """Primal-dual active set iteration for a bound QP.

    The active set is predicted componentwise from lambda + (w - b) > 0
    (unit coupling constant), the equality-constrained reduced system is
    solved, and the iteration stops once the active set repeats -- the
    iterate is then the exact KKT point -- or once the relative A-norm
    increment falls below ``tol`` at a feasible iterate.  Returns
    ``(w, active_idx)``.  ``active0`` seeds the prediction (defaults to the
    bounds violated by ``w0``); ``cache`` may hold factorizations of reduced
    systems across calls with identical A; ``reducer`` (a SchurBoundSolver
    over the same A) replaces the per-active-set factorization with cheap
    Schur updates.
    """
    n = qp.dim
    idx = qp.bound_idx
    b = qp.bound
    dense = not sp.issparse(qp.A)
    A = qp.A

    w = np.zeros(n) if w0 is None else np.asarray(w0, dtype=float)
    if active0 is not None:
        active = np.asarray(active0, dtype=bool).copy()
    else:
        active = w[idx] > b

    w_prev = None
    for _ in range(max_iter):
        fixed = idx[active]
        inactive = np.ones(n, dtype=bool)
        inactive[fixed] = False
        bvals = b[active]
        key = active.tobytes()
        hit = cache.get(key) if cache is not None else None

        if not np.any(inactive):
            w_new = np.zeros(n)
            w_new[fixed] = bvals
        elif reducer is not None:
            w_new = reducer.pinned_solve(fixed, bvals, qp.g)
        elif dense:
            ii = np.flatnonzero(inactive)
            rhs = qp.g[ii]
            if fixed.size:
                rhs = rhs - A[np.ix_(ii, fixed)] @ bvals
            if hit is None:
                hit = sla.cho_factor(A[np.ix_(ii, ii)], check_finite=False)
                if cache is not None:
                    cache.put(key, hit)
            w_in = sla.cho_solve(hit, rhs, check_finite=False)
            w_new = np.empty(n)
            w_new[ii] = w_in
            w_new[fixed] = bvals
        else:
            rhs = qp.g[inactive]
            if fixed.size:
                rhs = rhs - np.asarray(A[:, fixed] @ bvals).ravel()[inactive]
            if hit is None:
                hit = spla.splu(A[inactive][:, inactive].tocsc())
                if cache is not None:
                    cache.put(key, hit)
            w_in = hit.solve(rhs)
            w_new = np.empty(n)
            w_new[inactive] = w_in
            w_new[fixed] = bvals

        resid = A @ w_new - qp.g
        lam = np.zeros(idx.size)
        lam[active] = -resid[fixed]
        new_active = (lam + (w_new[idx] - b)) > 0.0

        if np.array_equal(new_active, active):
            return w_new, idx[active]
        if w_prev is not None:
            dw = w_new - w_prev
            inc = np.sqrt(max(float(dw @ (A @ dw)), 0.0))
            ref = np.sqrt(max(float(w_prev @ (A @ w_prev)), 0.0))
            feas = np.all(w_new[idx] <= b + 1e-14 * (1.0 + np.abs(b)))
            if ref > 0 and inc <= tol * ref and feas and np.all(lam >= -1e-14):
                return w_new, idx[active]
        active = new_active
        w_prev = w_new

    raise NonConvergenceError(
        f"active set did not settle within {max_iter} iterations",
        iterate=w_prev,
    )


def fbs_solve(qp, w0=None, tol=1e-12, max_iter=200_000, lipschitz=None, callback=None):
    """Projected gradient (forward-backward) iteration for a bound QP.

    Steps of length 1/L with L a safeguarded spectral bound keep the
    objective nonincreasing, and the projection (componentwise clip at the
    bounds) keeps every iterate feasible.  Stops when the A-norm of the
    increment is below ``tol`` relative to the iterate scale.
    """
    A = qp.A
    L = lipschitz if lipschitz is not None else power_lipschitz(lambda x: A @ x, qp.dim)
    if L <= 0:
        L = 1.0
    w = qp.project(np.zeros(qp.dim) if w0 is None else np.asarray(w0, dtype=float))
    if callback is not None:
        callback(w)
    Aw = A @ w
    floor = np.linalg.norm(qp.g) / np.sqrt(L) + 1e-300
    for _ in range(max_iter):
        w_new = qp.project(w - (Aw - qp.g) / L)
        Aw_new = A @ w_new
        dw = w_new - w
        inc = np.sqrt(max(float(dw @ (Aw_new - Aw)), 0.0))
        w, Aw = w_new, Aw_new
        if callback is not None:
            callback(w)
        scale = np.sqrt(max(float(w @ Aw), 0.0))
        if inc <= tol * max(scale, floor):
            break
    return w


def feasibility_scale(Gw, c):
    """Largest theta in [0, 1] with theta * Gw <= c, assuming c >= 0."""
    viol = Gw > c
    if not np.any(viol):
        return 1.0
    ratios = c[viol] / Gw[viol]
    return float(max(0.0, min(1.0, ratios.min())))


def dual_coarse_solve(qp, tol=1e-10, max_iter=200_000, lam0=None, history=None):
    """Projected gradient on the nonnegative dual of  min 1/2 w'Aw - g'w, Gw <= c.

    Each dual iterate recovers the primal w = A^{-1}(g - G'lam); at the dual
    solution the recovered primal is the constrained minimizer.  Stops when
    the recovered primal violates no row by more than tol*(1 + max|c|) and
    the complementarity gap lam'(c - Gw) is of the same order; also stops at
    an exact fixed point of the projected step.  Returns ``(w, lam)``;
    raises ``NonConvergenceError`` at the iteration cap.

    ``history`` (a list, when given) records per-iteration dictionaries with
    the dual lower bound and the objective of the feasibility-scaled primal,
    used by the duality diagnostics.
    """
    G = qp.G
    c = np.asarray(qp.c, dtype=float)
    m = c.shape[0]
    lam = np.zeros(m) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), 0.0)

    L = qp.lipschitz
    if L is None:
        L = power_lipschitz(lambda x: G @ qp.solve(qp.Gt @ x), m)
    if L <= 0:
        L = 1.0

    cscale = 1.0 + float(np.abs(c).max(initial=0.0))
    w = qp.recover(lam)
    viol = gap = np.inf
    for _ in range(max_iter):
        Gw = G @ w
        if history is not None:
            theta = feasibility_scale(Gw, c)
            history.append(
                {
                    "dual_bound": qp.dual_value(w, lam, Gw),
                    "primal_feasible_objective": qp.primal_objective(w, lam, theta),
                    "theta": theta,
                }
            )
        viol = float(np.maximum(Gw - c, 0.0).max(initial=0.0))
        gap = float(lam @ (c - Gw))
        lscale = max(1.0, float(np.abs(lam).max(initial=0.0)))
        if viol <= tol * cscale and abs(gap) <= tol * cscale * lscale:
            return w, lam
        lam_new = np.maximum(lam - (c - Gw) / L, 0.0)
        if np.array_equal(lam_new, lam):
            return w, lam
        lam = lam_new
        w = qp.recover(lam)
    err = NonConvergenceError(
        f"dual projected gradient did not converge in {max_iter} iterations "
        f"(violation {viol:.3e}, gap {gap:.3e})",
        iterate=w,
        residual=viol,
    )
    err.multiplier = lam
    raise err
