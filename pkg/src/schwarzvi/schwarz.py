"""Damped additive subspace-correction iteration for the obstacle problems.

One outer iteration solves, about the current feasible iterate u, the
constrained correction problem on every subdomain (and on the coarse space
in the two-level variant), then applies the damped sum of all corrections:

    u <- u + tau * (sum_k E_k w_k [+ P w_0])

with step tau in (0, 1/N_c], N_c the coloring number of the decomposition.
Each local correction problem is exactly the energy-difference problem

    min 1/2 w'A_k w - g_k'w,   g_k = restriction of (f - A u),

subject to keeping the vertex values below the obstacle, so its optimum is
nonpositive and zero is always admissible; with tau <= 1/N_c that makes the
energy nonincreasing and every iterate feasible.  Subproblems are mutually
independent; corrections are accumulated in a fixed order so runs are
reproducible.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, NonConvergenceError
from .qp import (
    BoundQP,
    DualQP,
    FactorCache,
    SchurBoundSolver,
    dual_coarse_solve,
    fbs_solve,
    feasibility_scale,
    pdas_solve,
    power_lipschitz,
)
from .subspaces import CoarseSpace, build_coarse_space, build_local_spaces, coloring_number


@dataclass
class SchwarzConfig:
    """Outer-iteration controls and subsolver tolerances."""

    levels: int = 2
    tau: float = 0.2
    max_outer: int = 1000
    tol: float = 1e-6
    local_solver: str = "pdas"
    coarse_solver: str = "dual-fbs"
    local_tol: float = 1e-12
    local_max_iter: int = 200
    coarse_tol: float = 1e-10
    coarse_budget: int = 3000
    threads: int = 1

    def validate(self):
        if self.levels not in (1, 2):
            raise ConfigurationError(f"levels must be 1 or 2, got {self.levels}")
        if not (self.tau > 0):
            raise ConfigurationError(f"step tau must be positive, got {self.tau}")
        if self.local_solver not in ("pdas", "fbs"):
            raise ConfigurationError(f"unknown local solver {self.local_solver!r}")
        if self.coarse_solver != "dual-fbs":
            raise ConfigurationError(f"unknown coarse solver {self.coarse_solver!r}")
        if self.max_outer < 1:
            raise ConfigurationError("max_outer must be at least 1")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")


@dataclass
class Subspaces:
    """Bundle of the local spaces and the optional coarse space."""

    locals: list
    coarse: Optional[CoarseSpace]
    coloring: int


def build_subspaces(dd, problem, levels=2):
    locals_ = build_local_spaces(dd, problem)
    coarse = build_coarse_space(dd, problem) if levels == 2 else None
    return Subspaces(
        locals=locals_,
        coarse=coarse,
        coloring=coloring_number(dd, two_level=(levels == 2)),
    )


@dataclass
class ConvergenceRecord:
    """Per-outer-iteration trace plus the final iterate.

    ``rel_errors`` holds the relative energy error against the reference when
    one was supplied, otherwise the relative energy decrease between
    consecutive iterations.
    """

    energies: np.ndarray
    rel_errors: np.ndarray
    violations: np.ndarray
    feasible_flags: np.ndarray
    elapsed_ms: np.ndarray
    u: np.ndarray
    converged: bool
    reference_energy: Optional[float] = None

    @property
    def n_outer(self):
        return self.energies.size - 1

    def iterations_to(self, level):
        """First outer iteration whose recorded error is below ``level``."""
        below = np.flatnonzero(self.rel_errors <= level)
        return int(below[0]) if below.size else None


def local_subproblem(problem, space, u, residual=None, slack=None, A_local=None):
    """Bound QP of one subdomain's correction step about the iterate u.

    The linear term restricts the global gradient f - A u, so the objective
    equals the global energy change of the extended correction; the bounds
    are the obstacle slack at the subdomain's own vertices.  ``residual``
    and ``slack`` may pass precomputed global data; when omitted they are
    computed here and the iterate's feasibility is checked.
    """
    if residual is None or slack is None:
        if not problem.feasible(u):
            raise ConfigurationError("iterate is infeasible; corrections assume feasibility")
    if residual is None:
        residual = problem.f - problem.A @ u
    if slack is None:
        slack = problem.obstacle - problem.vertex_values(u)
    if A_local is None:
        sub = problem.A[space.dof_ids][:, space.dof_ids]
        A_local = np.asarray(sub.todense())
    return BoundQP(
        A=A_local,
        g=residual[space.dof_ids],
        bound_idx=space.bound_pos,
        bound=slack[space.bound_rows],
    )


def coarse_subproblem(problem, coarse, u, residual=None, slack=None):
    """Dual-form QP of the coarse correction step about the iterate u."""
    if residual is None:
        residual = problem.f - problem.A @ u
    if slack is None:
        slack = problem.obstacle - problem.vertex_values(u)
    return DualQP(
        solve=coarse.solve,
        G=coarse.G,
        Gt=coarse.Gt,
        g=coarse.Pt @ residual,
        c=slack,
        lipschitz=coarse.dual_lipschitz,
    )


def _coarse_objective(coarse, g0, w):
    return 0.5 * float(w @ (coarse.A0 @ w)) - float(g0 @ w)


def _independent_tight_rows(G, tight, weights):
    """Maximal independent subset of tight constraint rows, preferring rows
    the weights mark as important (current working set, dual multiplier)."""
    block = np.ascontiguousarray(G[tight].T)
    wmax = float(weights.max(initial=0.0))
    if wmax > 0:
        block = block * (1.0 + weights / wmax)[None, :]
    _, R, piv = sla.qr(block, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return tight[:0]
    rank = int(np.count_nonzero(diag > 1e-10 * diag[0]))
    return np.sort(tight[piv[:rank]])


def _restore_coarse_feasibility(
    coarse, g0, w0, slack, factor_cache, max_steps=200, warm=None, lam=None
):
    """Make the coarse correction exactly admissible without destroying it.

    The dual iterate's recovered primal may overshoot rows whose slack is
    (near) zero; uniform scaling would then wipe out the whole correction.
    Starting from the scaled (hence feasible) point, a primal active-set
    polish walks toward the equality-constrained minimizer of the current
    working set, taking the longest feasible step and dropping rows whose
    multiplier turns negative.  Deep contact makes the tight set massively
    degenerate (many more tight rows than the coarse dimension), so blocked
    steps reseed the working set with a maximal independent subset of all
    tight rows, weighted by the dual multiplier, instead of adding rows one
    at a time.  Every iterate stays feasible with a nonincreasing objective,
    so stopping at the step cap is safe; at termination with nonnegative
    multipliers the point is the exact constrained minimizer.

    Returns ``(w, working_set)``, substituting zero for any correction that
    fails to decrease the energy; ``warm`` seeds the working set from the
    previous outer iteration.
    """
    G, B = coarse.G, coarse.B
    Gw0 = G @ w0
    w_un = coarse.solve(g0)
    w = feasibility_scale(Gw0, slack) * w0
    Gw = G @ w
    working = np.empty(0, dtype=int)
    step_tol = 1e-13 * (1.0 + float(np.abs(slack).max(initial=0.0)))
    lam = np.zeros(slack.shape[0]) if lam is None else lam

    def equality_point(rows):
        key = rows.tobytes()
        cho_s = factor_cache.get(key) if factor_cache is not None else None
        if cho_s is None:
            S = G[rows] @ B[:, rows]
            S = 0.5 * (S + S.T)
            try:
                cho_s = sla.cho_factor(S, check_finite=False)
            except sla.LinAlgError:
                return None, None
            if factor_cache is not None:
                factor_cache.put(key, cho_s)
        mu = sla.cho_solve(cho_s, G[rows] @ w_un - slack[rows], check_finite=False)
        return w_un - B[:, rows] @ mu, mu

    def reseed(current):
        tight = np.flatnonzero(slack - Gw <= step_tol)
        if tight.size == 0:
            return current
        weights = lam[tight].copy()
        weights[np.isin(tight, current)] += weights.max(initial=0.0) + 1.0
        seeded = _independent_tight_rows(G, tight, weights)
        return seeded if seeded.size else current

    restarted = False
    if warm is not None and warm.size:
        # restart on the previous working set when its equality point is
        # still admissible; transitions then reuse one cached factorization
        w_eq, _ = equality_point(warm)
        if w_eq is not None:
            Gw_eq = G @ w_eq
            if np.all(Gw_eq <= slack + step_tol):
                w, Gw, working = w_eq, Gw_eq, warm
                restarted = True
    if not restarted:
        # a cold start in deep contact sits on a large degenerate tight set;
        # seed the working set from it instead of discovering rows one by one
        working = reseed(working)

    stalled = False
    for _ in range(max_steps):
        if working.size == 0:
            target, mu = w_un, None
        else:
            target, mu = equality_point(working)
            if target is None:
                break

        d = target - w
        if np.abs(d).max(initial=0.0) <= 1e-13 * (1.0 + np.abs(w).max(initial=0.0)):
            if mu is None or np.all(mu >= -step_tol):
                break
            working = working[mu > -step_tol]
            continue

        Gd = G @ d
        room = slack - Gw
        ahead = (Gd > step_tol) & (room < Gd)  # rows blocking before a full step
        ahead[working] = False
        if np.any(ahead):
            rows = np.flatnonzero(ahead)
            ratios = np.maximum(room[rows], 0.0) / Gd[rows]
            k = int(np.argmin(ratios))
            t = min(1.0, float(ratios[k]))
            w = w + t * d
            Gw = G @ w
            if t <= 1e-12 and stalled:
                # degenerate vertex: reseed from the whole tight set
                working = reseed(working)
                stalled = False
            else:
                stalled = t <= 1e-12
                working = np.sort(np.append(working, rows[k]))
        else:
            stalled = False
            w = target
            Gw = G @ w
            if mu is None or np.all(mu >= -step_tol):
                break
            working = working[mu > -step_tol]

    if _coarse_objective(coarse, g0, w) > 0.0 or np.any(Gw > slack + step_tol):
        return np.zeros_like(w0), working
    return w, working


class _LocalWorker:
    """Per-subdomain solver state: dense operator, warm start, Schur reducer."""

    def __init__(self, problem, space, config):
        self.space = space
        sub = problem.A[space.dof_ids][:, space.dof_ids]
        self.A = np.asarray(sub.todense())
        self.config = config
        self.w = np.zeros(space.dim)
        self.active = np.zeros(space.bound_pos.size, dtype=bool)
        self.reducer = SchurBoundSolver(self.A) if config.local_solver == "pdas" else None
        self.lipschitz = None

    def solve(self, residual, slack):
        qp = BoundQP(
            A=self.A,
            g=residual[self.space.dof_ids],
            bound_idx=self.space.bound_pos,
            bound=slack[self.space.bound_rows],
        )
        if self.config.local_solver == "pdas":
            w, active_idx = pdas_solve(
                qp,
                w0=self.w,
                tol=self.config.local_tol,
                max_iter=self.config.local_max_iter,
                active0=self.active,
                reducer=self.reducer,
            )
            self.active = np.zeros(self.space.bound_pos.size, dtype=bool)
            self.active[np.searchsorted(self.space.bound_pos, active_idx)] = True
        else:
            if self.lipschitz is None:
                self.lipschitz = power_lipschitz(lambda x: self.A @ x, self.space.dim)
            w = fbs_solve(
                qp,
                w0=qp.project(self.w),
                tol=self.config.local_tol,
                lipschitz=self.lipschitz,
            )
        self.w = w
        return w


def schwarz_solve(problem, dd, spaces, config, u0=None, reference_energy=None):
    """Run the damped additive iteration; returns a ConvergenceRecord.

    Stops when the relative energy error against ``reference_energy`` (or,
    without a reference, the relative energy decrease) drops below
    ``config.tol``, or at ``config.max_outer``.  The start iterate must be
    feasible (the zero default is feasible whenever the obstacle is
    nonnegative).
    """
    config.validate()
    if config.levels == 2 and spaces.coarse is None:
        raise ConfigurationError("two-level configuration needs a coarse space")
    n_c = spaces.coloring
    if config.tau > 1.0 / n_c + 1e-12:
        warnings.warn(
            f"step tau={config.tau} exceeds 1/N_c = {1.0 / n_c:.4g}; "
            "monotonicity and feasibility are no longer guaranteed",
            stacklevel=2,
        )

    u = np.zeros(problem.n_free) if u0 is None else np.array(u0, dtype=float)
    if u.shape != problem.f.shape:
        raise ConfigurationError("start iterate has the wrong dimension")
    if not problem.feasible(u):
        raise ConfigurationError("start iterate is infeasible")

    workers = [_LocalWorker(problem, s, config) for s in spaces.locals]
    coarse = spaces.coarse if config.levels == 2 else None
    warm_lam = None
    warm_set = None
    coarse_cache = FactorCache(capacity=24) if coarse is not None else None

    t0 = time.perf_counter()
    Au = problem.A @ u
    energy = 0.5 * float(u @ Au) - float(problem.f @ u)

    energies = [energy]
    viols = [problem.violation(u)]
    feas = [problem.feasible(u)]
    times = [0.0]
    rel = [_relative_error(energy, None, reference_energy)]

    converged = False
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for _ in range(config.max_outer):
            residual = problem.f - Au
            slack = problem.obstacle - problem.vertex_values(u)

            if pool is not None:
                corrections = list(pool.map(lambda w: w.solve(residual, slack), workers))
            else:
                corrections = [w.solve(residual, slack) for w in workers]

            step = np.zeros(problem.n_free)
            for worker, w in zip(workers, corrections):
                step[worker.space.dof_ids] += w

            if coarse is not None:
                dual = DualQP(
                    solve=coarse.solve,
                    G=coarse.G,
                    Gt=coarse.Gt,
                    g=coarse.Pt @ residual,
                    c=slack,
                    lipschitz=coarse.dual_lipschitz,
                )
                try:
                    w0, warm_lam = dual_coarse_solve(
                        dual,
                        tol=config.coarse_tol,
                        max_iter=config.coarse_budget,
                        lam0=warm_lam,
                    )
                except NonConvergenceError as err:
                    # Partially converged coarse correction: the restoration
                    # below makes the iterate admissible either way, and the
                    # warm-started multiplier keeps improving across outer
                    # iterations, so spending the budget is enough.
                    w0, warm_lam = err.iterate, err.multiplier
                w0, warm_set = _restore_coarse_feasibility(
                    coarse, dual.g, w0, slack, coarse_cache, warm=warm_set, lam=warm_lam
                )
                step += coarse.P @ w0

            u = u + config.tau * step
            Au = problem.A @ u
            prev_energy = energy
            energy = 0.5 * float(u @ Au) - float(problem.f @ u)

            energies.append(energy)
            viols.append(problem.violation(u))
            feas.append(problem.feasible(u))
            times.append((time.perf_counter() - t0) * 1e3)
            rel.append(_relative_error(energy, prev_energy, reference_energy))

            if rel[-1] < config.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    return ConvergenceRecord(
        energies=np.array(energies),
        rel_errors=np.array(rel),
        violations=np.array(viols),
        feasible_flags=np.array(feas),
        elapsed_ms=np.array(times),
        u=u,
        converged=converged,
        reference_energy=reference_energy,
    )


def _relative_error(energy, prev_energy, reference_energy):
    if reference_energy is not None:
        return (energy - reference_energy) / abs(reference_energy)
    if prev_energy is None:
        return np.inf
    return abs(energy - prev_energy) / (1.0 + abs(energy))


def solve_reference(problem, tol=1e-12, max_iter=200):
    """Reference solution by the primal-dual active set method on the full problem."""
    cols = problem.value_matrix.indices  # one entry per row: the value DOF position
    qp = BoundQP(
        A=problem.A,
        g=problem.f,
        bound_idx=cols,
        bound=problem.obstacle,
    )
    w, _ = pdas_solve(qp, tol=tol, max_iter=max_iter)
    return w
