"""Experiment definitions, reference handling, and CSV output.

Two model problems are built in:

* ``plate``   - clamped plate pressed into a paraboloid obstacle:
  f = 1000, psi(x, y) = 1/2 - (x - 1/2)^2 - (y - 1/2)^2.
* ``control`` - distributed control energy with a flat bound:
  beta = 1e-4, f(x, y) = sin(4 pi x y) + 3/2, psi = 1.

An experiment assembles the chosen problem, obtains a reference energy
(computed by the active-set method, loaded from a cache file, or skipped),
runs the one- or two-level iteration, and writes one CSV row per outer
iteration.  Without a reference the error column reports the relative energy
decrease instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bfs
from .assembly import ProblemSpec, assemble
from .errors import ConfigurationError
from .grid import build_decomposition
from .schwarz import SchwarzConfig, build_subspaces, schwarz_solve, solve_reference

CSV_HEADER = "iter,energy,rel_energy_error,max_violation,elapsed_ms"


def plate_problem():
    """Clamped-plate obstacle problem: constant load against a paraboloid."""
    return ProblemSpec(
        form="plate",
        load=bfs.ScalarField.constant(1e3),
        obstacle=bfs.ScalarField(
            value=lambda x, y: 0.5 - (x - 0.5) ** 2 - (y - 0.5) ** 2,
            dx=lambda x, y: -2.0 * (x - 0.5) + 0.0 * y,
            dy=lambda x, y: -2.0 * (y - 0.5) + 0.0 * x,
        ),
    )


def control_problem(beta=1e-4):
    """Distributed control problem: oscillatory load under a flat bound."""
    return ProblemSpec(
        form="control",
        beta=beta,
        load=bfs.ScalarField(value=lambda x, y: np.sin(4.0 * np.pi * x * y) + 1.5),
        obstacle=bfs.ScalarField.constant(1.0),
    )


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs."""

    problem: str = "plate"
    n: int = 16
    ratio: int = 8
    overlap: int = 2
    levels: int = 2
    tau: float = 0.2
    tol: float = 1e-6
    max_outer: int = 1000
    local_solver: str = "pdas"
    threads: int = 1
    beta: float = 1e-4
    out: str = "experiment.csv"
    reference: str = "compute"
    seed: Optional[int] = None

    def validate(self):
        if self.problem not in ("plate", "control"):
            raise ConfigurationError(f"unknown problem {self.problem!r}")
        if self.reference != "compute" and self.reference != "none" and not str(
            self.reference
        ).startswith("load:"):
            raise ConfigurationError(
                f"reference policy must be compute, none, or load:<path>, got {self.reference!r}"
            )

    def problem_spec(self):
        return plate_problem() if self.problem == "plate" else control_problem(self.beta)

    def schwarz_config(self):
        return SchwarzConfig(
            levels=self.levels,
            tau=self.tau,
            max_outer=self.max_outer,
            tol=self.tol,
            local_solver=self.local_solver,
            threads=self.threads,
        )


def reference_path(config):
    return str(config.out) + ".ref"


def save_reference(path, config, u):
    lines = [f"# n={config.n} form={config.problem} beta={config.beta!r}"]
    lines += [f"{x:.17e}" for x in u]
    Path(path).write_text("\n".join(lines) + "\n")


def load_reference(path, config):
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("#"):
        raise ConfigurationError(f"reference file {path} has no header line")
    fields = dict(tok.split("=", 1) for tok in text[0].lstrip("# ").split())
    if int(fields.get("n", -1)) != config.n or fields.get("form") != config.problem:
        raise ConfigurationError(
            f"reference file {path} was computed for n={fields.get('n')} "
            f"form={fields.get('form')}, not n={config.n} form={config.problem}"
        )
    if config.problem == "control" and float(fields.get("beta", "nan")) != config.beta:
        raise ConfigurationError(f"reference file {path} has a different beta")
    return np.array([float(x) for x in text[1:]])


def compute_reference(config, problem=None):
    """Reference solution by the full-problem active-set method, cached to disk."""
    if problem is None:
        problem = assemble(config.problem_spec(), build_decomposition(
            config.n, config.ratio, config.overlap).fine)
    u = solve_reference(problem)
    save_reference(reference_path(config), config, u)
    return u


def write_csv(path, record):
    rows = [CSV_HEADER]
    for k in range(record.energies.size):
        rows.append(
            f"{k},{record.energies[k]:.17e},{record.rel_errors[k]:.17e},"
            f"{record.violations[k]:.17e},{record.elapsed_ms[k]:.3f}"
        )
    Path(path).write_text("\n".join(rows) + "\n")


def run_experiment(config):
    """Assemble, run, and write the CSV; returns the convergence record."""
    config.validate()
    dd = build_decomposition(config.n, config.ratio, config.overlap)
    problem = assemble(config.problem_spec(), dd.fine)

    reference_energy = None
    if config.reference == "compute":
        u_ref = compute_reference(config, problem)
        reference_energy = problem.energy(u_ref)
    elif str(config.reference).startswith("load:"):
        u_ref = load_reference(str(config.reference)[5:], config)
        if u_ref.shape != problem.f.shape:
            raise ConfigurationError("reference vector length does not match the problem")
        reference_energy = problem.energy(u_ref)

    spaces = build_subspaces(dd, problem, levels=config.levels)
    record = schwarz_solve(
        problem,
        dd,
        spaces,
        config.schwarz_config(),
        reference_energy=reference_energy,
    )
    write_csv(config.out, record)
    return record
