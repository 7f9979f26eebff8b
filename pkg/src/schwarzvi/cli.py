"""Command-line experiment runner.

Runs one obstacle-problem experiment per invocation and writes the
convergence trace as CSV.  Exit codes: 0 when the run converged, 1 when the
iteration cap was reached first (or an inner solver gave up), 2 for invalid
flags or configuration.

Flags can also come from a key=value config file (one pair per line, ``#``
comments allowed); explicit flags override file entries.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError, SolverError
from .experiments import ExperimentConfig, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="schwarzvi",
        description="One- and two-level additive Schwarz runs for fourth-order "
        "obstacle problems on the unit square.",
    )
    parser.add_argument("--config", help="key=value file with defaults for any flag")
    parser.add_argument("--problem", choices=("plate", "control"), default="plate")
    parser.add_argument("--n", type=int, default=16, help="fine cells per side")
    parser.add_argument("--ratio", type=int, default=8, help="coarse-to-fine cell ratio H/h")
    parser.add_argument("--overlap", type=int, default=2, help="overlap layers in fine cells")
    parser.add_argument("--levels", type=int, choices=(1, 2), default=2)
    parser.add_argument("--tau", type=float, default=0.2, help="damping step of the update")
    parser.add_argument("--tol", type=float, default=1e-6, help="relative energy tolerance")
    parser.add_argument("--max-outer", type=int, default=1000)
    parser.add_argument("--local-solver", choices=("pdas", "fbs"), default="pdas")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--beta", type=float, default=1e-4, help="control-form weight")
    parser.add_argument("--out", default="experiment.csv", help="CSV output path")
    parser.add_argument(
        "--reference",
        default="compute",
        help="compute | none | load:<path>  (reference energy for the error column)",
    )
    parser.add_argument("--seed", type=int, default=None, help="randomized tests only")
    return parser


def _read_config_file(path):
    values = {}
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}")
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"bad config line {line!r} (expected key=value)")
        key, value = (tok.strip() for tok in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def parse_config(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        file_values = _read_config_file(args.config)
        unknown = set(file_values) - {
            a.dest for a in parser._actions if a.dest != "help"
        }
        if unknown:
            raise ConfigurationError(f"unknown config file keys: {sorted(unknown)}")
        parser.set_defaults(**file_values)
        args = parser.parse_args(argv)

    return ExperimentConfig(
        problem=args.problem,
        n=int(args.n),
        ratio=int(args.ratio),
        overlap=int(args.overlap),
        levels=int(args.levels),
        tau=float(args.tau),
        tol=float(args.tol),
        max_outer=int(args.max_outer),
        local_solver=args.local_solver,
        threads=int(args.threads),
        beta=float(args.beta),
        out=args.out,
        reference=args.reference,
        seed=None if args.seed is None else int(args.seed),
    )


def main(argv=None):
    try:
        config = parse_config(argv if argv is not None else sys.argv[1:])
        record = run_experiment(config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    n_rec = record.energies.size - 1
    status = "converged" if record.converged else "NOT converged"
    print(
        f"{status} after {n_rec} outer iterations; "
        f"final energy {record.energies[-1]:.12e}; wrote {config.out}"
    )
    return 0 if record.converged else 1


if __name__ == "__main__":
    sys.exit(main())
