"""Command-line interface over files: simulate, reconstruct, experiment, diagnose.

Exit codes: 0 success, 1 invalid configuration or malformed input data,
2 I/O failure, 3 non-convergence under --strict. Output files are written
atomically (temp file + rename), so a failing run never leaves partial
output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .algebra import density_from_polarization
from .estimator import (
    InvalidFrameError,
    SolverOptions,
    grid_oracle,
    linear_inversion,
    log_likelihood,
    maxlik_fixed_point,
)
from .experiment import (
    ExperimentConfig,
    run_experiment,
    write_bars_csv,
    write_report_json,
    write_states_csv,
)
from .pom import diagnostic_report
from .simulate import (
    MAX_SEED,
    read_records_csv,
    read_records_json,
    records_to_json,
    simulate_campaign,
    write_records_csv,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_NOT_CONVERGED = 3

CONFIG_KEYS = {"directions", "n_particles", "r_true", "repetitions", "seed",
               "solver", "grid_check", "out", "outdir"}
SOLVER_KEYS = {"tol_k", "max_iterations", "damping_min", "ball_margin"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; map those onto the
    # invalid-configuration code instead, 2 is reserved for I/O failures.
    def error(self, message):
        raise CliError(EXIT_INVALID, f"usage error: {message}")


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INVALID, f"{path} is not valid JSON: {exc}") from exc


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _check_seed_value(seed):
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed <= MAX_SEED:
        raise CliError(EXIT_INVALID, f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return seed


def _parse_solver(data) -> SolverOptions:
    if not isinstance(data, dict):
        raise CliError(EXIT_INVALID, "solver must be an object")
    unknown = set(data) - SOLVER_KEYS
    if unknown:
        raise CliError(EXIT_INVALID, f"unknown solver keys: {sorted(unknown)}")
    try:
        return SolverOptions(**data)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INVALID, f"invalid solver options: {exc}") from exc


def _parse_config(path, seed_override=None) -> tuple[ExperimentConfig, dict]:
    data = _load_json(path)
    if not isinstance(data, dict):
        raise CliError(EXIT_INVALID, f"{path}: config must be a JSON object")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise CliError(EXIT_INVALID, f"{path}: unknown config keys: {sorted(unknown)}")
    for key in ("directions", "n_particles", "r_true", "seed"):
        if key not in data:
            raise CliError(EXIT_INVALID, f"{path}: missing required key '{key}'")

    directions = data["directions"]
    if not isinstance(directions, list) or not directions:
        raise CliError(EXIT_INVALID, f"{path}: directions must be a non-empty list")
    from .algebra import InvalidDirectionError, unit_direction

    normalized = []
    for i, entry in enumerate(directions):
        try:
            v = unit_direction(entry)
        except (InvalidDirectionError, TypeError, ValueError) as exc:
            raise CliError(EXIT_INVALID, f"{path}: directions[{i}] = {entry!r}: {exc}") from exc
        normalized.append((float(v[0]), float(v[1]), float(v[2])))

    seed = seed_override if seed_override is not None else data["seed"]
    _check_seed_value(seed)
    solver = _parse_solver(data.get("solver", {}))
    try:
        config = ExperimentConfig(
            directions=tuple(normalized),
            n_particles=data["n_particles"],
            r_true=tuple(data["r_true"]),
            repetitions=data.get("repetitions", 1),
            seed=seed,
            solver=solver,
            grid_check=data.get("grid_check"),
        )
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INVALID, f"{path}: {exc}") from exc
    return config, data


def _read_records(path):
    try:
        if str(path).endswith(".csv"):
            return read_records_csv(path)
        text_records = read_records_json(path)
        return text_records
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_INVALID, f"{path}: malformed records: {exc}") from exc


def _cmd_simulate(args) -> int:
    config, raw = _parse_config(args.config, args.seed)
    out = args.out or raw.get("out")
    if not out:
        raise CliError(EXIT_INVALID, "no output path: pass --out or put 'out' in the config")
    records = simulate_campaign(config.r_true, config.settings(), config.seed)
    if str(out).endswith(".csv"):
        try:
            write_records_csv(records, out)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {out}: {exc}") from exc
    else:
        _atomic_write(out, records_to_json(records))
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    records = _read_records(args.records)
    solver_kwargs = {}
    if args.tol_k is not None:
        solver_kwargs["tol_k"] = args.tol_k
    if args.max_iterations is not None:
        solver_kwargs["max_iterations"] = args.max_iterations
    try:
        opts = SolverOptions(**solver_kwargs)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, f"invalid solver options: {exc}") from exc

    result = maxlik_fixed_point(records, opts)
    payload = result.to_json_dict()
    if args.linear:
        try:
            payload["linear"] = linear_inversion(records).to_json_dict()
        except InvalidFrameError as exc:
            raise CliError(EXIT_INVALID, f"--linear needs 3 orthogonal records: {exc}") from exc
    if args.oracle is not None:
        try:
            best = grid_oracle(records, args.oracle)
        except ValueError as exc:
            raise CliError(EXIT_INVALID, str(exc)) from exc
        payload["oracle"] = {
            "resolution": args.oracle,
            "r_oracle": [float(c) for c in best],
            "log_likelihood_oracle": log_likelihood(best, records),
            "distance": float(np.linalg.norm(np.asarray(result.r_est) - best)),
        }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    if args.strict and not result.converged:
        print(f"not converged after {result.iterations} iterations "
              f"(k_residual={result.k_residual:.3g})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_experiment(args) -> int:
    config, raw = _parse_config(args.config, args.seed)
    outdir = args.outdir or raw.get("outdir")
    if not outdir:
        raise CliError(EXIT_INVALID, "no output directory: pass --outdir or put 'outdir' in the config")
    if args.threads < 1:
        raise CliError(EXIT_INVALID, "--threads must be at least 1")
    report = run_experiment(config, threads=args.threads)
    try:
        os.makedirs(outdir, exist_ok=True)
        write_report_json(report, os.path.join(outdir, "report.json"))
        write_bars_csv(report, os.path.join(outdir, "bars.csv"))
        write_states_csv(report, os.path.join(outdir, "states.csv"))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write into {outdir}: {exc}") from exc
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    records = _read_records(args.records)
    state = _load_json(args.state)
    if not isinstance(state, dict) or "r_est" not in state:
        raise CliError(EXIT_INVALID, f"{args.state}: state file must contain an 'r_est' vector")
    try:
        rho = density_from_polarization(state["r_est"])
        report = diagnostic_report(records, rho)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, str(exc)) from exc
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="spintomo",
                     description="Stern-Gerlach spin-1/2 simulation and MaxLik reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate seeded count records from a config")
    p_sim.add_argument("--config", required=True, help="JSON experiment config")
    p_sim.add_argument("--out", help="records output path (.json or .csv)")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.set_defaults(func=_cmd_simulate)

    p_rec = sub.add_parser("reconstruct", help="MaxLik reconstruction from a records file")
    p_rec.add_argument("--records", required=True, help="records file (.json or .csv)")
    p_rec.add_argument("--out", help="result path (default: stdout)")
    p_rec.add_argument("--oracle", type=float, metavar="RESOLUTION",
                       help="also run the brute-force grid oracle and report the comparison")
    p_rec.add_argument("--linear", action="store_true",
                       help="also run linear inversion (needs 3 orthogonal records)")
    p_rec.add_argument("--strict", action="store_true",
                       help="exit with code 3 if the solver did not converge")
    p_rec.add_argument("--tol-k", type=float, dest="tol_k", help="convergence threshold on |K|")
    p_rec.add_argument("--max-iterations", type=int, dest="max_iterations")
    p_rec.set_defaults(func=_cmd_reconstruct)

    p_exp = sub.add_parser("experiment", help="run a repeated experiment and write report + CSVs")
    p_exp.add_argument("--config", required=True, help="JSON experiment config")
    p_exp.add_argument("--outdir", help="output directory for report.json, bars.csv, states.csv")
    p_exp.add_argument("--seed", type=int, help="override the config seed")
    p_exp.add_argument("--threads", type=int, default=1,
                       help="repetitions run concurrently; results do not depend on this")
    p_exp.set_defaults(func=_cmd_experiment)

    p_diag = sub.add_parser("diagnose", help="renormalized-POM closure and expectation defects")
    p_diag.add_argument("--records", required=True, help="records file (.json or .csv)")
    p_diag.add_argument("--state", required=True,
                        help="JSON file with the extremal state's 'r_est' vector")
    p_diag.add_argument("--out", help="report path (default: stdout)")
    p_diag.set_defaults(func=_cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"spintomo: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"spintomo: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
