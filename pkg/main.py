"""Command-line entry point.

    python main.py <simulate|stationary|response|verify|audit>
            [--config PATH] [--seed N] [--output DIR] [--method NAME] [--threads N]
            [--trajectories N] [--negative-control]

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error,
3 numerical hard error.
"""
import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from rich import box
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from config import ScenarioConfig, get_logger, load_config
from errors import LevyFdtError
from fokker_planck import FpSolveSpec, solve_stationary
from model import ProbeSpec, audit_assumptions, build_model, build_observables, build_perturbation
from nonlocal_ops import Grid1D, heat_kernel_diagnostic
from response import METHODS, VerificationReport, verify_fdt
from simulate import IntegratorSpec, moment_diagnostic, run_ensemble, sample_paths, sample_steady_state
from stable import derive_seed, make_stream
from storage import provenance, write_ensemble, write_grid_field, write_json, write_response, write_trajectories

logger = get_logger("main")
console = Console()

AUDIT_CHANNEL = 2
HEAT_KERNEL_TIME = 0.05


def _output_dir(config: ScenarioConfig) -> Path:
    path = Path(config.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _header(config: ScenarioConfig, seed: Optional[int] = None, **extra):
    seed = config.ensemble.master_seed if seed is None else seed
    return provenance(config.config_hash(), seed, **extra)


def cmd_simulate(config: ScenarioConfig, args) -> int:
    model = build_model(config.model)
    observables = build_observables(config.observables)
    integ = config.integrator
    spec = IntegratorSpec.sampled_every(integ.dt, integ.t_max, integ.save_every)
    seed = config.ensemble.master_seed
    threads = config.ensemble.threads
    tol = config.tolerances

    if config.ensemble.initial == "steady-state":
        initial = sample_steady_state(model, integ.burn_in, config.ensemble.n_traj, integ.thinning,
                                      derive_seed(seed, "simulate/initial"), n_chains=integ.n_chains, dt=integ.dt,
                                      threads=threads).states
    else:
        initial = config.ensemble.x0

    result = run_ensemble(model, initial, spec, observables, config.ensemble.n_traj, seed, threads=threads,
                          flagged_warn=tol.flagged_warn, flagged_fail=tol.flagged_fail)
    out = _output_dir(config)
    write_ensemble(out / "ensemble.csv", result,
                   _header(config, model=model.name, n_traj=result.n_traj, n_flagged=result.n_flagged))
    if config.ensemble.n_paths:
        paths = sample_paths(model, initial, spec, config.ensemble.n_paths, seed)
        write_trajectories(out / "trajectories.csv", paths, _header(config, model=model.name, n_paths=len(paths)))

    table = Table(title=f"Ensemble of {model.name}", box=box.SIMPLE)
    table.add_column("observable")
    table.add_column("E O(X_0)", justify="right")
    table.add_column(f"E O(X_{spec.times[-1]:g})", justify="right")
    table.add_column("stderr", justify="right")
    for q, name in enumerate(result.observable_names):
        table.add_row(name, f"{result.observable_mean[0, q]:.5g}", f"{result.observable_mean[-1, q]:.5g}",
                      f"{result.stderr[-1, q]:.2g}")
    console.print(table)

    if "moment" in result.observable_names:
        diagnostic = moment_diagnostic(result, "moment")
        write_json(out / "moment_diagnostic.json", {**_header(config), **diagnostic.to_dict()})
        console.print(f"moment bound {diagnostic.fitted_bound:.4g}, late slope {diagnostic.late_slope:.3g} "
                      f"+/- {diagnostic.late_slope_stderr:.2g} ({'bounded' if diagnostic.bounded else 'GROWING'})")
    return 0


def cmd_stationary(config: ScenarioConfig, args) -> int:
    model = build_model(config.model)
    grid = Grid1D.from_section(config.grid)
    solver = FpSolveSpec.from_section(config.solver)
    density = solve_stationary(model, grid, solver, config.tolerances.max_boundary_mass)
    out = _output_dir(config)
    write_grid_field(out / "density.csv", density, _header(config, model=model.name))
    write_json(out / "solve_log.json", {**_header(config), **density.meta["solve_log"]})
    log = density.meta["solve_log"]
    console.print(f"stationary density of {model.name}: residual {log['residual']:.3e}, "
                  f"boundary mass {log['boundary_mass']:.3e}")
    return 0


def _summary_table(report: VerificationReport) -> Table:
    table = Table(title="Pairwise response checks", box=box.SIMPLE)
    table.add_column("a")
    table.add_column("b")
    table.add_column("from t", justify="right")
    table.add_column("sup |a - b|", justify="right")
    table.add_column("tol", justify="right")
    table.add_column("result")
    for check in report.data["pairwise_checks"]:
        table.add_row(check["a"], check["b"], f"{check['t_from']:g}", f"{check['sup_diff']:.3e}", f"{check['tol']:.3e}",
                      "[green]pass[/green]" if check["pass"] else "[red]FAIL[/red]")
    return table


def _print_outcome(report: VerificationReport) -> None:
    if report.data["pairwise_checks"]:
        console.print(_summary_table(report))
    for name, cause in report.data["failures"].items():
        console.print(f"[red]{name} failed:[/red] {escape(cause)}")
    for message in report.data["warnings"]:
        console.print(f"[yellow]warning:[/yellow] {escape(message)}")


def _run_verification(config: ScenarioConfig, methods, corrupt_agarwal: bool = False) -> VerificationReport:
    model = build_model(config.model)
    perturbation = build_perturbation(config.perturbation)
    observable = build_observables(config.observables)[0]
    return verify_fdt(model, perturbation, observable, config, methods=methods, corrupt_agarwal=corrupt_agarwal)


def cmd_response(config: ScenarioConfig, args) -> int:
    method = args.method or "all"
    methods = list(METHODS) if method == "all" else [method]
    report = _run_verification(config, methods)
    out = _output_dir(config)
    for name, curve in report.curves.items():
        write_response(out / f"response_{name}.csv", curve, _header(config, report.data["seeds"][name]))
    if method == "all":
        pairwise = {key: report.data[key] for key in ("schema", "version", "seeds", "pairwise_checks", "linearity",
                                                     "failures", "warnings", "passed")}
        write_json(out / "pairwise_report.json", {**pairwise, "config_sha256": config.config_hash()})
    _print_outcome(report)
    if report.data["failures"]:
        return 3
    return 0 if report.passed else 1


def cmd_verify(config: ScenarioConfig, args) -> int:
    report = _run_verification(config, list(METHODS), corrupt_agarwal=args.negative_control)
    write_json(_output_dir(config) / "verification_report.json", report.to_dict())
    _print_outcome(report)
    verdict = "[green]PASSED[/green]" if report.passed else "[red]FAILED[/red]"
    console.print(f"verification {verdict} in {report.data['runtime_seconds']:.1f} s")
    if report.data["failures"]:
        return 3
    return 0 if report.passed else 1


def cmd_audit(config: ScenarioConfig, args) -> int:
    """Assumption audit and small-time heat-kernel check of the configured model.

    Informational: the verdict does not change the exit code.
    """
    model = build_model(config.model)
    stream = make_stream(config.ensemble.master_seed, 0, channel=AUDIT_CHANNEL)
    audit = audit_assumptions(model, ProbeSpec(), stream)
    payload = {**_header(config), "model": model.name, "audit": audit.to_dict()}
    if model.dim == 1:
        heat = heat_kernel_diagnostic(model, HEAT_KERNEL_TIME, grid=Grid1D.from_section(config.grid))
        payload["heat_kernel"] = {"model": model.name, **heat.to_dict()}

    table = Table(title=f"Assumption audit of {model.name}", box=box.SIMPLE)
    table.add_column("quantity")
    table.add_column("value", justify="right")
    for key in ("ellipticity_lambda", "sup_drift", "holder_drift", "k1", "k1_near_origin", "c1",
                "dissipativity_margin", "lyapunov_sup", "verdict"):
        value = getattr(audit, key)
        table.add_row(key, value if isinstance(value, str) or value is None else f"{value:.4g}")
    console.print(table)
    write_json(_output_dir(config) / "audit.json", payload)
    return 0


COMMANDS: Dict[str, Callable] = {
    "simulate": cmd_simulate,
    "stationary": cmd_stationary,
    "response": cmd_response,
    "verify": cmd_verify,
    "audit": cmd_audit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levy-fdt", description="Response theory checks for Levy-driven SDEs")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON scenario file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--method", choices=list(METHODS) + ["all"], help="response estimator (response only)")
    parser.add_argument("--threads", type=int, help="worker processes; results do not depend on it")
    parser.add_argument("--trajectories", type=int, metavar="N",
                        help="also write the first N ensemble paths to trajectories.csv (simulate only)")
    parser.add_argument("--negative-control", action="store_true",
                        help="verify with the sign of Y flipped; the agarwal checks must fail")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    for flag, value, lowest in (("--threads", args.threads, 1), ("--trajectories", args.trajectories, 0)):
        if value is not None and value < lowest:
            parser.print_usage(sys.stderr)
            print(f"{parser.prog}: error: {flag} must be at least {lowest}", file=sys.stderr)
            return 2

    try:
        config = load_config(args.config).with_overrides(
            seed=args.seed, threads=args.threads, output=args.output, trajectories=args.trajectories)
        return COMMANDS[args.command](config, args)
    except LevyFdtError as e:
        logger.error(f"{type(e).__name__}: {e}")
        console.print(f"[red]error:[/red] {escape(str(e))}")
        return e.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
