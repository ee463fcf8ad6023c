"""Command-line front end.

Examples::

    gridevd powerflow case9 --disturb 7:115
    gridevd control case30 --disturb 28:130,24:40,19:40,29:-35,30:-35 --format json
    gridevd sensitivity case14 --format csv

Exit codes: 0 success, 1 input error, 2 numeric failure, 3 controller did
not converge.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import click

from gridevd import fixture_dir
from gridevd import report as rep
from gridevd.controller import ControlConfig, run_control_loop
from gridevd.errors import (
    ContractError,
    DegenerateError,
    DivergenceError,
    GridError,
    ParseError,
    SaturationError,
    SingularMatrixError,
    ValidationError,
)
from gridevd.network import Network, apply_disturbances, load_case, load_disturbance_file, parse_disturbances
from gridevd.powerflow import solve_fast_decoupled, solve_newton_raphson
from gridevd.sensitivity import build_sensitivity

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2
EXIT_NOT_CONVERGED = 3

FORMATS = ("text", "json", "csv")


@dataclass(frozen=True)
class RunConfig:
    case_path: Path
    disturbances: list[tuple[int, float]] = field(default_factory=list)
    v_lower: float = 0.9
    v_upper: float = 1.1
    pf_tol: float = 1e-8
    max_rounds: int = 10
    output_format: str = "text"

    def __post_init__(self):
        if not self.v_lower < self.v_upper:
            raise ContractError(f"--vmin ({self.v_lower}) must be below --vmax ({self.v_upper})")
        if self.pf_tol <= 0:
            raise ContractError("--tol must be positive")
        if self.output_format not in FORMATS:
            raise ContractError(f"unknown format {self.output_format!r}")


class CliFailure(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def resolve_case(case: str) -> Path:
    """A readable file path, or the name of a bundled case such as ``case9``."""
    path = Path(case)
    if path.is_file():
        return path
    stem = case[:-2] if case.endswith(".m") else case
    bundled = fixture_dir() / f"{stem}.m"
    if bundled.is_file():
        return bundled
    raise CliFailure(f"case not found: {case}", EXIT_INPUT)


def _load(config: RunConfig) -> Network:
    net = load_case(config.case_path)
    return apply_disturbances(net, config.disturbances)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        out.write_text(text)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (ParseError, ValidationError, ContractError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, (SingularMatrixError, DegenerateError, DivergenceError, SaturationError)):
        return EXIT_NUMERIC
    return EXIT_NUMERIC if isinstance(exc, GridError) else EXIT_INPUT


class _Group(click.Group):
    """Maps library errors and usage errors onto the documented exit codes."""

    def main(self, *args, **kwargs):
        kwargs["standalone_mode"] = False
        try:
            code = super().main(*args, **kwargs)
        except CliFailure as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.code)
        except click.exceptions.Exit as exc:
            sys.exit(exc.exit_code)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_INPUT)
        except click.Abort:
            sys.exit(EXIT_INPUT)
        except (GridError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))
        sys.exit(code or EXIT_OK)


def _common(fn):
    options = [
        click.argument("case"),
        click.option("--disturb", "disturb", default="", help="Reactive loads, e.g. '7:115,29:-35' (MVAr)."),
        click.option("--disturb-file", type=click.Path(dir_okay=False), help="JSON list of {bus, q_mvar}."),
        click.option("--vmin", type=float, default=0.9, show_default=True, help="Lower voltage limit (pu)."),
        click.option("--vmax", type=float, default=1.1, show_default=True, help="Upper voltage limit (pu)."),
        click.option("--tol", type=float, default=1e-8, show_default=True, help="Load-flow mismatch tolerance (pu)."),
        click.option("--format", "fmt", type=click.Choice(FORMATS), default="text", show_default=True),
        click.option("--out", type=click.Path(dir_okay=False, path_type=Path), help="Write to a file instead of stdout."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _config(case, disturb, disturb_file, vmin, vmax, tol, fmt, max_rounds=10) -> RunConfig:
    disturbances = parse_disturbances(disturb) if disturb else []
    if disturb_file:
        disturbances += load_disturbance_file(disturb_file)
    return RunConfig(resolve_case(case), disturbances, vmin, vmax, tol, max_rounds, fmt)


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def cli():
    """Load flow and eigen-direction secondary voltage control."""


@cli.command()
@_common
@click.option("--method", type=click.Choice(("newton", "fdlf")), default="newton", show_default=True)
def powerflow(case, disturb, disturb_file, vmin, vmax, tol, fmt, out, method):
    """Solve the load flow and print bus voltages."""
    config = _config(case, disturb, disturb_file, vmin, vmax, tol, fmt)
    net = _load(config)
    solver = solve_newton_raphson if method == "newton" else solve_fast_decoupled
    sol = solver(net, tol=config.pf_tol)
    if fmt == "json":
        _emit(rep.dump_json(rep.powerflow_dict(net, sol)), out)
    elif fmt == "csv":
        _emit(rep.powerflow_csv(sol), out)
    else:
        _emit(rep.powerflow_text(net, sol), out)
    return EXIT_OK


@cli.command()
@_common
@click.option("--max-rounds", type=int, default=10, show_default=True, help="Controller iteration cap.")
@click.option(
    "--conflict-basis",
    type=click.Choice(("command", "direction")),
    default="command",
    show_default=True,
    help="Judge two-sided conflicts on signed commands or on raw eigenvector signs.",
)
def control(case, disturb, disturb_file, vmin, vmax, tol, fmt, out, max_rounds, conflict_basis):
    """Run the secondary voltage control loop."""
    config = _config(case, disturb, disturb_file, vmin, vmax, tol, fmt, max_rounds)
    net = _load(config)
    ctrl = ControlConfig(
        v_lower=config.v_lower,
        v_upper=config.v_upper,
        pf_tol=config.pf_tol,
        max_rounds=config.max_rounds,
        conflict_basis=conflict_basis,
    )
    result = run_control_loop(net, ctrl)
    if fmt == "json":
        _emit(rep.dump_json(result.to_dict()), out)
    elif fmt == "csv":
        _emit(rep.control_csv(result), out)
    else:
        _emit(rep.control_text(result), out)
    if result.converged:
        return EXIT_OK
    if result.final_solution is None:
        click.echo(f"error: {result.failure}", err=True)
        return EXIT_NUMERIC
    return EXIT_NOT_CONVERGED


@cli.command()
@_common
def sensitivity(case, disturb, disturb_file, vmin, vmax, tol, fmt, out):
    """Export the generator-to-load sensitivity matrix."""
    config = _config(case, disturb, disturb_file, vmin, vmax, tol, fmt)
    model = build_sensitivity(_load(config))
    if fmt == "json":
        _emit(rep.dump_json(rep.sensitivity_dict(model)), out)
    elif fmt == "csv":
        _emit(rep.sensitivity_csv(model), out)
    else:
        _emit(rep.sensitivity_text(model), out)
    return EXIT_OK


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
