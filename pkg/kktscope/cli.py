import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import typer
from rich.console import Console

from . import config
from .errors import KKTScopeError, NumericError, ProblemIOError, SchemaError, StrictWarnings, describe
from .kkt import Problem, analyze, check_premises, classify_case, emit_cone_plot_data, multiplier_truth_table
from .oracle import OracleConfig, brute_force_min, brute_force_saddle
from .scalarize import (
    ScalarizationProblem,
    WeightVector,
    check_estar_curvature,
    check_positivity,
    cost_expression,
    degenerate_single_objective,
    envelope_derivative,
    outer_maximize_beta,
    sample_estar_curve,
)
from .schema import ProblemFile, load_problem

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

app = typer.Typer(help="kktscope: KKT multiplier cases and weighted-scalarization min-max analysis.",
                  add_completion=False, no_args_is_help=True)
kkt_app = typer.Typer(help="Multiplier, cone and sign-table analysis of constrained problems.", no_args_is_help=True)
scalarize_app = typer.Typer(help="Weighted-sum scalarization of several objectives.", no_args_is_help=True)
oracle_app = typer.Typer(help="Brute-force reference solvers.", no_args_is_help=True)
app.add_typer(kkt_app, name="kkt")
app.add_typer(scalarize_app, name="scalarize")
app.add_typer(oracle_app, name="oracle", hidden=True)

console = Console(markup=False, highlight=False, emoji=False, soft_wrap=True)
err_console = Console(stderr=True, markup=False, highlight=False, emoji=False, soft_wrap=True)

logger = logging.getLogger("kktscope.cli")

FILE_ARG = typer.Argument(..., help="Problem file (TOML).")

# typer re-exports BadParameter from the click it runs on (bundled or external).
USAGE_ERROR = next(cls for cls in typer.BadParameter.__mro__ if cls.__name__ == "ClickException")


@dataclass
class Options:
    strict: bool = False
    verbose: bool = False


def fmt(value: float) -> str:
    """17 significant digits, no negative zero."""
    return format(float(value) + 0.0, ".17g")


def fmt_vector(values: Iterable[float]) -> str:
    return "(" + ", ".join(fmt(v) for v in values) + ")"


def parse_point(text: Optional[str], option: str = "--point") -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(part) for part in text.replace(",", " ").split()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated numbers, got {text!r}", param_hint=option)


def _options(ctx: typer.Context) -> Options:
    return ctx.find_object(Options) or Options()


def _load(file: Path, kind: str):
    spec, problem = load_problem(file)
    if spec.kind != kind:
        raise SchemaError("kind", f"expected a '{kind}' problem, file declares '{spec.kind}'")
    return spec, problem


def _finish(ctx: typer.Context, warnings: Sequence[str]) -> None:
    for note in warnings:
        console.print(f"warning: {note}")
    if warnings and _options(ctx).strict:
        raise StrictWarnings(warnings)


def write_csv(path: Optional[Path], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV to ``path``, or to standard output when no path is given."""
    cells = [[c if isinstance(c, str) else fmt(c) for c in row] for row in rows]
    if path is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(cells)
        return
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(cells)
    except OSError as e:
        raise ProblemIOError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info("Wrote %d row(s) to %s", len(cells), path)


@app.callback()
def main_callback(
    ctx: typer.Context,
    strict: bool = typer.Option(False, "--strict", help="Treat premise warnings as errors (exit 4)."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress to standard error."),
):
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, format=LOG_FORMAT)
    ctx.obj = Options(strict=strict, verbose=verbose)


@app.command()
def validate(ctx: typer.Context, file: Path = FILE_ARG):
    """
    Checks a problem file and prints what it describes.
    """
    spec, problem = load_problem(file)
    if isinstance(problem, Problem):
        console.print(f"ok: kkt problem, {classify_case(problem).value}, "
                      f"{problem.m} objective(s), {problem.n} constraint(s)")
        _finish(ctx, problem.warnings)
    else:
        console.print(f"ok: scalarize problem, {problem.n} objectives, "
                      f"{len(problem.variables)} resource variable(s)")


# ---------------------------------------------------------------------------
# kkt
# ---------------------------------------------------------------------------

def _query_point(spec: ProblemFile, point: Optional[str]) -> List[float]:
    chosen = parse_point(point) if point is not None else spec.point
    if chosen is None:
        raise typer.BadParameter("no query point: pass --point or set 'point' in the problem file", param_hint="--point")
    return chosen


@kkt_app.command("analyze")
def kkt_analyze(
    ctx: typer.Context,
    file: Path = FILE_ARG,
    point: Optional[str] = typer.Option(None, "--point", help="Query point, comma-separated."),
    tol: Optional[float] = typer.Option(None, "--tol", help="Active-set tolerance (positive)."),
):
    """
    Multipliers, signs and cone verdict at a point.
    """
    if tol is not None and tol <= 0:
        raise typer.BadParameter("must be positive", param_hint="--tol")
    spec, problem = _load(file, "kkt")
    p = _query_point(spec, point)
    report = analyze(problem, p, tol or spec.tol or config.ACTIVE_TOL)
    warnings = check_premises(problem, seed=spec.seed if spec.seed is not None else config.DEFAULT_SEED)

    console.print(f"case: {report.case.value}")
    console.print("point: " + ", ".join(f"{n} = {fmt(v)}" for n, v in zip(problem.variables, report.point)))
    console.print("active: " + (", ".join(f"C_{y}" for y in report.active) or "none"))
    for analysis in report.objectives:
        est = analysis.estimate
        x = est.objective_index
        console.print(f"objective O_{x}")
        console.print(f"  grad O_{x} = {fmt_vector(est.objective_gradient)}")
        for m in est.multipliers:
            state = "active" if m.active else "inactive"
            console.print(f"  mu_{m.index} = {fmt(m.mu)} ({m.sign_class.value}, {state})")
        console.print(f"  stationarity residual = {fmt(est.stationarity_residual)}")
        console.print(f"  cone: {analysis.cone.verdict.value if analysis.cone else 'no active constraints'}")
        for entry in analysis.table:
            go = entry.grad_o_sign.value if entry.grad_o_sign else "zero"
            gc = entry.grad_c_sign.value if entry.grad_c_sign else "zero"
            outcome = entry.outcome.value if entry.outcome else "undetermined"
            console.print(f"  table C_{entry.constraint_index}: {entry.effective_case.value}, "
                          f"grad O {go}, grad C {gc} -> {outcome}")
    _finish(ctx, warnings)


@kkt_app.command("plot")
def kkt_plot(
    file: Path = FILE_ARG,
    point: Optional[str] = typer.Option(None, "--point", help="Query point, comma-separated."),
    grid: int = typer.Option(config.PLOT_GRID, "--grid", min=1, help="Grid points per axis."),
    objective: int = typer.Option(1, "--objective", min=1, help="Objective whose gradient is drawn."),
    out: Optional[Path] = typer.Option(None, "--out", help="CSV destination (default: standard output)."),
):
    """
    Level-set and gradient-arrow data for a two-variable problem.
    """
    spec, problem = _load(file, "kkt")
    data = emit_cone_plot_data(problem, _query_point(spec, point), grid, objective, spec.tol or config.ACTIVE_TOL)
    write_csv(out, data.COLUMNS, ([r.kind, r.x1, r.x2, r.dx1, r.dx2, r.label] for r in data.records))
    if out is not None:
        console.print(f"records: {len(data.records)}")
        console.print(f"cone: {data.verdict.value if data.verdict else 'no active constraints'}")


@kkt_app.command("table")
def kkt_table(out: Optional[Path] = typer.Option(None, "--out", help="CSV destination.")):
    """
    The multiplier sign table for the four pure cases.
    """
    rows = [(go.value, gc.value, case.value, sign.value) for go, gc, case, sign in multiplier_truth_table()]
    if out is not None:
        write_csv(out, ("grad_o", "grad_c", "case", "multiplier"), rows)
        return
    for go, gc, case, sign in rows:
        console.print(f"grad O {go:<3}  grad C {gc:<3}  {case:<8}  mu {sign}")


# ---------------------------------------------------------------------------
# scalarize
# ---------------------------------------------------------------------------

def _grids(spec: ProblemFile, problem: ScalarizationProblem, beta_grid: Optional[int], inner_grid: Optional[int]):
    return (beta_grid or spec.beta_grid or config.default_beta_grid(problem.n),
            inner_grid or spec.inner_grid or config.INNER_GRID)


def _seed(spec: ProblemFile, seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    return spec.seed if spec.seed is not None else config.DEFAULT_SEED


BETA_GRID_OPT = typer.Option(None, "--beta-grid", min=2, help="Weight lattice resolution N.")
INNER_GRID_OPT = typer.Option(None, "--inner-grid", min=2, help="Inner grid points per resource axis.")


@scalarize_app.command("curve")
def scalarize_curve(
    ctx: typer.Context,
    file: Path = FILE_ARG,
    beta_grid: Optional[int] = BETA_GRID_OPT,
    inner_grid: Optional[int] = INNER_GRID_OPT,
    out: Optional[Path] = typer.Option(None, "--out", help="CSV destination (default: standard output)."),
):
    """
    Samples E*(beta) on the weight lattice.
    """
    spec, problem = _load(file, "scalarize")
    n_beta, n_inner = _grids(spec, problem, beta_grid, inner_grid)
    curve = sample_estar_curve(problem, n_beta, n_inner, config.get_settings().threads)
    write_csv(out, curve.columns(), curve.rows())
    if out is not None:
        best = max(curve.samples, key=lambda s: s.e_star)
        console.print(f"samples: {len(curve.samples)}")
        console.print(f"largest E* on the lattice: {fmt(best.e_star)} at beta = {fmt_vector(best.beta.betas)}")
    _finish(ctx, check_positivity(problem, seed=_seed(spec, None)))


@scalarize_app.command("maximize")
def scalarize_maximize(
    ctx: typer.Context,
    file: Path = FILE_ARG,
    beta_grid: Optional[int] = BETA_GRID_OPT,
    inner_grid: Optional[int] = INNER_GRID_OPT,
):
    """
    Finds the weight that maximizes E*(beta).
    """
    spec, problem = _load(file, "scalarize")
    n_beta, n_inner = _grids(spec, problem, beta_grid, inner_grid)
    result = outer_maximize_beta(problem, n_beta, n_inner, config.get_settings().threads)
    s = result.sample
    console.print(f"beta* = {fmt_vector(result.beta.full)}")
    console.print(f"r* = {fmt_vector(s.r_star)}")
    console.print(f"E* = {fmt(s.e_star)}")
    console.print(f"lattice E* = {fmt(result.lattice_best.e_star)} at beta = {fmt_vector(result.lattice_best.beta.full)}")
    console.print(f"dE*/dbeta = {fmt_vector(envelope_derivative(problem, result.beta, s))}")
    console.print(f"inner solves: {result.evaluations}")
    _finish(ctx, check_positivity(problem, seed=_seed(spec, None)))


@scalarize_app.command("curvature")
def scalarize_curvature(
    ctx: typer.Context,
    file: Path = FILE_ARG,
    trials: Optional[int] = typer.Option(None, "--trials", help="Number of random weight pairs."),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Random seed."),
    inner_grid: Optional[int] = INNER_GRID_OPT,
    out: Optional[Path] = typer.Option(None, "--out", help="CSV destination for per-trial slacks."),
):
    """
    Measures both directions of the convexity inequality for E*.
    """
    spec, problem = _load(file, "scalarize")
    _, n_inner = _grids(spec, problem, None, inner_grid)
    n_trials = trials if trials is not None else (spec.trials if spec.trials is not None else config.DEFAULT_TRIALS)
    curvature = check_estar_curvature(problem, n_trials, _seed(spec, seed), n_inner)
    total = len(curvature.trials)
    console.print(f"trials: {total} (seed {curvature.seed})")
    console.print(f"convex direction holds: {curvature.convex_holds}/{total}")
    console.print(f"concave direction holds: {curvature.reverse_holds}/{total}")
    console.print(f"both (affine): {curvature.both_hold}/{total}")
    console.print(f"worst convex slack: {fmt(min(t.slack_paper for t in curvature.trials))}")
    if out is not None:
        write_csv(out, ("alpha", "slack_paper", "slack_reverse"),
                  ([t.alpha, t.slack_paper, t.slack_reverse] for t in curvature.trials))
    _finish(ctx, check_positivity(problem, seed=_seed(spec, seed)))


@scalarize_app.command("degenerate")
def scalarize_degenerate(
    ctx: typer.Context,
    file: Path = FILE_ARG,
    beta_grid: Optional[int] = BETA_GRID_OPT,
    inner_grid: Optional[int] = INNER_GRID_OPT,
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Seed for the vanishing-objective check."),
):
    """
    Checks the limit where only the first objective is nonzero.
    """
    spec, problem = _load(file, "scalarize")
    n_beta, n_inner = _grids(spec, problem, beta_grid, inner_grid)
    report = degenerate_single_objective(problem, n_beta, n_inner, seed=_seed(spec, seed),
                                         threads=config.get_settings().threads)
    console.print(f"E*(1) = {fmt(report.e_star_at_one)} at r* = {fmt_vector(report.r_star_at_one)}")
    console.print(f"r* independent of beta_1: {'yes' if report.r_star_curve_independent else 'no'}")
    console.print(f"spread of E*/beta_1: {fmt(report.ratio_spread)}")
    if report.degenerate_betas:
        console.print("excluded (beta_1 = 0): " + ", ".join(fmt(b) for b in report.degenerate_betas))
    _finish(ctx, report.warnings)


# ---------------------------------------------------------------------------
# oracle (hidden)
# ---------------------------------------------------------------------------

GRID_POINTS_OPT = typer.Option(1001, "--grid-points", min=2, help="Grid points per axis.")


@oracle_app.command("min")
def oracle_min(
    file: Path = FILE_ARG,
    objective: int = typer.Option(1, "--objective", min=1, help="Objective to minimize over the box."),
    beta: Optional[str] = typer.Option(None, "--beta", help="Minimize the weighted cost at these weights instead."),
    grid_points: int = GRID_POINTS_OPT,
):
    """
    Grid minimum over the variable box (constraints ignored).
    """
    _, problem = load_problem(file)
    if beta is not None:
        if not isinstance(problem, ScalarizationProblem):
            raise typer.BadParameter("needs a scalarize problem", param_hint="--beta")
        target = cost_expression(problem, WeightVector(tuple(parse_point(beta, "--beta"))))
    else:
        if objective > len(problem.objectives):
            raise typer.BadParameter(f"problem has {len(problem.objectives)} objective(s)", param_hint="--objective")
        target = problem.objectives[objective - 1]
    point, value = brute_force_min(target, problem.variables, problem.domain, OracleConfig(grid_points=grid_points))
    console.print(f"argmin = {fmt_vector(point)}")
    console.print(f"min = {fmt(value)}")


@oracle_app.command("saddle")
def oracle_saddle(file: Path = FILE_ARG, grid_points: int = GRID_POINTS_OPT):
    """
    Grid max over weights of min over resources.
    """
    _, problem = _load(file, "scalarize")
    beta, r_star, value = brute_force_saddle(problem, OracleConfig(grid_points=grid_points))
    console.print(f"beta* = {fmt_vector(beta)}")
    console.print(f"r* = {fmt_vector(r_star)}")
    console.print(f"value = {fmt(value)}")


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command line and return its exit code; diagnostics go to standard error."""
    args = list(sys.argv[1:] if argv is None else argv)
    command = typer.main.get_command(app)
    try:
        result = command.main(args=args, prog_name="kktscope", standalone_mode=False)
    except typer.Abort:
        err_console.print("ERROR usage: aborted")
        return 1
    except USAGE_ERROR as e:
        err_console.print(f"ERROR usage: {' '.join(e.format_message().split())}")
        return 1
    except KKTScopeError as e:
        err_console.print(describe(e))
        return e.exit_code
    except RecursionError:
        # Trees built from text are depth-checked; derivatives of deep quotients can still overflow.
        error = NumericError("expression nests too deeply to evaluate")
        err_console.print(describe(error))
        return error.exit_code
    return result if isinstance(result, int) else 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
