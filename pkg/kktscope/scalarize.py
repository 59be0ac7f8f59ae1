"""
Weighted-sum scalarization of n objectives over a box of resource variables.

    E(beta, r) = sum_{x<n} beta_x O_x(r) + (1 - sum_{x<n} beta_x) O_n(r)
    E*(beta)   = min_r E(beta, r)

The inner minimization is a global grid scan followed by bounded Brent
coordinate refinement (scipy). The outer problem maximizes E* over the weight
simplex (a max-min saddle search). Curvature of E*, the envelope derivative
and the single-objective limit are measured numerically.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from . import config
from .errors import DimensionError, InvalidTrials, PointOutsideDomain, PremiseViolation, SchemaError, SimplexViolation
from .expr import ZERO, Const, Expr, add, as_expr, evaluate, evaluate_batch, mul, variables
from .kkt import validate_box

logger = logging.getLogger("kktscope.scalarize")

SQRT_EPS = float(np.sqrt(np.finfo(np.float64).eps))

SIMPLEX_TOL = 1e-12


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarizationProblem:
    objectives: Tuple[Expr, ...]
    variables: Tuple[str, ...]
    domain: Tuple[Tuple[float, float], ...]
    positive: bool = True

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(
            as_expr(o, f"objectives[{i}]") for i, o in enumerate(self.objectives)))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain))
        if len(self.objectives) < 2:
            raise SchemaError("objectives", "scalarization needs at least two objectives")
        validate_box(self.variables, self.domain)
        if len(self.variables) > config.MAX_RESOURCE_DIM:
            raise SchemaError("variables", f"at most {config.MAX_RESOURCE_DIM} resource variables are supported")
        for i, o in enumerate(self.objectives):
            unknown = [v for v in variables(o) if v not in self.variables]
            if unknown:
                raise SchemaError(f"objectives[{i}]", f"undeclared variable '{unknown[0]}'")

    @property
    def n(self) -> int:
        return len(self.objectives)


@dataclass(frozen=True)
class WeightVector:
    """beta_1..beta_{n-1}; beta_n is implied."""

    betas: Tuple[float, ...]

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        object.__setattr__(self, "betas", betas)
        for x, b in enumerate(betas, start=1):
            if not 0.0 <= b <= 1.0:
                raise SimplexViolation(f"beta_{x} = {b:.17g} outside [0, 1]")
        if math.fsum(betas) > 1.0 + SIMPLEX_TOL:
            raise SimplexViolation(f"weights sum to {math.fsum(betas):.17g} > 1")

    @property
    def beta_n(self) -> float:
        return max(0.0, 1.0 - sum(self.betas))

    @property
    def full(self) -> Tuple[float, ...]:
        return self.betas + (self.beta_n,)


@dataclass(frozen=True)
class EStarSample:
    beta: WeightVector
    r_star: Tuple[float, ...]
    e_star: float
    inner_residual: float


@dataclass(frozen=True)
class EStarCurve:
    samples: Tuple[EStarSample, ...]

    def columns(self) -> List[str]:
        first = self.samples[0]
        return ([f"beta_{x}" for x in range(1, len(first.beta.betas) + 1)]
                + [f"r_{i}" for i in range(1, len(first.r_star) + 1)] + ["e_star", "residual"])

    def rows(self) -> List[List[float]]:
        return [list(s.beta.betas) + list(s.r_star) + [s.e_star, s.inner_residual] for s in self.samples]


@dataclass(frozen=True)
class CurvatureTrial:
    beta: WeightVector
    beta_prime: WeightVector
    alpha: float
    slack_paper: float  # convex direction; the name is fixed by the curvature CSV columns
    slack_reverse: float


@dataclass(frozen=True)
class CurvatureProbe:
    """Slack of E*(mix) <= alpha E*(beta) + (1 - alpha) E*(beta') and of its reverse, per trial."""

    seed: int
    trials: Tuple[CurvatureTrial, ...]
    tol: float = config.CURVATURE_TOL

    @property
    def convex_holds(self) -> int:
        return sum(1 for t in self.trials if t.slack_paper >= -self.tol)

    @property
    def reverse_holds(self) -> int:
        return sum(1 for t in self.trials if t.slack_reverse >= -self.tol)

    @property
    def both_hold(self) -> int:
        return sum(1 for t in self.trials if abs(t.slack_paper) <= self.tol)


@dataclass(frozen=True)
class OuterResult:
    beta: WeightVector
    sample: EStarSample
    lattice_best: EStarSample
    evaluations: int


@dataclass(frozen=True)
class DegenerateReport:
    e_star_at_one: float
    r_star_at_one: Tuple[float, ...]
    r_star_curve_independent: bool
    ratio_spread: float
    samples: Tuple[EStarSample, ...]
    degenerate_betas: Tuple[float, ...]
    warnings: Tuple[str, ...] = field(default=())


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------

def _check_weights(problem: ScalarizationProblem, beta: WeightVector) -> WeightVector:
    if not isinstance(beta, WeightVector):
        beta = WeightVector(tuple(beta))
    if len(beta.betas) != problem.n - 1:
        raise SimplexViolation(f"expected {problem.n - 1} weight(s), got {len(beta.betas)}")
    return beta


def cost_expression(problem: ScalarizationProblem, beta: WeightVector) -> Expr:
    """E(beta, .) as an expression; identical objectives share one summed weight."""
    beta = _check_weights(problem, beta)
    weights: Dict[Expr, float] = {}
    for objective, w in zip(problem.objectives, beta.full):
        weights[objective] = weights.get(objective, 0.0) + w
    total: Expr = ZERO
    for objective, w in weights.items():
        total = add(total, mul(Const(w), objective))
    return total


def _binding(problem: ScalarizationProblem, r: Sequence[float]) -> Dict[str, float]:
    return {name: float(v) for name, v in zip(problem.variables, r)}


def _check_resource(problem: ScalarizationProblem, r: Sequence[float]) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.size != len(problem.variables):
        raise DimensionError(f"expected {len(problem.variables)} resource coordinate(s), got {r.size}")
    for name, value, (lo, hi) in zip(problem.variables, r, problem.domain):
        if not lo <= value <= hi:
            raise PointOutsideDomain(f"{name} = {value:.17g} outside [{lo:.17g}, {hi:.17g}]")
    return r


def cost(problem: ScalarizationProblem, beta: WeightVector, r: Sequence[float]) -> float:
    r = _check_resource(problem, r)
    return evaluate(cost_expression(problem, beta), _binding(problem, r))


# ---------------------------------------------------------------------------
# Inner minimization
# ---------------------------------------------------------------------------

def line_minimize(f: Callable[[float], float], lo: float, hi: float, origin: float,
                  xatol: float = config.REFINE_STEP / 2) -> Tuple[float, float]:
    """
    Bounded Brent search for the minimum of ``f`` on [lo, hi].

    The search runs over the offset from ``origin`` (a point inside the
    interval), so the relative part of scipy's stopping rule stays far below
    ``xatol``. Returns the minimizer, clipped to [lo, hi], and a bound on the
    width of the final bracket.
    """
    if hi <= lo:
        return lo, 0.0
    res = minimize_scalar(lambda t: f(min(max(origin + t, lo), hi)), bounds=(lo - origin, hi - origin),
                          method="bounded", options={"xatol": xatol})
    if not res.success:
        logger.debug("Line search on [%g, %g] stopped early: %s", lo, hi, res.message)
    t = float(res.x)
    # The bounded method stops once its bracket is at most 4 * (sqrt(eps) |t| + xatol / 3) wide.
    return min(max(origin + t, lo), hi), 4.0 * (SQRT_EPS * abs(t) + xatol / 3.0)


def grid_axes(domain: Sequence[Tuple[float, float]], grid: int,
              max_points: int = config.MAX_INNER_POINTS) -> List[np.ndarray]:
    """Per-axis grid points, shrunk evenly so the full scan stays under ``max_points``."""
    per_axis = grid
    while per_axis > 2 and per_axis ** len(domain) > max_points:
        per_axis -= 1
    if per_axis != grid:
        logger.info("Inner grid reduced from %d to %d points per axis", grid, per_axis)
    return [np.linspace(lo, hi, per_axis) for lo, hi in domain]


def _scan(expr: Expr, names: Sequence[str], axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    values = evaluate_batch(expr, dict(zip(names, mesh)))
    # C-order flattening of an 'ij' mesh is lexicographic, so argmin's first hit breaks ties.
    k = int(np.argmin(values))
    idx = np.unravel_index(k, values.shape)
    return np.array([axes[i][j] for i, j in enumerate(idx)])


def _refine(expr: Expr, problem: ScalarizationProblem, r0: np.ndarray, e0: float,
            spacing: np.ndarray) -> Tuple[np.ndarray, float, float]:
    best_r, best_e = r0.copy(), e0
    width = 0.0
    scale = 1.0
    while True:
        width = 0.0
        for i, (lo, hi) in enumerate(problem.domain):
            def along(t: float, i=i) -> float:
                point = best_r.copy()
                point[i] = t
                return evaluate(expr, _binding(problem, point))

            radius = spacing[i] * scale
            t, bracket = line_minimize(along, max(lo, best_r[i] - radius), min(hi, best_r[i] + radius), best_r[i])
            candidate = best_r.copy()
            candidate[i] = t
            e = evaluate(expr, _binding(problem, candidate))
            if e < best_e:
                best_r, best_e = candidate, e
            width = max(width, bracket)
        if len(problem.domain) == 1 or float(spacing.max()) * scale < config.REFINE_STEP:
            break
        scale *= 0.5
    return best_r, best_e, width


def inner_minimize(problem: ScalarizationProblem, beta: WeightVector,
                   grid: int = config.INNER_GRID) -> EStarSample:
    """
    E*(beta) and its minimizer r*, lexicographically smallest on ties.

    Args:
        problem: Objectives and the resource box.
        beta: Weights beta_1..beta_{n-1}; the last weight is implied.
        grid: Scan points per resource axis, shrunk for 2-D and 3-D boxes to
            stay under ``config.MAX_INNER_POINTS``.

    Returns:
        The sample (beta, r*, E*, residual), where the residual bounds the
        width of the last line-search bracket.

    Note:
        The scan is global, so nonconvex costs are handled as long as the
        grid resolves the basin of the global minimum. Refinement accepts a
        move only when it strictly lowers E, which keeps the first grid
        minimum on plateaus.
    """
    if grid < 2:
        raise ValueError("inner grid needs at least 2 points per axis")
    beta = _check_weights(problem, beta)
    expr = cost_expression(problem, beta)
    axes = grid_axes(problem.domain, grid)
    r0 = _scan(expr, problem.variables, axes)
    e0 = evaluate(expr, _binding(problem, r0))
    spacing = np.array([(hi - lo) / (len(ax) - 1) for (lo, hi), ax in zip(problem.domain, axes)])
    r_star, e_star, width = _refine(expr, problem, r0, e0, spacing)
    logger.debug("beta=%s r*=%s E*=%.17g", beta.betas, r_star.tolist(), e_star)
    return EStarSample(beta, tuple(float(v) for v in r_star), float(e_star), float(width))


# ---------------------------------------------------------------------------
# E* curve
# ---------------------------------------------------------------------------

def simplex_lattice(size: int, resolution: int) -> List[Tuple[float, ...]]:
    """All weight tuples with coordinates k/resolution summing to at most 1, lexicographic."""
    if resolution < 1:
        raise ValueError("lattice resolution must be positive")
    return [
        tuple(k / resolution for k in counts)
        for counts in itertools.product(range(resolution + 1), repeat=size)
        if sum(counts) <= resolution
    ]


def _solve_all(problem: ScalarizationProblem, betas: Sequence[Tuple[float, ...]], inner_grid: int,
               threads: Optional[int]) -> Tuple[EStarSample, ...]:
    workers = threads or config.get_settings().threads
    weights = [WeightVector(b) for b in betas]
    if workers <= 1 or len(weights) <= 1:
        return tuple(inner_minimize(problem, w, inner_grid) for w in weights)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map() yields in submission order, so output order never depends on scheduling.
        return tuple(pool.map(lambda w: inner_minimize(problem, w, inner_grid), weights))


def sample_estar_curve(problem: ScalarizationProblem, beta_grid: Optional[int] = None,
                       inner_grid: int = config.INNER_GRID, threads: Optional[int] = None) -> EStarCurve:
    beta_grid = beta_grid or config.default_beta_grid(problem.n)
    if beta_grid < 2:
        raise ValueError("beta grid needs at least 2 divisions")
    lattice = simplex_lattice(problem.n - 1, beta_grid)
    logger.info("Sampling E* at %d lattice weights", len(lattice))
    return EStarCurve(_solve_all(problem, lattice, inner_grid, threads))


def _random_weights(rng: np.random.Generator, n: int) -> WeightVector:
    draw = rng.dirichlet(np.ones(n))[: n - 1]
    total = draw.sum()
    if total > 1.0:
        draw = draw / total
    return WeightVector(tuple(float(v) for v in draw))


def check_estar_curvature(problem: ScalarizationProblem, trials: int = config.DEFAULT_TRIALS,
                          seed: int = config.DEFAULT_SEED, inner_grid: int = config.INNER_GRID) -> CurvatureProbe:
    """Measure both directions of the convexity inequality for E* on random weight pairs."""
    if trials < 1:
        raise InvalidTrials(f"trials must be at least 1, got {trials}")
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(trials):
        beta = _random_weights(rng, problem.n)
        beta_prime = _random_weights(rng, problem.n)
        alpha = float(rng.uniform(0.0, 1.0))
        mixed = tuple(min(1.0, alpha * b + (1.0 - alpha) * bp) for b, bp in zip(beta.betas, beta_prime.betas))
        e1 = inner_minimize(problem, beta, inner_grid).e_star
        e2 = inner_minimize(problem, beta_prime, inner_grid).e_star
        em = inner_minimize(problem, WeightVector(mixed), inner_grid).e_star
        slack = alpha * e1 + (1.0 - alpha) * e2 - em
        results.append(CurvatureTrial(beta, beta_prime, alpha, slack, -slack))
    report = CurvatureProbe(seed, tuple(results))
    logger.info("Curvature check: %d/%d trials satisfy the convex direction, %d/%d the concave one",
                report.convex_holds, trials, report.reverse_holds, trials)
    return report


def envelope_derivative(problem: ScalarizationProblem, beta: WeightVector, sample: EStarSample) -> np.ndarray:
    """dE*/dbeta_x = O_x(r*) - O_n(r*) with r held at the inner minimizer."""
    _check_weights(problem, beta)
    binding = _binding(problem, sample.r_star)
    values = [evaluate(o, binding) for o in problem.objectives]
    return np.array([v - values[-1] for v in values[:-1]], dtype=np.float64)


# ---------------------------------------------------------------------------
# Outer maximization
# ---------------------------------------------------------------------------

def outer_maximize_beta(problem: ScalarizationProblem, beta_grid: Optional[int] = None,
                        inner_grid: int = config.INNER_GRID, threads: Optional[int] = None,
                        max_moves: int = 10000) -> OuterResult:
    """
    max over beta of min over r of E: lattice search, then projected coordinate ascent.

    Args:
        problem: Objectives and the resource box.
        beta_grid: Lattice resolution N (weights k/N); defaults by objective count.
        inner_grid: Scan points per resource axis for each inner solve.
        threads: Worker threads for the lattice scan; results do not depend on it.
        max_moves: Cap on accepted ascent moves.

    Returns:
        The refined weight and its sample, the best lattice sample and the
        number of inner solves spent.

    Note:
        Ties keep the first lattice maximum. The ascent step starts at 1/N and
        halves whenever no coordinate move improves E*, down to
        ``config.OUTER_MIN_STEP``.
    """
    beta_grid = beta_grid or config.default_beta_grid(problem.n)
    curve = sample_estar_curve(problem, beta_grid, inner_grid, threads)
    best = curve.samples[0]
    for s in curve.samples[1:]:
        if s.e_star > best.e_star:
            best = s
    lattice_best = best
    cache = {s.beta.betas: s for s in curve.samples}
    evaluations = len(cache)
    beta = list(best.beta.betas)
    step = 1.0 / beta_grid
    moves = 0
    while step >= config.OUTER_MIN_STEP and moves < max_moves:
        improved = False
        for i in range(len(beta)):
            for sign in (1.0, -1.0):
                room = 1.0 - (sum(beta) - beta[i])
                candidate = list(beta)
                candidate[i] = min(max(beta[i] + sign * step, 0.0), max(room, 0.0))
                key = tuple(candidate)
                if key == tuple(beta):
                    continue
                sample = cache.get(key)
                if sample is None:
                    sample = inner_minimize(problem, WeightVector(key), inner_grid)
                    cache[key] = sample
                    evaluations += 1
                if sample.e_star > best.e_star:
                    best, beta, improved = sample, candidate, True
                    moves += 1
        if not improved:
            step *= 0.5
    logger.info("Outer maximization: beta*=%s E*=%.17g after %d inner solves", best.beta.betas, best.e_star, evaluations)
    return OuterResult(best.beta, best, lattice_best, evaluations)


# ---------------------------------------------------------------------------
# Premises
# ---------------------------------------------------------------------------

def _sample_domain(problem: ScalarizationProblem, samples: int, seed: int) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in problem.domain])
    hi = np.array([b[1] for b in problem.domain])
    pts = rng.uniform(lo, hi, size=(samples, lo.size))
    return {name: pts[:, i] for i, name in enumerate(problem.variables)}


def check_positivity(problem: ScalarizationProblem, samples: int = config.PREMISE_SAMPLES,
                     seed: int = config.DEFAULT_SEED) -> Tuple[str, ...]:
    """Warn where a sampled objective is not strictly positive while the problem claims positive objectives."""
    if not problem.positive:
        return ()
    binding = _sample_domain(problem, samples, seed)
    notes = []
    for x, o in enumerate(problem.objectives, start=1):
        bad = int(np.count_nonzero(evaluate_batch(o, binding) <= 0))
        if bad:
            notes.append(f"O_{x} is not strictly positive at {bad} of {samples} sampled points")
            logger.warning("O_%d is not strictly positive at %d of %d sampled points", x, bad, samples)
    return tuple(notes)


def degenerate_single_objective(problem: ScalarizationProblem, beta_grid: Optional[int] = None,
                                inner_grid: int = config.INNER_GRID, samples: int = config.PREMISE_SAMPLES,
                                seed: int = config.DEFAULT_SEED, threads: Optional[int] = None) -> DegenerateReport:
    """Check the limit where every objective but O_1 vanishes: E* linear in beta_1, r* independent of it."""
    binding = _sample_domain(problem, samples, seed)
    for x, o in enumerate(problem.objectives[1:], start=2):
        worst = float(np.max(np.abs(evaluate_batch(o, binding))))
        if worst > config.PREMISE_ZERO_TOL:
            raise PremiseViolation(f"O_{x} is not identically zero on the domain (|O_{x}| up to {worst:.17g})")

    beta_grid = beta_grid or config.default_beta_grid(problem.n)
    lattice = [(k / beta_grid,) + (0.0,) * (problem.n - 2) for k in range(beta_grid + 1)]
    solved = _solve_all(problem, lattice, inner_grid, threads)
    at_one = solved[-1]
    weighted = [s for s in solved if s.beta.betas[0] > 0]
    degenerate = tuple(s.beta.betas[0] for s in solved if s.beta.betas[0] == 0)

    ref = np.asarray(at_one.r_star)
    independent = all(float(np.max(np.abs(np.asarray(s.r_star) - ref))) <= 1e-6 for s in weighted)
    ratios = [s.e_star / s.beta.betas[0] for s in weighted]
    spread = max(ratios) - min(ratios)

    notes = []
    if at_one.e_star <= 0:
        notes.append(f"min O_1 = {at_one.e_star:.17g} is not positive; the single-objective limit assumes O_1 > 0")
    if spread > 1e-8 * max(1.0, abs(at_one.e_star)):
        notes.append(f"E*(beta_1)/beta_1 varies by {spread:.3g} across the lattice")
    if not independent:
        notes.append("r*(beta) moves with beta_1")
    for note in notes:
        logger.warning("%s", note)
    return DegenerateReport(at_one.e_star, at_one.r_star, independent, spread, solved, degenerate, tuple(notes))
