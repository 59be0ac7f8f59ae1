"""
KKT multiplier analysis for single- and multi-objective nonlinear problems.

A problem is a sense (maximize/minimize), objectives O_x(z), constraints
C_y(z) >= 0 or C_y(z) <= W_y and a box domain for z. At a caller-supplied
point the module builds the case-specific Lagrangian, estimates the
multipliers mu_y >= 0 from stationarity, classifies their signs against the
special-case table and decides whether grad O lies in the cone spanned by the
signed gradients of the active constraints.

Sign convention (g_y = C_y - W_y for ``<=W``, g_y = -C_y for ``>=0``)::

    maximize:  L = O - sum_y mu_y * g_y
    minimize:  L = O + sum_y mu_y * g_y

so stationarity reads grad O = sum_y mu_y * s_y * grad C_y with
s_y = +1 for (max, <=W) and (min, >=0), s_y = -1 otherwise.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import nnls

from . import config
from .errors import (
    AnalysisError,
    DimensionError,
    KKTScopeError,
    NumericDomainError,
    PointOutsideDomain,
    SchemaError,
    VariableNameClash,
    ZeroConstraintGradient,
    ZeroObjectiveGradient,
)
from .expr import IDENTIFIER, Binary, Const, Expr, Unary, Var, as_expr, evaluate, evaluate_batch, gradient, variables

logger = logging.getLogger("kktscope.kkt")


class Sense(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class Direction(str, Enum):
    GEQ_ZERO = ">=0"
    LEQ_BOUND = "<=W"


class CaseTag(str, Enum):
    CASE1 = "Case1"          # maximize, all C_y >= 0
    CASE2 = "Case2"          # minimize, all C_y <= W_y
    CASE3_MAX = "Case3Max"   # maximize, all C_y <= W_y
    CASE3_MIN = "Case3Min"   # minimize, all C_y >= 0
    MIXED_MAX = "MixedMax"
    MIXED_MIN = "MixedMin"


PURE_CASES = (CaseTag.CASE1, CaseTag.CASE2, CaseTag.CASE3_MAX, CaseTag.CASE3_MIN)


class GradientSign(str, Enum):
    POS = "pos"
    NEG = "neg"


class MultiplierSign(str, Enum):
    POSITIVE = "positive"
    ZERO = "zero"


class SignClass(str, Enum):
    POSITIVE = "positive"
    FORCED_ZERO = "forced_zero"


class Verdict(str, Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    body: Expr
    direction: Direction
    bound: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "body", as_expr(self.body))
        object.__setattr__(self, "direction", Direction(self.direction))
        if self.direction is Direction.LEQ_BOUND:
            if self.bound is None or not np.isfinite(self.bound):
                raise SchemaError("bound", "a finite bound W is required for '<=W' constraints")
            object.__setattr__(self, "bound", float(self.bound))
        elif self.bound is not None:
            raise SchemaError("bound", "'>=0' constraints take no bound")

    def slack(self, value):
        """Nonnegative exactly when the constraint holds."""
        if self.direction is Direction.GEQ_ZERO:
            return value
        return self.bound - value


@dataclass(frozen=True)
class Problem:
    sense: Sense
    objectives: Tuple[Expr, ...]
    constraints: Tuple[Constraint, ...]
    variables: Tuple[str, ...]
    domain: Tuple[Tuple[float, float], ...]
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sense", Sense(self.sense))
        object.__setattr__(self, "objectives", tuple(
            as_expr(o, f"objectives[{i}]") for i, o in enumerate(self.objectives)))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain))
        if not self.objectives:
            raise SchemaError("objectives", "at least one objective is required")
        if not self.constraints:
            raise SchemaError("constraints", "at least one constraint is required")
        validate_box(self.variables, self.domain)
        declared = set(self.variables)
        bodies = [(f"objectives[{i}]", o) for i, o in enumerate(self.objectives)]
        bodies += [(f"constraints[{j}].expr", c.body) for j, c in enumerate(self.constraints)]
        for path, body in bodies:
            unknown = [v for v in variables(body) if v not in declared]
            if unknown:
                raise SchemaError(path, f"undeclared variable '{unknown[0]}'")
        notes = list(self.warnings)
        for y, c in enumerate(self.constraints, start=1):
            if c.direction is Direction.LEQ_BOUND and c.bound <= 0:
                notes.append(f"C_{y}: bound W_{y} = {c.bound:.17g} is not positive")
                logger.warning("Constraint C_%d has nonpositive bound %s", y, c.bound)
        object.__setattr__(self, "warnings", tuple(dict.fromkeys(notes)))

    @property
    def m(self) -> int:
        return len(self.objectives)

    @property
    def n(self) -> int:
        return len(self.constraints)


def validate_box(names: Sequence[str], domain: Sequence[Tuple[float, float]]) -> None:
    if not names:
        raise SchemaError("variables", "at least one variable is required")
    if len(set(names)) != len(names):
        raise SchemaError("variables", "variable names must be unique")
    if len(domain) != len(names):
        raise SchemaError("variables", "every variable needs a domain interval")
    for i, (name, (lo, hi)) in enumerate(zip(names, domain)):
        if not IDENTIFIER.match(name):
            raise SchemaError(f"variables[{i}].name", f"invalid identifier {name!r}")
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise SchemaError(f"variables[{i}]", "domain bounds must be finite")
        if lo > hi:
            raise SchemaError(f"variables[{i}]", f"empty interval [{lo}, {hi}]")


@dataclass(frozen=True)
class ConstraintMultiplier:
    index: int
    mu: float
    sign_class: SignClass
    active: bool


@dataclass(frozen=True)
class MultiplierEstimate:
    objective_index: int
    multipliers: Tuple[ConstraintMultiplier, ...]
    stationarity_residual: float
    objective_gradient: Tuple[float, ...]

    @property
    def mu(self) -> Tuple[float, ...]:
        return tuple(m.mu for m in self.multipliers)


@dataclass(frozen=True)
class ConeResult:
    verdict: Verdict
    coefficients: Tuple[float, ...]
    residual: float


@dataclass(frozen=True)
class TableEntry:
    constraint_index: int
    effective_case: CaseTag
    grad_o_sign: Optional[GradientSign]
    grad_c_sign: Optional[GradientSign]
    outcome: Optional[MultiplierSign]


@dataclass(frozen=True)
class ObjectiveAnalysis:
    estimate: MultiplierEstimate
    cone: Optional[ConeResult]
    table: Tuple[TableEntry, ...]


@dataclass(frozen=True)
class KKTReport:
    case: CaseTag
    point: Tuple[float, ...]
    active: Tuple[int, ...]
    objectives: Tuple[ObjectiveAnalysis, ...]
    warnings: Tuple[str, ...] = ()


@dataclass(frozen=True)
class PlotRecord:
    kind: str
    x1: float
    x2: float
    dx1: float
    dx2: float
    label: str


@dataclass(frozen=True)
class PlotDataset:
    records: Tuple[PlotRecord, ...]
    verdict: Optional[Verdict]

    COLUMNS = ("kind", "x1", "x2", "dx1", "dx2", "label")


# ---------------------------------------------------------------------------
# Case classification
# ---------------------------------------------------------------------------

def classify_case(problem: Problem) -> CaseTag:
    directions = {c.direction for c in problem.constraints}
    maximize = problem.sense is Sense.MAXIMIZE
    if len(directions) > 1:
        return CaseTag.MIXED_MAX if maximize else CaseTag.MIXED_MIN
    return effective_case(problem.sense, directions.pop())


def effective_case(sense: Sense, direction: Direction) -> CaseTag:
    """The pure case a single constraint of ``direction`` belongs to under ``sense``."""
    if Sense(sense) is Sense.MAXIMIZE:
        return CaseTag.CASE1 if Direction(direction) is Direction.GEQ_ZERO else CaseTag.CASE3_MAX
    return CaseTag.CASE3_MIN if Direction(direction) is Direction.GEQ_ZERO else CaseTag.CASE2


def case_sign(sense: Sense, direction: Direction) -> float:
    """s_y in grad O = sum mu_y s_y grad C_y."""
    case = effective_case(sense, direction)
    return 1.0 if case in (CaseTag.CASE3_MAX, CaseTag.CASE3_MIN) else -1.0


def classify_multiplier_sign(grad_o_sign: GradientSign, grad_c_sign: GradientSign,
                             case: CaseTag) -> MultiplierSign:
    """Whether the multiplier of a single active constraint is positive or forced to zero.

    Cases 1 and 2 need opposite gradient signs; both Case 3 variants need equal signs.
    """
    case = CaseTag(case)
    if case not in PURE_CASES:
        raise ValueError(f"{case.value} has no single sign rule; classify per constraint")
    same = GradientSign(grad_o_sign) is GradientSign(grad_c_sign)
    if case in (CaseTag.CASE3_MAX, CaseTag.CASE3_MIN):
        return MultiplierSign.POSITIVE if same else MultiplierSign.ZERO
    return MultiplierSign.ZERO if same else MultiplierSign.POSITIVE


def multiplier_truth_table() -> List[Tuple[GradientSign, GradientSign, CaseTag, MultiplierSign]]:
    """All sign combinations for every pure case, gradient O sign varying slowest."""
    return [
        (go, gc, case, classify_multiplier_sign(go, gc, case))
        for go in (GradientSign.POS, GradientSign.NEG)
        for gc in (GradientSign.POS, GradientSign.NEG)
        for case in PURE_CASES
    ]


# ---------------------------------------------------------------------------
# Lagrangian
# ---------------------------------------------------------------------------

def multiplier_name(y: int) -> str:
    return f"mu_{y}"


def _check_objective_index(problem: Problem, x: int) -> Expr:
    if not 1 <= x <= problem.m:
        raise DimensionError(f"objective index {x} outside 1..{problem.m}")
    return problem.objectives[x - 1]


def build_lagrangian(problem: Problem, x: int) -> Expr:
    """Case-specific Lagrangian of objective ``x`` with formal multipliers ``mu_1..mu_n``."""
    objective = _check_objective_index(problem, x)
    clash = [multiplier_name(y) for y in range(1, problem.n + 1) if multiplier_name(y) in problem.variables]
    if clash:
        raise VariableNameClash(f"problem variable '{clash[0]}' clashes with a multiplier name")
    op = "-" if problem.sense is Sense.MAXIMIZE else "+"
    lagrangian = objective
    for y, c in enumerate(problem.constraints, start=1):
        if c.direction is Direction.LEQ_BOUND:
            g = Binary("-", c.body, Const(c.bound))
        else:
            g = Unary("neg", c.body)
        lagrangian = Binary(op, lagrangian, Binary("*", Var(multiplier_name(y)), g))
    return lagrangian


# ---------------------------------------------------------------------------
# Multipliers and cones
# ---------------------------------------------------------------------------

def _check_point(problem: Problem, point: Sequence[float]) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64).reshape(-1)
    if p.size != len(problem.variables):
        raise DimensionError(f"point has {p.size} coordinate(s), problem has {len(problem.variables)} variable(s)")
    for name, value, (lo, hi) in zip(problem.variables, p, problem.domain):
        if not lo <= value <= hi:
            raise PointOutsideDomain(f"{name} = {value:.17g} outside [{lo:.17g}, {hi:.17g}]")
    return p


def _binding(problem: Problem, point: np.ndarray):
    return dict(zip(problem.variables, (float(v) for v in point)))


def active_set(problem: Problem, point: Sequence[float], tol: float = config.ACTIVE_TOL) -> Tuple[int, ...]:
    """1-based indices of the constraints holding with equality (within ``tol``) at ``point``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    binding = _binding(problem, np.asarray(point, dtype=np.float64).reshape(-1))
    active = []
    for y, c in enumerate(problem.constraints, start=1):
        if abs(c.slack(evaluate(c.body, binding))) <= tol:
            active.append(y)
    return tuple(active)


def _objective_gradient(problem: Problem, x: int, point: np.ndarray) -> np.ndarray:
    grad_o = gradient(_check_objective_index(problem, x), problem.variables, point)
    if np.linalg.norm(grad_o) <= config.ZERO_GRADIENT_TOL:
        raise ZeroObjectiveGradient(x)
    return grad_o


def _signed_active_gradients(problem: Problem, point: np.ndarray, active: Iterable[int]) -> List[np.ndarray]:
    columns = []
    for y in active:
        c = problem.constraints[y - 1]
        grad_c = gradient(c.body, problem.variables, point)
        if np.all(np.abs(grad_c) <= config.ZERO_GRADIENT_TOL):
            raise ZeroConstraintGradient(y)
        columns.append(case_sign(problem.sense, c.direction) * grad_c)
    return columns


def _solve_nnls(grad_o: np.ndarray, columns: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
    A = np.column_stack(columns)
    coef, _ = nnls(A, grad_o)
    coef[coef <= config.POSITIVE_MU_TOL] = 0.0
    return coef, float(np.linalg.norm(grad_o - A @ coef))


def estimate_multiplier(problem: Problem, x: int, point: Sequence[float],
                        tol: float = config.ACTIVE_TOL) -> MultiplierEstimate:
    """
    Estimate mu_y >= 0 for objective ``x`` at ``point`` from stationarity of the Lagrangian.

    Args:
        problem: The constrained problem.
        x: 1-based objective index.
        point: Query point, one coordinate per problem variable, inside the box.
        tol: Active-set tolerance on the constraint slack.

    Returns:
        One multiplier per constraint (inactive ones are 0), the stationarity
        residual ||grad O - sum mu_y s_y grad C_y|| and grad O itself.

    Note:
        A single active constraint on a scalar variable uses the closed-form
        gradient ratio; everything else is solved by nonnegative least
        squares. Multipliers whose unconstrained value would be negative are
        reported as forced to zero.
    """
    p = _check_point(problem, point)
    grad_o = _objective_gradient(problem, x, p)
    active = active_set(problem, p, tol)
    columns = _signed_active_gradients(problem, p, active)
    mu = np.zeros(problem.n)
    if not active:
        residual = float(np.linalg.norm(grad_o))
    elif p.size == 1 and len(active) == 1:
        ratio = grad_o[0] / columns[0][0]
        value = ratio if ratio > config.POSITIVE_MU_TOL else 0.0
        mu[active[0] - 1] = value
        residual = float(abs(grad_o[0] - value * columns[0][0]))
    else:
        coef, residual = _solve_nnls(grad_o, columns)
        for y, value in zip(active, coef):
            mu[y - 1] = value
    logger.debug("Objective %d at %s: active=%s mu=%s residual=%g", x, p.tolist(), active, mu.tolist(), residual)
    entries = tuple(
        ConstraintMultiplier(
            index=y,
            mu=float(mu[y - 1]),
            sign_class=SignClass.POSITIVE if mu[y - 1] > 0 else SignClass.FORCED_ZERO,
            active=y in active,
        )
        for y in range(1, problem.n + 1)
    )
    return MultiplierEstimate(x, entries, residual, tuple(float(g) for g in grad_o))


def cone_membership(grad_o: Sequence[float], constraint_grads: Sequence[Sequence[float]],
                    tol: float = config.ACTIVE_TOL) -> ConeResult:
    """Decide whether ``grad_o`` is a nonnegative combination of ``constraint_grads``.

    The gradients must already carry their case signs.
    """
    b = np.asarray(grad_o, dtype=np.float64).reshape(-1)
    if len(constraint_grads) == 0:
        raise DimensionError("cone membership needs at least one constraint gradient")
    columns = [np.asarray(g, dtype=np.float64).reshape(-1) for g in constraint_grads]
    if any(col.shape != b.shape for col in columns):
        raise DimensionError("constraint gradients must match the objective gradient dimension")
    if not (np.isfinite(b).all() and all(np.isfinite(col).all() for col in columns)):
        raise NumericDomainError("non-finite gradient in cone membership test")
    coef, residual = _solve_nnls(b, columns)
    inside = residual <= tol * (1.0 + float(np.linalg.norm(b)))
    return ConeResult(Verdict.INSIDE if inside else Verdict.OUTSIDE, tuple(float(c) for c in coef), residual)


def _sign(value: float, scale: float) -> Optional[GradientSign]:
    if abs(value) <= config.ZERO_GRADIENT_TOL * max(1.0, scale):
        return None
    return GradientSign.POS if value > 0 else GradientSign.NEG


def _table_entry(problem: Problem, y: int, grad_o: np.ndarray, point: np.ndarray) -> TableEntry:
    c = problem.constraints[y - 1]
    case = effective_case(problem.sense, c.direction)
    grad_c = gradient(c.body, problem.variables, point)
    if grad_o.size == 1:
        go, gc = _sign(grad_o[0], 1.0), _sign(grad_c[0], 1.0)
    else:
        # Vector z: read the table through the alignment of grad C with grad O.
        go = GradientSign.POS
        gc = _sign(float(grad_o @ grad_c), float(np.linalg.norm(grad_o) * np.linalg.norm(grad_c)))
    outcome = classify_multiplier_sign(go, gc, case) if go and gc else None
    return TableEntry(y, case, go, gc, outcome)


def analyze(problem: Problem, point: Sequence[float], tol: float = config.ACTIVE_TOL) -> KKTReport:
    """
    Full multiplier report for every objective of ``problem`` at ``point``.

    Args:
        problem: The constrained problem.
        point: Query point inside the variable box.
        tol: Active-set tolerance, also used for the cone verdict.

    Returns:
        The case tag, the active set and, per objective, the multiplier
        estimate, the cone verdict (None when nothing is active) and the
        sign-table entry of every constraint.

    Raises:
        AnalysisError: one or more objectives failed; every failure is kept
            with its objective and constraint index.
    """
    p = _check_point(problem, point)
    case = classify_case(problem)
    active = active_set(problem, p, tol)
    logger.info("Analyzing %s problem at %s (active: %s)", case.value, p.tolist(), list(active))
    failures = []
    results = []
    for x in range(1, problem.m + 1):
        try:
            estimate = estimate_multiplier(problem, x, p, tol)
        except ZeroConstraintGradient as err:
            failures.append((x, err.index, err))
            continue
        except KKTScopeError as err:
            failures.append((x, None, err))
            continue
        grad_o = np.asarray(estimate.objective_gradient)
        cone = None
        if active:
            cone = cone_membership(grad_o, _signed_active_gradients(problem, p, active), tol)
        table = []
        for y in range(1, problem.n + 1):
            try:
                table.append(_table_entry(problem, y, grad_o, p))
            except KKTScopeError as err:
                failures.append((x, y, err))
        results.append(ObjectiveAnalysis(estimate, cone, tuple(table)))
    if failures:
        raise AnalysisError(failures)
    return KKTReport(case, tuple(float(v) for v in p), active, tuple(results), problem.warnings)


def check_premises(problem: Problem, samples: int = config.PREMISE_SAMPLES,
                   seed: int = config.DEFAULT_SEED) -> Tuple[str, ...]:
    """Warn where sampled objectives or constraint bodies are not strictly positive."""
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in problem.domain])
    hi = np.array([b[1] for b in problem.domain])
    pts = rng.uniform(lo, hi, size=(samples, lo.size))
    binding = {name: pts[:, i] for i, name in enumerate(problem.variables)}
    notes = list(problem.warnings)
    labelled = [(f"O_{x}", o) for x, o in enumerate(problem.objectives, start=1)]
    labelled += [(f"C_{y}", c.body) for y, c in enumerate(problem.constraints, start=1)]
    for label, body in labelled:
        try:
            values = evaluate_batch(body, binding)
        except NumericDomainError as err:
            notes.append(f"{label} is undefined somewhere on the domain ({err})")
            continue
        bad = int(np.count_nonzero(values <= 0))
        if bad:
            notes.append(f"{label} is not strictly positive at {bad} of {samples} sampled points")
    for note in notes[len(problem.warnings):]:
        logger.warning("%s", note)
    return tuple(notes)


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

def emit_cone_plot_data(problem: Problem, point: Sequence[float], grid: int = config.PLOT_GRID,
                        objective: int = 1, tol: float = config.ACTIVE_TOL) -> PlotDataset:
    """Level-set samples and gradient arrows for a planar problem.

    Records come row-major over the grid (first variable slowest), then the
    objective arrow, then one arrow per constraint.
    """
    if len(problem.variables) != 2:
        raise DimensionError(f"plot data needs exactly 2 variables, problem has {len(problem.variables)}")
    if grid < 1:
        raise ValueError("grid must be a positive integer")
    p = _check_point(problem, point)
    axes = [np.linspace(lo, hi, grid) for lo, hi in problem.domain]
    X1, X2 = np.meshgrid(*axes, indexing="ij")
    binding = {problem.variables[0]: X1, problem.variables[1]: X2}
    slacks = np.stack([c.slack(evaluate_batch(c.body, binding)) for c in problem.constraints])
    nearest = np.argmin(np.abs(slacks), axis=0)
    nearest_slack = np.take_along_axis(slacks, nearest[None, ...], axis=0)[0]
    min_slack = slacks.min(axis=0)

    records = [
        PlotRecord("level", float(a), float(b), float(s), float(f), f"C_{int(k) + 1}")
        for a, b, s, f, k in zip(X1.ravel(), X2.ravel(), nearest_slack.ravel(), min_slack.ravel(), nearest.ravel())
    ]

    grad_o = _objective_gradient(problem, objective, p)
    active = active_set(problem, p, tol)
    verdict = None
    if active:
        verdict = cone_membership(grad_o, _signed_active_gradients(problem, p, active), tol).verdict
    tag = verdict.value if verdict else "none"
    records.append(PlotRecord("arrow", float(p[0]), float(p[1]), float(grad_o[0]), float(grad_o[1]),
                              f"O_{objective}:{tag}"))
    for y, c in enumerate(problem.constraints, start=1):
        g = gradient(c.body, problem.variables, p)
        records.append(PlotRecord("arrow", float(p[0]), float(p[1]), float(g[0]), float(g[1]), f"C_{y}"))
    return PlotDataset(tuple(records), verdict)
