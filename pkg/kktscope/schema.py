"""
Problem files.

TOML, ``version = 1``::

    version = 1
    kind = "kkt"            # or "scalarize"
    sense = "maximize"      # kkt only
    objectives = ["z"]
    point = [5.0]           # optional query point (kkt)

    [[variables]]
    name = "z"
    lower = 0.0
    upper = 10.0

    [[constraints]]         # kkt only
    expr = "z"
    direction = "<=W"
    bound = 5.0

Optional tuning keys: ``tol``, ``seed``, ``beta_grid``, ``inner_grid``,
``trials``, ``positive``.
"""
import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ProblemIOError, SchemaError
from .expr import as_expr
from .kkt import Constraint, Direction, Problem, Sense
from .scalarize import ScalarizationProblem

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("kktscope.schema")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VariableSpec(_Strict):
    name: str
    lower: float
    upper: float


class ConstraintSpec(_Strict):
    expr: str
    direction: Direction
    bound: Optional[float] = None


class ProblemFile(_Strict):
    version: Literal[1]
    kind: Literal["kkt", "scalarize"]
    sense: Optional[Sense] = None
    variables: List[VariableSpec] = Field(min_length=1)
    objectives: List[str] = Field(min_length=1)
    constraints: List[ConstraintSpec] = Field(default_factory=list)
    point: Optional[List[float]] = None
    tol: Optional[float] = Field(None, gt=0)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    beta_grid: Optional[int] = Field(None, ge=2)
    inner_grid: Optional[int] = Field(None, ge=2)
    trials: Optional[int] = None
    positive: bool = True


def field_path(loc) -> str:
    """Render a pydantic location tuple as ``constraints[0].bound``."""
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)
    return path or "<root>"


def _validate(data: dict) -> ProblemFile:
    try:
        return ProblemFile.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaError(field_path(first["loc"]), first["msg"]) from e


def build_problem(spec: ProblemFile) -> Union[Problem, ScalarizationProblem]:
    """Cross-field checks and conversion of a validated file into a domain object."""
    names = [v.name for v in spec.variables]
    domain = [(v.lower, v.upper) for v in spec.variables]
    objectives = [as_expr(text, f"objectives[{i}]") for i, text in enumerate(spec.objectives)]

    if spec.kind == "scalarize":
        if spec.constraints:
            raise SchemaError("constraints", "scalarization problems take no constraints")
        return ScalarizationProblem(tuple(objectives), tuple(names), tuple(domain), spec.positive)

    if spec.sense is None:
        raise SchemaError("sense", "field required for kind 'kkt'")
    if not spec.constraints:
        raise SchemaError("constraints", "at least one constraint is required for kind 'kkt'")
    constraints = []
    for j, c in enumerate(spec.constraints):
        body = as_expr(c.expr, f"constraints[{j}].expr")
        try:
            constraints.append(Constraint(body, c.direction, c.bound))
        except SchemaError as e:
            raise SchemaError(f"constraints[{j}].{e.field_path}", e.reason) from e
    if spec.point is not None and len(spec.point) != len(names):
        raise SchemaError("point", f"expected {len(names)} coordinate(s), got {len(spec.point)}")
    return Problem(spec.sense, tuple(objectives), tuple(constraints), tuple(names), tuple(domain))


def load_problem(path: Union[str, Path]):
    """Read, validate and convert a problem file.

    Returns ``(spec, problem)`` where ``spec`` keeps the optional tuning keys.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ProblemIOError(f"cannot read {path}: {e.strerror or e}") from e
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ProblemIOError(f"{path} is not UTF-8 text") from e
    except tomllib.TOMLDecodeError as e:
        raise SchemaError("<root>", f"invalid TOML: {e}") from e
    spec = _validate(data)
    problem = build_problem(spec)
    logger.info("Loaded %s problem from %s", spec.kind, path)
    return spec, problem
