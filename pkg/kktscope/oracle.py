"""
Brute-force reference implementations.

Pure grid scans with no refinement. The test-suite compares the analytic
and refined routines of ``kkt`` and ``scalarize`` against these.
"""
import itertools
import logging
from typing import Dict, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import DimensionError
from .expr import Expr, evaluate, evaluate_batch
from .scalarize import ScalarizationProblem, simplex_lattice

logger = logging.getLogger("kktscope.oracle")

MU_FEASIBILITY_TOL = 1e-4
_CHUNK = 4096


class OracleConfig(BaseModel):
    grid_points: int = Field(1001, ge=2)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    h: float = Field(1e-5, gt=0)


def _mesh(domain: Sequence[Tuple[float, float]], points: int):
    axes = [np.linspace(lo, hi, points) for lo, hi in domain]
    return axes, np.meshgrid(*axes, indexing="ij")


def brute_force_min(f: Expr, variables: Sequence[str], domain: Sequence[Tuple[float, float]],
                    config: OracleConfig = OracleConfig()) -> Tuple[Tuple[float, ...], float]:
    """Minimum of ``f`` over a regular grid; lexicographically smallest point on ties."""
    if len(variables) != len(domain):
        raise DimensionError("every variable needs a domain interval")
    if not 1 <= len(domain) <= 3:
        raise DimensionError(f"brute-force minimization supports 1 to 3 variables, got {len(domain)}")
    axes, mesh = _mesh(domain, config.grid_points)
    values = evaluate_batch(f, dict(zip(variables, mesh)))
    idx = np.unravel_index(int(np.argmin(values)), values.shape)
    point = tuple(float(axes[i][j]) for i, j in enumerate(idx))
    return point, float(values[idx])


def brute_force_saddle(problem: ScalarizationProblem,
                       config: OracleConfig = OracleConfig()) -> Tuple[Tuple[float, ...], Tuple[float, ...], float]:
    """max over a weight lattice of min over a resource grid of the weighted cost."""
    if problem.n not in (2, 3):
        raise DimensionError(f"saddle oracle supports 2 or 3 objectives, got {problem.n}")
    if len(problem.variables) > 2:
        raise DimensionError(f"saddle oracle supports at most 2 resource variables, got {len(problem.variables)}")
    axes, mesh = _mesh(problem.domain, config.grid_points)
    binding = dict(zip(problem.variables, mesh))
    O = np.stack([evaluate_batch(o, binding).ravel() for o in problem.objectives])
    lattice = simplex_lattice(problem.n - 1, config.grid_points - 1)
    weights = np.array([b + (max(0.0, 1.0 - sum(b)),) for b in lattice])

    best_value, best_row, best_col = -np.inf, 0, 0
    for start in range(0, len(weights), _CHUNK):
        E = weights[start:start + _CHUNK] @ O
        cols = np.argmin(E, axis=1)
        mins = E[np.arange(E.shape[0]), cols]
        row = int(np.argmax(mins))
        if mins[row] > best_value:
            best_value, best_row, best_col = float(mins[row]), start + row, int(cols[row])
    idx = np.unravel_index(best_col, mesh[0].shape)
    r_star = tuple(float(axes[i][j]) for i, j in enumerate(idx))
    logger.debug("Saddle oracle: beta*=%s r*=%s value=%.17g", lattice[best_row], r_star, best_value)
    return lattice[best_row], r_star, best_value


def finite_difference_gradient(f: Expr, variables: Sequence[str], point: Sequence[float],
                               h: float = 1e-5) -> np.ndarray:
    """Central differences (f(p + h e_i) - f(p - h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("h must be positive")
    base: Dict[str, float] = {name: float(v) for name, v in zip(variables, point)}
    grad = np.zeros(len(variables))
    for i, name in enumerate(variables):
        up, down = dict(base), dict(base)
        up[name] += h
        down[name] -= h
        grad[i] = (evaluate(f, up) - evaluate(f, down)) / (2 * h)
    return grad


def mu_grid_feasibility(grad_o: Sequence[float], constraint_grads: Sequence[Sequence[float]],
                        mu_max: float = 10.0, step: float = 1e-2) -> bool:
    """True iff some mu on the [0, mu_max]^k lattice reproduces ``grad_o`` from the signed gradients."""
    b = np.asarray(grad_o, dtype=np.float64)
    A = np.column_stack([np.asarray(g, dtype=np.float64) for g in constraint_grads])
    k = A.shape[1]
    if not 1 <= k <= 3:
        raise DimensionError(f"mu grid search supports 1 to 3 constraints, got {k}")
    tol = MU_FEASIBILITY_TOL * (1.0 + float(np.linalg.norm(b)))
    mu = np.linspace(0.0, mu_max, int(round(mu_max / step)) + 1)
    # Outer axes are looped, the last one (or two) evaluated as a block.
    inner = min(k, 2)
    block = np.stack(np.meshgrid(*([mu] * inner), indexing="ij"), axis=-1).reshape(-1, inner)
    for lead in itertools.product(mu, repeat=k - inner):
        partial = b - A[:, :k - inner] @ np.asarray(lead) if lead else b
        residual = np.linalg.norm(partial[None, :] - block @ A[:, k - inner:].T, axis=1)
        if residual.min() <= tol:
            return True
    return False
