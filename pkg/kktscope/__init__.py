from .errors import KKTScopeError
from .expr import differentiate, evaluate, parse_expression, to_text
from .kkt import Constraint, Problem, analyze, build_lagrangian, classify_case, estimate_multiplier
from .scalarize import ScalarizationProblem, WeightVector, inner_minimize, outer_maximize_beta, sample_estar_curve
from .schema import load_problem

__all__ = [
    "Constraint",
    "KKTScopeError",
    "Problem",
    "ScalarizationProblem",
    "WeightVector",
    "analyze",
    "build_lagrangian",
    "classify_case",
    "differentiate",
    "estimate_multiplier",
    "evaluate",
    "inner_minimize",
    "load_problem",
    "outer_maximize_beta",
    "parse_expression",
    "sample_estar_curve",
    "to_text",
]
__version__ = "0.1.0"
