"""
Exception hierarchy for kktscope.

Every error carries a short machine code and the process exit code the CLI
maps it to. The CLI prints the first diagnostic as ``ERROR <code>: <message>``.
"""
from typing import Any, Dict, List, Optional, Sequence, Tuple

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_PREMISE = 4


class KKTScopeError(Exception):
    """Base class for all kktscope errors."""

    code = "error"
    exit_code = EXIT_NUMERIC


class ConfigError(KKTScopeError, ValueError):
    code = "usage"
    exit_code = EXIT_USAGE


# Input errors (exit 2)

class ProblemIOError(KKTScopeError, OSError):
    code = "io"
    exit_code = EXIT_INPUT


class SchemaError(KKTScopeError, ValueError):
    code = "schema"
    exit_code = EXIT_INPUT

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        self.reason = message
        super().__init__(f"{field_path}: {message}")


class ExpressionError(KKTScopeError, ValueError):
    code = "expression"
    exit_code = EXIT_INPUT

    def __init__(self, message: str, offset: int = 0, field_path: Optional[str] = None):
        self.offset = offset
        self.field_path = field_path
        self.detail = message
        prefix = f"{field_path}: " if field_path else ""
        super().__init__(f"{prefix}{message} at offset {offset}")

    def at(self, field_path: str) -> "ExpressionError":
        """Return a copy of this error annotated with the problem-file field it came from."""
        return type(self)(self.detail, self.offset, field_path)


class ExprSyntaxError(ExpressionError):
    """Malformed expression text; ``offset`` is the 0-based character position."""


class NonConstantExponent(ExpressionError):
    """The exponent of ``^`` is not a constant."""


# Numeric failures (exit 3)

class NumericError(KKTScopeError, ArithmeticError):
    code = "numeric"
    exit_code = EXIT_NUMERIC


class UnboundVariable(NumericError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable '{name}'")


class NumericDomainError(NumericError):
    def __init__(self, message: str, point: Optional[Dict[str, float]] = None):
        self.point = point
        if point:
            where = ", ".join(f"{k}={v:.17g}" for k, v in point.items())
            message = f"{message} at ({where})"
        super().__init__(message)


class ZeroConstraintGradient(NumericError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"gradient of active constraint C_{index} vanishes; multiplier undefined")


class ZeroObjectiveGradient(NumericError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"gradient of objective O_{index} vanishes at the query point")


class DimensionError(NumericError):
    pass


class SimplexViolation(NumericError):
    pass


class VariableNameClash(NumericError):
    pass


class InvalidTrials(NumericError):
    pass


class PointOutsideDomain(NumericError):
    pass


class AnalysisError(NumericError):
    """Failures collected while analyzing several objectives and constraints."""

    def __init__(self, failures: Sequence[Tuple[int, Optional[int], KKTScopeError]]):
        self.failures: List[Tuple[int, Optional[int], KKTScopeError]] = list(failures)
        first = self.failures[0][2]
        self.code = first.code
        self.exit_code = first.exit_code
        parts = []
        for x, y, err in self.failures:
            where = f"objective {x}" if y is None else f"objective {x}, constraint {y}"
            parts.append(f"{where}: {err}")
        super().__init__("; ".join(parts))


# Premise violations (exit 4)

class PremiseViolation(KKTScopeError):
    code = "premise"
    exit_code = EXIT_PREMISE


class StrictWarnings(KKTScopeError):
    code = "strict"
    exit_code = EXIT_PREMISE

    def __init__(self, warnings: Sequence[str]):
        self.warnings = list(warnings)
        super().__init__(f"{len(self.warnings)} warning(s) with --strict: " + "; ".join(self.warnings))


def describe(error: Any) -> str:
    """Single-line diagnostic for ``error``."""
    text = " ".join(str(error).split())
    return f"ERROR {getattr(error, 'code', 'error')}: {text}"
