import numpy as np
import pytest
from pydantic import ValidationError

from kktscope.errors import DimensionError
from kktscope.expr import parse_expression
from kktscope.oracle import (
    OracleConfig,
    brute_force_min,
    brute_force_saddle,
    finite_difference_gradient,
    mu_grid_feasibility,
)
from kktscope.scalarize import ScalarizationProblem


class TestOracleConfig:
    """Test oracle settings validation."""

    def test_defaults(self):
        """Test default values."""
        config = OracleConfig()
        assert config.grid_points >= 2 and config.h > 0

    @pytest.mark.parametrize("kwargs", [{"grid_points": 1}, {"h": 0.0}, {"seed": -1}])
    def test_invalid(self, kwargs):
        """Test rejected settings."""
        with pytest.raises(ValidationError):
            OracleConfig(**kwargs)


class TestBruteForceMin:
    """Test exhaustive grid minimization."""

    def test_lattice_vertex(self):
        """Test (r - 2)^2 on [0, 5] with 501 points."""
        point, value = brute_force_min(parse_expression("(r - 2)^2"), ["r"], [(0.0, 5.0)], OracleConfig(grid_points=501))
        assert point[0] == pytest.approx(2.0, abs=1e-12)
        assert value == pytest.approx(0.0, abs=1e-20)

    def test_monotone(self):
        """Test that an increasing function is minimized at the left endpoint."""
        point, _ = brute_force_min(parse_expression("r"), ["r"], [(0.0, 5.0)], OracleConfig(grid_points=11))
        assert point == (0.0,)

    def test_plateau(self):
        """Test the lexicographic tie-break on a constant."""
        point, value = brute_force_min(parse_expression("7"), ["a", "b"], [(0.0, 1.0), (2.0, 3.0)],
                                       OracleConfig(grid_points=5))
        assert point == (0.0, 2.0)
        assert value == 7.0

    def test_refinement_never_worse(self):
        """Test that doubling the grid does not raise the reported minimum."""
        f = parse_expression("sin(3*r) + (r - 1.3)^2")
        coarse = brute_force_min(f, ["r"], [(0.0, 4.0)], OracleConfig(grid_points=101))[1]
        fine = brute_force_min(f, ["r"], [(0.0, 4.0)], OracleConfig(grid_points=201))[1]
        assert fine <= coarse + 1e-12

    def test_dimension_limit(self):
        """Test that four variables are rejected."""
        with pytest.raises(DimensionError):
            brute_force_min(parse_expression("a"), ["a", "b", "c", "d"], [(0.0, 1.0)] * 4)


class TestBruteForceSaddle:
    """Test the dense max-min search."""

    def test_vanishing_second_objective(self):
        """Test beta* = 1 for a linearly increasing E*."""
        problem = ScalarizationProblem(("(r - 2)^2 + 1", "0"), ("r",), ((0.0, 5.0),))
        beta, _, value = brute_force_saddle(problem, OracleConfig(grid_points=101))
        assert beta == (1.0,)
        assert value == pytest.approx(1.0)

    def test_identical_objectives(self):
        """Test that the saddle value does not depend on the weight."""
        problem = ScalarizationProblem(("(r - 1)^2 + 1", "(r - 1)^2 + 1"), ("r",), ((0.0, 4.0),))
        beta, _, value = brute_force_saddle(problem, OracleConfig(grid_points=101))
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_objective_count(self):
        """Test that four objectives are rejected."""
        problem = ScalarizationProblem(("r", "r + 1", "r + 2", "r + 3"), ("r",), ((0.0, 1.0),))
        with pytest.raises(DimensionError):
            brute_force_saddle(problem)


class TestFiniteDifference:
    """Test central differences."""

    def test_square(self):
        """Test z^2 at 3."""
        assert finite_difference_gradient(parse_expression("z^2"), ["z"], [3.0])[0] == pytest.approx(6.0, abs=1e-8)

    def test_constant(self):
        """Test that a constant has zero gradient."""
        np.testing.assert_allclose(finite_difference_gradient(parse_expression("4"), ["z"], [1.0]), [0.0], atol=1e-12)

    def test_bilinear(self):
        """Test z1*z2 at (3, 4)."""
        grad = finite_difference_gradient(parse_expression("z1*z2"), ["z1", "z2"], [3.0, 4.0])
        np.testing.assert_allclose(grad, [4.0, 3.0], atol=1e-8)


class TestMuGrid:
    """Test the exhaustive multiplier search."""

    def test_first_quadrant(self):
        """Test mu = (1, 1) on the lattice."""
        assert mu_grid_feasibility([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]]) is True

    def test_opposite_quadrant(self):
        """Test that nonnegative combinations stay in the first quadrant."""
        assert mu_grid_feasibility([-1.0, -1.0], [[1.0, 0.0], [0.0, 1.0]]) is False

    def test_collinear(self):
        """Test a single generator with mu = 2."""
        assert mu_grid_feasibility([2.0, 4.0], [[1.0, 2.0]]) is True

    def test_three_generators(self):
        """Test a coarse three-constraint search."""
        grads = [[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]]
        assert mu_grid_feasibility([-1.0, 2.0], grads, step=0.1) is True

    def test_too_many_constraints(self):
        """Test that four generators are rejected."""
        with pytest.raises(DimensionError):
            mu_grid_feasibility([1.0, 1.0], [[1.0, 0.0]] * 4)
