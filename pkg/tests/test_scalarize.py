import numpy as np
import pytest

from kktscope.errors import InvalidTrials, PointOutsideDomain, PremiseViolation, SchemaError, SimplexViolation
from kktscope.expr import evaluate, evaluate_batch
from kktscope.oracle import OracleConfig, brute_force_min, brute_force_saddle
from kktscope.scalarize import (
    ScalarizationProblem,
    WeightVector,
    check_estar_curvature,
    check_positivity,
    cost,
    cost_expression,
    degenerate_single_objective,
    envelope_derivative,
    grid_axes,
    inner_minimize,
    line_minimize,
    outer_maximize_beta,
    sample_estar_curve,
    simplex_lattice,
)


def quad_pair(shifted=False, domain=(0.0, 4.0)):
    if shifted:
        objectives = ("(r - 1)^2 + 1", "(r - 3)^2 + 2")
    else:
        objectives = ("(r - 1)^2", "(r - 3)^2")
    return ScalarizationProblem(objectives, ("r",), (domain,))


def single_objective(first="(r - 2)^2 + 1", second="0"):
    return ScalarizationProblem((first, second), ("r",), ((0.0, 5.0),))


class TestWeights:
    """Test weight vectors on the simplex."""

    def test_implied_last_weight(self):
        """Test that beta_n = 1 - sum(beta)."""
        w = WeightVector((0.25, 0.5))
        assert w.beta_n == 0.25
        assert w.full == (0.25, 0.5, 0.25)

    @pytest.mark.parametrize("betas", [(1.2,), (-0.1,), (0.6, 0.6)])
    def test_outside_simplex(self, betas):
        """Test that weights off the simplex are rejected."""
        with pytest.raises(SimplexViolation):
            WeightVector(betas)

    def test_wrong_length(self):
        """Test that the weight count must be n - 1."""
        with pytest.raises(SimplexViolation):
            cost(quad_pair(), WeightVector((0.2, 0.3)), [1.0])

    def test_lattice_order_and_size(self):
        """Test the lexicographic simplex lattice."""
        assert simplex_lattice(1, 4) == [(0.0,), (0.25,), (0.5,), (0.75,), (1.0,)]
        lattice = simplex_lattice(2, 4)
        assert len(lattice) == 15
        assert lattice[:3] == [(0.0, 0.0), (0.0, 0.25), (0.0, 0.5)]
        assert lattice == sorted(lattice)


class TestProblem:
    """Test scalarization problem validation."""

    def test_needs_two_objectives(self):
        """Test that a single objective is rejected."""
        with pytest.raises(SchemaError):
            ScalarizationProblem(("r",), ("r",), ((0.0, 1.0),))

    def test_resource_dimension_limit(self):
        """Test that at most three resource variables are accepted."""
        names = ("a", "b", "c", "d")
        with pytest.raises(SchemaError):
            ScalarizationProblem(("a", "b"), names, ((0.0, 1.0),) * 4)


class TestCost:
    """Test the weighted cost."""

    def test_formula(self):
        """Test E = beta O_1 + (1 - beta) O_2."""
        assert cost(quad_pair(), WeightVector((0.25,)), [2.0]) == pytest.approx(0.25 * 1 + 0.75 * 1)

    def test_affine_in_weights(self):
        """Test that E is affine in beta at fixed r."""
        problem = ScalarizationProblem(("r^2 + 1", "exp(r)", "3 - r"), ("r",), ((0.0, 2.0),))
        rng = np.random.default_rng(5)
        for _ in range(50):
            b1, b2 = (WeightVector(tuple(rng.dirichlet(np.ones(3))[:2])) for _ in range(2))
            alpha = rng.uniform()
            mixed = WeightVector(tuple(alpha * x + (1 - alpha) * y for x, y in zip(b1.betas, b2.betas)))
            r = [rng.uniform(0.0, 2.0)]
            expected = alpha * cost(problem, b1, r) + (1 - alpha) * cost(problem, b2, r)
            assert cost(problem, mixed, r) == pytest.approx(expected, abs=1e-12)

    def test_identical_objectives_collapse(self):
        """Test that identical objectives make E exactly the shared objective."""
        problem = ScalarizationProblem(("(r - 1)^2 + 1", "(r - 1)^2 + 1"), ("r",), ((0.0, 4.0),))
        assert cost_expression(problem, WeightVector((0.3,))) == problem.objectives[0]

    def test_zero_objective_drops_out(self):
        """Test that a zero objective contributes nothing."""
        problem = single_objective()
        expr = cost_expression(problem, WeightVector((0.5,)))
        assert evaluate(expr, {"r": 2.0}) == 0.5

    def test_outside_domain(self):
        """Test that r must lie in the box."""
        with pytest.raises(PointOutsideDomain):
            cost(quad_pair(), WeightVector((0.5,)), [5.0])


class TestLineMinimize:
    """Test the bounded line search."""

    def test_quadratic_minimum(self):
        """Test a quadratic with its minimum at 0.3."""
        t, width = line_minimize(lambda t: (t - 0.3) ** 2, 0.0, 1.0, 0.25, xatol=1e-9)
        assert abs(t - 0.3) <= 1e-8
        assert width <= 1e-8

    def test_degenerate_interval(self):
        """Test that a zero-width interval returns its endpoint with no bracket."""
        assert line_minimize(lambda t: t, 2.0, 2.0, 2.0) == (2.0, 0.0)

    def test_minimum_at_boundary(self):
        """Test an increasing function: the minimizer is the left end, never outside it."""
        t, _ = line_minimize(lambda t: t, 2.0, 3.0, 2.5)
        assert 2.0 <= t <= 2.0 + 1e-7

    def test_grid_cap(self):
        """Test that multi-dimensional scans stay under the point cap."""
        axes = grid_axes(((0.0, 1.0),) * 3, 1024)
        assert len(axes[0]) ** 3 <= 2 ** 20
        assert len(grid_axes(((0.0, 1.0),), 1024)[0]) == 1024


class TestInnerMinimize:
    """Test the inner minimization over resources."""

    @pytest.mark.parametrize("beta", [0.0, 0.25, 0.5, 0.8, 1.0])
    def test_quadratic_pair(self, beta):
        """Test E*(beta) = 4 beta (1 - beta) with r* = 3 - 2 beta."""
        sample = inner_minimize(quad_pair(), WeightVector((beta,)))
        assert sample.e_star == pytest.approx(4 * beta * (1 - beta), abs=1e-6)
        assert sample.r_star[0] == pytest.approx(3 - 2 * beta, abs=1e-6)
        assert sample.inner_residual <= 1e-8

    def test_sample_is_consistent_with_cost(self):
        """Test that the reported value is the cost at the reported minimizer."""
        problem = quad_pair(shifted=True)
        sample = inner_minimize(problem, WeightVector((0.3,)))
        assert sample.e_star == cost(problem, sample.beta, sample.r_star)

    def test_plateau_tie_breaks_to_lower_bound(self):
        """Test that a constant cost picks the smallest grid point."""
        problem = ScalarizationProblem(("1", "2"), ("r",), ((0.5, 3.0),))
        sample = inner_minimize(problem, WeightVector((0.5,)))
        assert sample.r_star == (0.5,)
        assert sample.e_star == 1.5

    def test_two_resources(self):
        """Test a separable problem in two resource variables."""
        problem = ScalarizationProblem(("(a - 1)^2 + (b - 2)^2", "(a - 3)^2 + b^2"), ("a", "b"),
                                       ((0.0, 4.0), (0.0, 4.0)))
        sample = inner_minimize(problem, WeightVector((0.5,)))
        np.testing.assert_allclose(sample.r_star, [2.0, 1.0], atol=1e-6)
        assert sample.e_star == pytest.approx(2.0, abs=1e-9)

    @pytest.mark.slow
    def test_agrees_with_grid_oracle(self):
        """Test 50 random convex instances at 20 weights each against a 10^4-point scan."""
        rng = np.random.default_rng(42)
        config = OracleConfig(grid_points=10001)
        for _ in range(50):
            objectives = tuple(
                f"{float(rng.uniform(0.5, 2.0))!r}*(r - {float(rng.uniform(0.0, 4.0))!r})^2"
                f" + {float(rng.uniform(0.0, 1.0))!r} + {float(rng.uniform(0.0, 0.5))!r}*exp(r/4)"
                for _ in range(2)
            )
            problem = ScalarizationProblem(objectives, ("r",), ((0.0, 4.0),))
            for (beta,) in simplex_lattice(1, 19):
                sample = inner_minimize(problem, WeightVector((beta,)))
                _, oracle_value = brute_force_min(cost_expression(problem, sample.beta), ("r",), ((0.0, 4.0),),
                                                  config)
                assert abs(sample.e_star - oracle_value) <= 1e-6


class TestCurve:
    """Test E* sampling on the lattice."""

    def test_five_samples(self):
        """Test the quadratic pair at lattice resolution 4."""
        curve = sample_estar_curve(quad_pair(), beta_grid=4)
        assert [s.beta.betas for s in curve.samples] == [(0.0,), (0.25,), (0.5,), (0.75,), (1.0,)]
        np.testing.assert_allclose([s.e_star for s in curve.samples], [0.0, 0.75, 1.0, 0.75, 0.0], atol=1e-6)
        assert curve.columns() == ["beta_1", "r_1", "e_star", "residual"]

    def test_lower_bound_of_cost(self):
        """Test E*(beta) <= E(beta, r) on sampled resources."""
        problem = quad_pair(shifted=True)
        rng = np.random.default_rng(1)
        for s in sample_estar_curve(problem, beta_grid=8).samples:
            for r in rng.uniform(0.0, 4.0, size=20):
                assert s.e_star <= cost(problem, s.beta, [r]) + 1e-12

    def test_thread_count_does_not_change_output(self):
        """Test identical samples with one and several workers."""
        problem = ScalarizationProblem(("(r - 1)^2 + 1", "(r - 3)^2 + 2", "r + 1"), ("r",), ((0.0, 4.0),))
        one = sample_estar_curve(problem, beta_grid=4, threads=1)
        many = sample_estar_curve(problem, beta_grid=4, threads=3)
        assert one == many


class TestCurvature:
    """Test the curvature check of E*."""

    def test_concave_for_pointwise_minimum(self):
        """Test that the reverse inequality holds on every trial."""
        curvature = check_estar_curvature(quad_pair(), trials=100, seed=7)
        assert len(curvature.trials) == 100
        assert all(t.slack_reverse >= -1e-9 for t in curvature.trials)
        assert curvature.reverse_holds == 100

    def test_reproducible(self):
        """Test that the same seed gives the same alphas and slacks."""
        a = check_estar_curvature(quad_pair(), trials=5, seed=3, inner_grid=64)
        b = check_estar_curvature(quad_pair(), trials=5, seed=3, inner_grid=64)
        assert a == b

    def test_linear_when_single_objective(self):
        """Test that both directions hold when E* is linear."""
        curvature = check_estar_curvature(single_objective(), trials=20, seed=0)
        assert curvature.both_hold == 20

    def test_invalid_trials(self):
        """Test that zero trials is rejected."""
        with pytest.raises(InvalidTrials):
            check_estar_curvature(quad_pair(), trials=0)


def _single_grid_minimum(problem, beta, grid=1024, gap=1e-6):
    """True when the best local minimum of the scanned cost beats the runner-up by more than ``gap``."""
    axis = grid_axes(problem.domain, grid)[0]
    values = evaluate_batch(cost_expression(problem, beta), {"r": axis})
    left = np.concatenate(([np.inf], values[:-1]))
    right = np.concatenate((values[1:], [np.inf]))
    minima = np.sort(values[(values <= left) & (values <= right)])
    return minima.size == 1 or minima[1] - minima[0] > gap


class TestEnvelope:
    """Test the envelope derivative."""

    def test_matches_closed_form(self):
        """Test dE*/dbeta = 4 - 8 beta for the quadratic pair."""
        problem = quad_pair()
        beta = WeightVector((0.3,))
        derivative = envelope_derivative(problem, beta, inner_minimize(problem, beta))
        assert derivative[0] == pytest.approx(1.6, abs=1e-6)

    def test_matches_finite_difference_of_curve(self):
        """Test against central differences of sampled E*."""
        problem = quad_pair(shifted=True)
        h = 1e-4
        for beta in (0.2, 0.45, 0.7):
            w = WeightVector((beta,))
            up = inner_minimize(problem, WeightVector((beta + h,))).e_star
            down = inner_minimize(problem, WeightVector((beta - h,))).e_star
            derivative = envelope_derivative(problem, w, inner_minimize(problem, w))[0]
            assert derivative == pytest.approx((up - down) / (2 * h), abs=1e-3)

    @pytest.mark.slow
    def test_random_nonconvex_pairs(self):
        """Test 50 seeded wavy quadratic pairs at every interior lattice weight with a single grid minimum."""
        rng = np.random.default_rng(41)
        h = 1e-4
        checked = agreed = 0
        for _ in range(50):
            objectives = []
            for _ in range(2):
                a, c = float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 3.5))
                b, d = float(rng.uniform(0.0, 0.8)), float(rng.uniform(1.0, 2.0))
                objectives.append(f"{a!r}*(r - {c!r})^2 + {b!r}*sin(3*r) + {d!r}")
            problem = ScalarizationProblem(tuple(objectives), ("r",), ((0.0, 4.0),))
            for (beta,) in simplex_lattice(1, 8)[1:-1]:
                w = WeightVector((beta,))
                if not _single_grid_minimum(problem, w):
                    continue
                up = inner_minimize(problem, WeightVector((beta + h,)))
                down = inner_minimize(problem, WeightVector((beta - h,)))
                derivative = envelope_derivative(problem, w, inner_minimize(problem, w))[0]
                checked += 1
                if abs(derivative - (up.e_star - down.e_star) / (2 * h)) <= 1e-3:
                    agreed += 1
                else:
                    # a disagreement must come from the minimizer jumping between basins
                    assert abs(up.r_star[0] - down.r_star[0]) > 1e-2
        assert checked >= 100
        assert agreed >= 0.95 * checked


class TestOuterMaximize:
    """Test the max over weights of E*."""

    def test_shifted_quadratic_pair(self):
        """Test beta* = 0.375 and E* = 2.5625."""
        result = outer_maximize_beta(quad_pair(shifted=True))
        assert result.beta.betas[0] == pytest.approx(0.375, abs=1e-6)
        assert result.sample.e_star == pytest.approx(2.5625, abs=1e-9)

    def test_agrees_with_saddle_oracle(self):
        """Test agreement with a dense grid saddle search."""
        problem = quad_pair(shifted=True, domain=(0.0, 5.0))
        result = outer_maximize_beta(problem)
        beta, _, value = brute_force_saddle(problem, OracleConfig(grid_points=1001))
        assert abs(result.beta.betas[0] - beta[0]) <= 2e-3
        assert abs(result.sample.e_star - value) <= 1e-5

    def test_not_below_any_lattice_sample(self):
        """Test that the refined value dominates the lattice."""
        problem = quad_pair(shifted=True)
        result = outer_maximize_beta(problem, beta_grid=10)
        curve = sample_estar_curve(problem, beta_grid=10)
        assert all(result.sample.e_star >= s.e_star for s in curve.samples)

    def test_vanishing_second_objective(self):
        """Test that beta* = 1 when E* increases linearly."""
        result = outer_maximize_beta(single_objective())
        assert result.beta.betas[0] == pytest.approx(1.0, abs=1e-6)

    def test_identical_objectives_keep_first_weight(self):
        """Test the tie-break to the first lattice weight."""
        problem = ScalarizationProblem(("(r - 1)^2 + 1", "(r - 1)^2 + 1"), ("r",), ((0.0, 4.0),))
        result = outer_maximize_beta(problem, beta_grid=8)
        assert result.beta.betas == (0.0,)


class TestDegenerate:
    """Test the single-objective limit."""

    def test_minimizer_independent_of_weight(self):
        """Test E*(1) = 1 at r* = 2 with r* fixed across the lattice."""
        report = degenerate_single_objective(single_objective(), beta_grid=16)
        assert report.e_star_at_one == pytest.approx(1.0, abs=1e-9)
        assert report.r_star_at_one[0] == pytest.approx(2.0, abs=1e-6)
        assert report.r_star_curve_independent is True
        assert report.degenerate_betas == (0.0,)
        assert report.ratio_spread <= 1e-8
        assert report.warnings == ()

    def test_nonzero_second_objective(self):
        """Test that a second objective that is not identically zero is a premise violation."""
        with pytest.raises(PremiseViolation):
            degenerate_single_objective(single_objective(second="r - 2"), beta_grid=4)

    def test_nonpositive_first_objective_warns(self):
        """Test the warning when min O_1 <= 0."""
        report = degenerate_single_objective(single_objective(first="(r - 2)^2 - 1"), beta_grid=4)
        assert any("not positive" in w for w in report.warnings)


class TestPositivity:
    """Test the positive-objective premise."""

    def test_negative_objective_reported(self):
        """Test a warning for an objective that goes negative."""
        problem = ScalarizationProblem(("r - 1", "r"), ("r",), ((0.0, 4.0),))
        warnings = check_positivity(problem)
        assert len(warnings) == 1 and warnings[0].startswith("O_1")

    def test_flag_disables_check(self):
        """Test that the check is skipped when positivity is not claimed."""
        problem = ScalarizationProblem(("r - 1", "r"), ("r",), ((0.0, 4.0),), positive=False)
        assert check_positivity(problem) == ()

    def test_identically_zero_objective_reported(self):
        """Test that an objective equal to 0 everywhere fails the strict positivity check."""
        problem = ScalarizationProblem(("r + 1", "0"), ("r",), ((0.0, 4.0),))
        warnings = check_positivity(problem)
        assert warnings == ("O_2 is not strictly positive at 1000 of 1000 sampled points",)
