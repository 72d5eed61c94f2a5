"""Unit tests for cost/penalty primitives and instance validation."""

import math

import numpy as np
import pytest

from storopt.models import (
    ExponentialPenalty,
    InversePenalty,
    MarketImpactCost,
    PeriodSpec,
    PiecewiseLinearCost,
    PriceTakerCost,
    ProblemInstance,
    RateWindow,
    TabulatedPenalty,
    ZeroPenalty,
    argmin_tilted,
    build_instance,
    cost_eval,
    cost_subgradient,
    penalty_derivative,
    penalty_derivative_interval,
    penalty_eval,
    validate_instance,
)

RATES = RateWindow(p_in=1.0, p_out=1.0)


def dense_grid_argmin(fun, lo, hi, n=200001):
    xs = np.linspace(lo, hi, n)
    return xs[int(np.argmin(fun(xs)))]


def central_diff(fun, x, h=1e-6):
    return (fun(x + h) - fun(x - h)) / (2.0 * h)


# ---------------------------------------------------------------------------
# cost_eval
# ---------------------------------------------------------------------------


def test_market_impact_buy_value():
    cost = MarketImpactCost(c=50.0, delta=0.05, eta=0.85)
    assert cost_eval(cost, 1.0, RATES) == pytest.approx(52.5, abs=1e-12)


def test_cost_is_zero_at_zero():
    models = [
        PriceTakerCost(20.0, 17.0),
        MarketImpactCost(c=50.0, delta=0.05, eta=0.85),
        PiecewiseLinearCost(((-1.0, 5.0), (0.0, 10.0), (0.5, 12.0))),
    ]
    for cost in models:
        assert cost_eval(cost, 0.0, RATES) == 0.0


def test_market_impact_sell_value():
    # Selling branch: eta * c * x * (1 + delta*x); cross-checked against a
    # dense evaluation of the same closed form.
    cost = MarketImpactCost(c=50.0, delta=0.05, eta=0.85)
    expected = 0.85 * 50.0 * (-1.0) * (1.0 + 0.05 * (-1.0))
    assert expected == pytest.approx(-40.375, abs=1e-12)
    assert cost_eval(cost, -1.0, RATES) == pytest.approx(-40.375, abs=1e-12)
    xs = np.linspace(-1.0, -1e-9, 1001)
    assert np.allclose(cost.value(xs), 0.85 * 50.0 * xs * (1 + 0.05 * xs))


def test_cost_eval_outside_window_raises():
    cost = PriceTakerCost(20.0, 17.0)
    with pytest.raises(ValueError):
        cost_eval(cost, 1.5, RATES)
    with pytest.raises(ValueError):
        cost_eval(cost, -1.0 - 1e-6, RATES)


# ---------------------------------------------------------------------------
# cost_subgradient
# ---------------------------------------------------------------------------


def test_price_taker_kink_interval():
    cost = PriceTakerCost(20.0, 17.0)
    assert cost_subgradient(cost, 0.0) == (17.0, 20.0)


def test_price_taker_linear_region():
    cost = PriceTakerCost(20.0, 17.0)
    assert cost_subgradient(cost, 0.3) == (20.0, 20.0)
    assert cost_subgradient(cost, -0.3) == (17.0, 17.0)


def test_market_impact_derivative_matches_finite_differences():
    # d/dx of c*x*(1+delta*x) is c*(1+2*delta*x); at c=50, delta=0.05,
    # x=0.5 that is 52.5.  Oracle: central finite differences.
    cost = MarketImpactCost(c=50.0, delta=0.05, eta=1.0)
    fd = central_diff(lambda x: cost.value(x), 0.5)
    assert fd == pytest.approx(52.5, rel=1e-7)
    lo, hi = cost_subgradient(cost, 0.5)
    assert lo == hi == pytest.approx(52.5, abs=1e-12)


def test_piecewise_linear_subgradient_at_breakpoint():
    cost = PiecewiseLinearCost(((-1.0, 5.0), (0.0, 10.0), (0.5, 12.0)))
    assert cost_subgradient(cost, 0.0) == (5.0, 10.0)
    assert cost_subgradient(cost, 0.5) == (10.0, 12.0)
    assert cost_subgradient(cost, 0.25) == (10.0, 10.0)


def test_piecewise_linear_value_matches_slope_integral():
    cost = PiecewiseLinearCost(((-1.0, 5.0), (0.0, 10.0), (0.5, 12.0)))
    # Integrate slopes from 0 by hand: value(0.75) = 10*0.5 + 12*0.25.
    assert cost.value(0.75) == pytest.approx(8.0, abs=1e-12)
    # value(-0.5) = -(5 * 0.5) on the left branch.
    assert cost.value(-0.5) == pytest.approx(-2.5, abs=1e-12)


def test_non_convex_piecewise_rejected():
    with pytest.raises(ValueError):
        PiecewiseLinearCost(((-1.0, 10.0), (0.0, 5.0)))


def test_price_taker_rejects_sell_above_buy():
    with pytest.raises(ValueError):
        PriceTakerCost(c_buy=10.0, c_sell=11.0)


# ---------------------------------------------------------------------------
# argmin_tilted
# ---------------------------------------------------------------------------


def test_argmin_tilted_sell_hard():
    cost = PriceTakerCost(20.0, 17.0)
    assert argmin_tilted(cost, RATES, nu=10.0, eps=1e-9) == pytest.approx(-1.0, abs=1e-12)


def test_argmin_tilted_inside_kink():
    cost = PriceTakerCost(20.0, 17.0)
    assert argmin_tilted(cost, RATES, nu=18.5, eps=1e-9) == 0.0


def test_argmin_tilted_market_impact_interior():
    # Solve c*(1+2*delta*x) = nu analytically and by dense-grid search.
    cost = MarketImpactCost(c=50.0, delta=0.05, eta=1.0)
    got = argmin_tilted(cost, RATES, nu=52.5, eps=0.0)
    assert got == pytest.approx(0.5, abs=1e-9)
    grid = dense_grid_argmin(lambda x: cost.value(x) - 52.5 * x, -1.0, 1.0)
    assert got == pytest.approx(grid, abs=2e-5)


def test_argmin_tilted_requires_eps_for_linear_costs():
    with pytest.raises(ValueError):
        argmin_tilted(PriceTakerCost(20.0, 17.0), RATES, nu=18.0, eps=0.0)


def test_argmin_tilted_monotone_and_in_window():
    rng = np.random.default_rng(7)
    eps = 1e-6
    for _ in range(50):
        kind = rng.integers(3)
        c = float(rng.uniform(5.0, 100.0))
        if kind == 0:
            cost = PriceTakerCost(c, c * float(rng.uniform(0.5, 1.0)))
        elif kind == 1:
            cost = MarketImpactCost(c=c, delta=float(rng.uniform(0.0, 0.4)), eta=float(rng.uniform(0.5, 1.0)))
        else:
            slopes = np.sort(rng.uniform(-c, c, size=3))
            cost = PiecewiseLinearCost(
                ((-0.6, float(slopes[0])), (0.0, float(slopes[1])), (0.4, float(slopes[2])))
            )
        rates = RateWindow(p_in=float(rng.uniform(0.2, 2.0)), p_out=float(rng.uniform(0.2, 2.0)))
        nus = np.sort(rng.uniform(-2 * c, 2 * c, size=8))
        xs = [argmin_tilted(cost, rates, float(nu), eps) for nu in nus]
        assert all(b >= a - 1e-12 for a, b in zip(xs, xs[1:])), "argmin not monotone in tilt"
        for nu, x in zip(nus, xs):
            assert -rates.p_out - 1e-12 <= x <= rates.p_in + 1e-12
            # Stationarity: nu - 2*eps*x must lie in the subgradient at x,
            # one-sided at the window ends.
            resid = float(nu) - 2.0 * eps * x
            lo, hi = cost.subgradient(x)
            tol = 1e-7 * (1.0 + abs(lo) + abs(hi))
            if x >= rates.p_in - 1e-12:
                assert resid >= lo - tol
            elif x <= -rates.p_out + 1e-12:
                assert resid <= hi + tol
            else:
                assert lo - tol <= resid <= hi + tol


def test_efficiency_adjustment_preserves_convexity():
    # For an increasing market-impact base cost and eta in (0, 1], sampled
    # subgradients must be nondecreasing across the whole window.
    rng = np.random.default_rng(21)
    for _ in range(25):
        cost = MarketImpactCost(
            c=float(rng.uniform(1.0, 100.0)),
            delta=float(rng.uniform(0.0, 0.45)),
            eta=float(rng.uniform(0.05, 1.0)),
        )
        xs = np.linspace(-1.0, 1.0, 41)
        prev_hi = -math.inf
        for x in xs:
            lo, hi = cost.subgradient(float(x))
            assert lo >= prev_hi - 1e-9
            prev_hi = hi


# ---------------------------------------------------------------------------
# penalties
# ---------------------------------------------------------------------------


def test_exponential_penalty_values():
    p = ExponentialPenalty(scale=10.0, decay=1.0)
    assert penalty_eval(p, 0.0) == pytest.approx(10.0, abs=1e-12)
    assert penalty_derivative(p, 0.0) == pytest.approx(-10.0, abs=1e-12)


def test_zero_penalty():
    p = ZeroPenalty()
    for s in (0.0, 1.7, 10.0):
        assert penalty_eval(p, s) == 0.0
        assert penalty_derivative(p, s) == 0.0


def test_inverse_penalty_values():
    p = InversePenalty(weight=1.0, floor=0.01)
    assert penalty_eval(p, 2.0) == pytest.approx(0.5, abs=1e-12)
    assert penalty_derivative(p, 2.0) == pytest.approx(-0.25, abs=1e-12)
    fd = central_diff(lambda s: p.value(s), 2.0)
    assert fd == pytest.approx(-0.25, rel=1e-6)


def test_inverse_penalty_linear_extension_below_floor():
    p = InversePenalty(weight=1.0, floor=0.1)
    # Tangent continuation at the floor: value 10 + 100*(floor - s).
    assert penalty_eval(p, 0.0) == pytest.approx(10.0 + 100.0 * 0.1, abs=1e-9)
    assert penalty_derivative(p, 0.05) == pytest.approx(-100.0, abs=1e-9)
    assert np.isfinite(penalty_eval(p, -0.5))


def test_exponential_zero_scale_equals_zero_penalty():
    p = ExponentialPenalty(scale=0.0, decay=1.0)
    z = ZeroPenalty()
    for s in np.linspace(0.0, 10.0, 11):
        assert penalty_eval(p, float(s)) == penalty_eval(z, float(s))
        assert penalty_derivative(p, float(s)) == penalty_derivative(z, float(s))


def test_penalty_derivative_matches_finite_differences():
    rng = np.random.default_rng(3)
    models = [
        ExponentialPenalty(scale=float(rng.uniform(0.1, 20.0)), decay=float(rng.uniform(0.1, 3.0))),
        InversePenalty(weight=float(rng.uniform(0.1, 5.0)), floor=0.05),
    ]
    for p in models:
        for s in rng.uniform(0.2, 8.0, size=12):
            fd = central_diff(lambda u: p.value(u), float(s))
            assert penalty_derivative(p, float(s)) == pytest.approx(fd, rel=1e-6)


def test_tabulated_penalty_left_slope_and_interval():
    p = TabulatedPenalty(((0.0, 4.0), (1.0, 2.0), (2.0, 1.0), (3.0, 0.75)))
    assert penalty_eval(p, 0.5) == pytest.approx(3.0, abs=1e-12)
    # Left slope at an interior knot; the one-sided pair exposes both.
    assert penalty_derivative(p, 1.0) == pytest.approx(-2.0, abs=1e-12)
    assert penalty_derivative_interval(p, 1.0) == pytest.approx((-2.0, -1.0))
    # Linear extension beyond the table.
    assert penalty_eval(p, 4.0) == pytest.approx(0.5, abs=1e-12)
    assert penalty_eval(p, -1.0) == pytest.approx(6.0, abs=1e-12)


def test_tabulated_penalty_rejects_bad_shapes():
    with pytest.raises(ValueError):
        TabulatedPenalty(((0.0, 1.0), (1.0, 2.0)))  # increasing
    with pytest.raises(ValueError):
        TabulatedPenalty(((0.0, 4.0), (1.0, 1.0), (2.0, 0.9), (3.0, 0.0)))  # concave kink


# ---------------------------------------------------------------------------
# validate_instance
# ---------------------------------------------------------------------------


def test_validate_rate_limited_reachability():
    # E=10, P=1, s0=0: a hard lower bound of 6 on period 5 cannot be
    # reached (at most 5 units can be bought in 5 periods).
    lowers = [0.0] * 10
    lowers[4] = 6.0
    inst = build_instance([10.0] * 10, capacity=10.0, lower=lowers, initial_level=0.0)
    report = validate_instance(inst)
    assert not report.ok
    assert report.first_infeasible_period == 5
    # With the bound at exactly 5 the instance is feasible.
    lowers[4] = 5.0
    inst = build_instance([10.0] * 10, capacity=10.0, lower=lowers, initial_level=0.0)
    assert validate_instance(inst).ok


def test_validate_reference_preset():
    prices = 50.0 + 20.0 * np.sin(2.0 * np.pi * np.arange(96) / 48.0 - np.pi / 2.0)
    inst = build_instance(
        prices,
        cost_model="market_impact",
        eta=0.85,
        delta=0.05,
        capacity=10.0,
        penalty=ExponentialPenalty(scale=10.0, decay=1.0),
        terminal_level=0.0,
    )
    assert validate_instance(inst).ok


def test_validate_reports_increasing_penalty():
    class IncreasingPenalty:
        def value(self, s):
            return np.asarray(s, dtype=float) * 1.0

        def derivative(self, s):
            out = np.ones_like(np.asarray(s, dtype=float))
            return out if out.ndim else 1.0

        def derivative_interval(self, s):
            return (1.0, 1.0)

        def max_abs_derivative(self, lo, hi):
            return 1.0

    periods = tuple(
        PeriodSpec(cost=PriceTakerCost(10.0, 9.0), penalty=IncreasingPenalty(), upper=5.0)
        for _ in range(3)
    )
    inst = ProblemInstance(periods=periods, initial_level=0.0)
    report = validate_instance(inst)
    assert not report.ok
    assert any("penalty increases" in msg for msg in report.issues)


def test_validate_market_impact_delta_domain():
    inst = build_instance(
        [50.0] * 4, cost_model="market_impact", delta=0.6, eta=0.9, capacity=5.0
    )
    report = validate_instance(inst)
    assert not report.ok
    assert any("delta" in msg for msg in report.issues)


def test_instance_defaults_and_objective():
    inst = build_instance([10.0, 20.0], capacity=1.0, initial_level=0.0)
    assert inst.horizon == 2
    assert inst.regularization_eps > 0.0
    assert inst.nu_tolerance > 0.0
    assert inst.snap_tolerance > 0.0
    # Buy one unit at 10, sell it at eta=1 price 20.
    assert inst.objective([0.0, 1.0, 0.0]) == pytest.approx(-10.0, abs=1e-12)
