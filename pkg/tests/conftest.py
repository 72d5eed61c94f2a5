"""Shared helpers: randomized instances and brute-force oracles."""

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
    build_instance,
    validate_instance,
)


def random_prices(rng, T, base_range=(20.0, 80.0)):
    base = rng.uniform(*base_range)
    amp = rng.uniform(0.0, 0.6 * base)
    cycle = max(int(rng.integers(6, 49)), 2)
    t = np.arange(T)
    prices = base + amp * np.sin(2.0 * np.pi * t / cycle + rng.uniform(0, 2 * np.pi))
    prices += rng.normal(0.0, 0.05 * base, size=T)
    return np.maximum(prices, 1.0)


def random_penalty(rng, kind=None):
    kind = kind or rng.choice(["zero", "exp", "inv", "tab"])
    if kind == "zero":
        return ZeroPenalty()
    if kind == "exp":
        return ExponentialPenalty(
            scale=float(rng.uniform(0.0, 15.0)), decay=float(rng.uniform(0.3, 2.0))
        )
    if kind == "inv":
        return InversePenalty(weight=float(rng.uniform(0.1, 3.0)), floor=0.02)
    grid = np.linspace(0.0, 12.0, 9)
    scale = float(rng.uniform(0.5, 8.0))
    decay = float(rng.uniform(0.3, 1.5))
    vals = scale * np.exp(-decay * grid)
    return TabulatedPenalty(tuple(zip(grid.tolist(), vals.tolist())))


def random_instance(rng, max_T=60, min_T=6, cost_kind=None, pen_kind=None, eps=None):
    """A validated random instance with mixed cost/penalty families."""
    T = int(np.exp(rng.uniform(np.log(min_T), np.log(max_T))))
    T = max(min_T, min(max_T, T))
    capacity = float(rng.uniform(1.0, 10.0))
    p_in = float(rng.uniform(0.2, 1.5))
    p_out = float(rng.uniform(0.2, 1.5))
    rates = RateWindow(p_in=p_in, p_out=p_out)
    s0 = float(rng.uniform(0.0, capacity))
    prices = random_prices(rng, T)
    eta = float(rng.uniform(0.6, 1.0))
    cost_kind = cost_kind or rng.choice(["pt", "mi", "pwl"])
    penalty = random_penalty(rng, pen_kind)

    periods = []
    for c in prices:
        c = float(c)
        if cost_kind == "pt":
            cost = PriceTakerCost(c_buy=c, c_sell=eta * c)
        elif cost_kind == "mi":
            delta = float(rng.uniform(0.0, 0.4 / max(p_in, p_out)))
            delta = min(delta, 0.45 / max(p_in, p_out))
            cost = MarketImpactCost(c=c, delta=delta, eta=eta)
        else:
            cost = PiecewiseLinearCost(
                (
                    (-p_out, eta * c * 0.9),
                    (0.0, c),
                    (0.5 * p_in, 1.15 * c),
                )
            )
        periods.append(
            PeriodSpec(cost=cost, penalty=penalty, rates=rates, lower=0.0, upper=capacity)
        )

    if rng.random() < 0.3 and s0 <= T * p_out:
        periods[-1] = PeriodSpec(
            cost=periods[-1].cost,
            penalty=periods[-1].penalty,
            rates=rates,
            lower=0.0,
            upper=0.0,
        )
    inst = ProblemInstance(
        periods=tuple(periods), initial_level=s0, regularization_eps=eps
    )
    report = validate_instance(inst)
    assert report.ok, report.issues
    return inst


def brute_force_objective(inst, n_grid=121):
    """Exhaustive minimum over level trajectories on a uniform grid.

    Only usable for very small horizons; complexity is n_grid**T.
    """
    T = inst.horizon
    assert T <= 3, "brute force limited to tiny horizons"
    levels = [np.array([inst.initial_level])]
    for p in inst.periods:
        levels.append(np.linspace(p.lower, min(p.upper, 1e9), n_grid))

    best = np.inf
    best_traj = None

    def recurse(t, prefix, cost):
        nonlocal best, best_traj
        if t > T:
            if cost < best:
                best = cost
                best_traj = list(prefix)
            return
        p = inst.periods[t - 1]
        for s in levels[t]:
            x = s - prefix[-1]
            if not (-p.rates.p_out - 1e-12 <= x <= p.rates.p_in + 1e-12):
                continue
            c = cost + float(p.cost.value(x)) + float(p.penalty.value(s))
            recurse(t + 1, prefix + [s], c)

    recurse(1, [inst.initial_level], 0.0)
    return best, np.array(best_traj) if best_traj is not None else None


@pytest.fixture
def rng():
    return np.random.default_rng(20110301)


def two_period_arbitrage():
    """Prices 10 then 20, unit capacity, unit rates, no penalty."""
    return build_instance([10.0, 20.0], capacity=1.0, initial_level=0.0)
