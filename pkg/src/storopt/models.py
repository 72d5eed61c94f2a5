"""Domain types and evaluation primitives for store-control problems.

A problem instance describes the management of an energy store over a
finite horizon of trading periods.  Each period carries a convex trading
cost (money as a function of the planned increment), a convex
nonincreasing penalty (the expected cost of failing to provide buffering
services, as a function of the planned end-of-period level), per-period
level bounds and rate limits.

All types are immutable after construction and safe to share across
concurrent solver runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "RateWindow",
    "PriceTakerCost",
    "MarketImpactCost",
    "PiecewiseLinearCost",
    "CostModel",
    "ZeroPenalty",
    "ExponentialPenalty",
    "InversePenalty",
    "TabulatedPenalty",
    "PenaltyModel",
    "PeriodSpec",
    "ProblemInstance",
    "ValidationReport",
    "build_instance",
    "cost_eval",
    "cost_subgradient",
    "argmin_tilted",
    "tilt_response_knots",
    "penalty_eval",
    "penalty_derivative",
    "penalty_derivative_interval",
    "validate_instance",
]


# ---------------------------------------------------------------------------
# Rate window
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateWindow:
    """Admissible per-period increments ``[-p_out, p_in]``.

    Parameters
    ----------
    p_in : float
        Maximum energy that can be bought (input) in one period, >= 0.
    p_out : float
        Maximum energy that can be sold (output) in one period, >= 0.
    """

    p_in: float = 1.0
    p_out: float = 1.0

    def __post_init__(self):
        if not (self.p_in >= 0.0 and self.p_out >= 0.0):
            raise ValueError(f"rate limits must be nonnegative, got {self}")

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return -self.p_out - tol <= x <= self.p_in + tol

    @property
    def width(self) -> float:
        return self.p_in + self.p_out


def _require_in_window(x, rates: Optional[RateWindow]):
    if rates is not None and not rates.contains(float(x), tol=1e-12 * (1.0 + rates.width)):
        raise ValueError(f"increment {x} outside rate window [-{rates.p_out}, {rates.p_in}]")


# ---------------------------------------------------------------------------
# Cost models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriceTakerCost:
    """Linear buying/selling cost with a kink at zero.

    ``value(x) = c_buy * x`` for buying (x >= 0) and ``c_sell * x`` for
    selling (x < 0).  Round-trip inefficiency is captured by quoting
    ``c_sell <= c_buy``.
    """

    c_buy: float
    c_sell: float

    def __post_init__(self):
        if self.c_sell > self.c_buy:
            raise ValueError(
                f"selling price {self.c_sell} exceeds buying price {self.c_buy}"
            )

    @property
    def is_strictly_convex(self) -> bool:
        return False

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0.0, self.c_buy * x, self.c_sell * x)
        return out if out.ndim else float(out)

    def subgradient(self, x: float) -> tuple[float, float]:
        if x > 0.0:
            return (self.c_buy, self.c_buy)
        if x < 0.0:
            return (self.c_sell, self.c_sell)
        return (self.c_sell, self.c_buy)

    def kinks(self) -> tuple[float, ...]:
        return (0.0,)


@dataclass(frozen=True)
class MarketImpactCost:
    """Quadratic market-impact cost ``c*x*(1 + delta*x)``.

    Buying drives the unit price up and selling drives it down; ``delta``
    controls the strength of the impact.  The sell branch is additionally
    scaled by the efficiency factor ``eta`` (0 < eta <= 1), folding
    round-trip losses into the quoted revenue.
    """

    c: float
    delta: float
    eta: float = 1.0

    def __post_init__(self):
        if self.delta < 0.0:
            raise ValueError(f"market impact delta must be >= 0, got {self.delta}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"efficiency eta must be in (0, 1], got {self.eta}")

    @property
    def is_strictly_convex(self) -> bool:
        return self.delta > 0.0 and self.c > 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        base = self.c * x * (1.0 + self.delta * x)
        out = np.where(x >= 0.0, base, self.eta * base)
        return out if out.ndim else float(out)

    def subgradient(self, x: float) -> tuple[float, float]:
        if x > 0.0:
            d = self.c * (1.0 + 2.0 * self.delta * x)
            return (d, d)
        if x < 0.0:
            d = self.eta * self.c * (1.0 + 2.0 * self.delta * x)
            return (d, d)
        return (self.eta * self.c, self.c)

    def kinks(self) -> tuple[float, ...]:
        return (0.0,)


@dataclass(frozen=True)
class PiecewiseLinearCost:
    """Convex piecewise-linear cost given as ``(x, slope)`` breakpoints.

    ``breakpoints[i] = (x_i, m_i)`` means slope ``m_i`` applies on
    ``[x_i, x_{i+1})``; the first slope extends to the left of ``x_0`` and
    the last to the right.  Values are anchored so that ``value(0) = 0``.
    Slopes must be nondecreasing.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(m)) for x, m in self.breakpoints)
        if not pts:
            raise ValueError("at least one (x, slope) breakpoint required")
        xs = [p[0] for p in pts]
        ms = [p[1] for p in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("breakpoint positions must be strictly increasing")
        if any(b < a for a, b in zip(ms, ms[1:])):
            raise ValueError("slopes must be nondecreasing (convexity)")
        object.__setattr__(self, "breakpoints", pts)
        # Anchor values so value(0) == 0 regardless of breakpoint layout.
        xs_arr = np.array(xs)
        ms_arr = np.array(ms)
        vals = np.zeros(len(pts))
        for i in range(1, len(pts)):
            vals[i] = vals[i - 1] + ms_arr[i - 1] * (xs_arr[i] - xs_arr[i - 1])
        vals -= self._interp_raw(0.0, xs_arr, ms_arr, vals)
        object.__setattr__(self, "_xs", xs_arr)
        object.__setattr__(self, "_ms", ms_arr)
        object.__setattr__(self, "_vals", vals)

    @staticmethod
    def _interp_raw(x, xs, ms, vals):
        idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 1)
        return vals[idx] + ms[idx] * (np.asarray(x) - xs[idx])

    @property
    def is_strictly_convex(self) -> bool:
        return False

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self._interp_raw(x, self._xs, self._ms, self._vals)
        return out if np.ndim(out) else float(out)

    def subgradient(self, x: float) -> tuple[float, float]:
        xs, ms = self._xs, self._ms
        i = int(np.searchsorted(xs, x, side="right")) - 1
        if i < 0:
            return (float(ms[0]), float(ms[0]))
        if x == xs[i] and i > 0:
            return (float(ms[i - 1]), float(ms[i]))
        return (float(ms[i]), float(ms[i]))

    def kinks(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self._xs[1:])


CostModel = Union[PriceTakerCost, MarketImpactCost, PiecewiseLinearCost]


def cost_eval(cost: CostModel, x, rates: Optional[RateWindow] = None):
    """Trading cost of increment ``x`` (scalar or array).

    When ``rates`` is given, a scalar ``x`` outside the window raises
    ``ValueError``.
    """
    if np.ndim(x) == 0:
        _require_in_window(x, rates)
    return cost.value(x)


def cost_subgradient(cost: CostModel, x: float, rates: Optional[RateWindow] = None) -> tuple[float, float]:
    """Closed subgradient interval ``[d-, d+]`` of the cost at ``x``."""
    _require_in_window(x, rates)
    return cost.subgradient(x)


def tilt_response_knots(
    cost: CostModel, rates: RateWindow, eps: float
) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear representation of ``nu -> argmin C(x) + eps x^2 - nu x``.

    Returns parallel arrays ``(nu_knots, x_knots)``; the minimizer over the
    rate window is the linear interpolation of ``x_knots`` against
    ``nu_knots``, clamped at the ends.  Requires ``eps > 0`` unless the
    cost is strictly convex.
    """
    if eps < 0.0:
        raise ValueError("eps must be >= 0")
    if eps == 0.0 and not cost.is_strictly_convex:
        raise ValueError("eps > 0 required for costs that are not strictly convex")
    po, pi = rates.p_out, rates.p_in
    xs = [-po] + [k for k in cost.kinks() if -po < k < pi] + [pi]
    nu_k: list[float] = []
    x_k: list[float] = []
    for x in xs:
        lo, hi = cost.subgradient(x)
        nu_k.append(lo + 2.0 * eps * x)
        x_k.append(x)
        if hi > lo:
            nu_k.append(hi + 2.0 * eps * x)
            x_k.append(x)
    # Drop exact duplicates (zero-width windows, coincident prices).
    out_nu: list[float] = []
    out_x: list[float] = []
    for n, x in zip(nu_k, x_k):
        if out_nu and n == out_nu[-1] and x == out_x[-1]:
            continue
        out_nu.append(n)
        out_x.append(x)
    nu_arr = np.array(out_nu)
    x_arr = np.array(out_x)
    if np.any(np.diff(nu_arr) < 0.0):
        raise ValueError("cost model is not convex on the rate window")
    return nu_arr, x_arr


def argmin_tilted(cost: CostModel, rates: RateWindow, nu: float, eps: float) -> float:
    """Unique minimizer of ``C(x) + eps*x^2 - nu*x`` over the rate window.

    Continuous and nondecreasing in ``nu``; clamps to the window ends for
    extreme tilts.
    """
    nu_k, x_k = tilt_response_knots(cost, rates, eps)
    return float(np.interp(nu, nu_k, x_k))


# ---------------------------------------------------------------------------
# Penalty models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZeroPenalty:
    """No buffering penalty."""

    def value(self, s):
        out = np.zeros_like(np.asarray(s, dtype=float))
        return out if out.ndim else 0.0

    def derivative(self, s):
        out = np.zeros_like(np.asarray(s, dtype=float))
        return out if out.ndim else 0.0

    def derivative_interval(self, s: float) -> tuple[float, float]:
        return (0.0, 0.0)

    def max_abs_derivative(self, lo: float, hi: float) -> float:
        return 0.0


@dataclass(frozen=True)
class ExponentialPenalty:
    """Penalty ``scale * exp(-decay * s)``, natural for light-tailed shocks."""

    scale: float
    decay: float

    def __post_init__(self):
        if self.scale < 0.0:
            raise ValueError(f"penalty scale must be >= 0, got {self.scale}")
        if self.decay <= 0.0:
            raise ValueError(f"penalty decay must be > 0, got {self.decay}")

    def value(self, s):
        s = np.asarray(s, dtype=float)
        out = self.scale * np.exp(-self.decay * s)
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        out = -self.scale * self.decay * np.exp(-self.decay * s)
        return out if out.ndim else float(out)

    def derivative_interval(self, s: float) -> tuple[float, float]:
        d = self.derivative(s)
        return (d, d)

    def max_abs_derivative(self, lo: float, hi: float) -> float:
        return abs(self.derivative(min(lo, hi)))


@dataclass(frozen=True)
class InversePenalty:
    """Penalty ``weight / s``, showing a slow decay in the level.

    Below ``floor`` the hyperbola is extended linearly (value and slope of
    the tangent at the floor), which keeps the model finite, convex and
    nonincreasing for every level a solver sweep may probe.
    """

    weight: float
    floor: float = 1e-3

    def __post_init__(self):
        if self.weight < 0.0:
            raise ValueError(f"penalty weight must be >= 0, got {self.weight}")
        if self.floor <= 0.0:
            raise ValueError(f"floor must be > 0, got {self.floor}")

    def value(self, s):
        s = np.asarray(s, dtype=float)
        f = self.floor
        safe = np.maximum(s, f)
        out = np.where(
            s >= f,
            self.weight / safe,
            self.weight / f - self.weight / (f * f) * (s - f),
        )
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        f = self.floor
        safe = np.maximum(s, f)
        out = np.where(s >= f, -self.weight / (safe * safe), -self.weight / (f * f))
        return out if out.ndim else float(out)

    def derivative_interval(self, s: float) -> tuple[float, float]:
        d = self.derivative(s)
        return (d, d)

    def max_abs_derivative(self, lo: float, hi: float) -> float:
        return abs(self.derivative(min(lo, hi)))


@dataclass(frozen=True)
class TabulatedPenalty:
    """Piecewise-linear penalty given as ``(level, value)`` knots.

    Knot values must be nonincreasing with nondecreasing slopes (convex).
    Beyond the tabulated range the end segments extend linearly.  The
    single-valued ``derivative`` reports the left slope at knots; the full
    one-sided pair is available from ``derivative_interval``.
    """

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(s), float(v)) for s, v in self.knots)
        if len(pts) < 2:
            raise ValueError("at least two (level, value) knots required")
        ss = np.array([p[0] for p in pts])
        vs = np.array([p[1] for p in pts])
        if np.any(np.diff(ss) <= 0.0):
            raise ValueError("knot levels must be strictly increasing")
        slopes = np.diff(vs) / np.diff(ss)
        span = max(1.0, float(np.max(np.abs(vs))))
        if np.any(slopes > 1e-9 * span):
            raise ValueError("tabulated penalty must be nonincreasing")
        if np.any(np.diff(slopes) < -1e-9 * span):
            raise ValueError("tabulated penalty must be convex")
        object.__setattr__(self, "knots", pts)
        object.__setattr__(self, "_ss", ss)
        object.__setattr__(self, "_vs", vs)
        object.__setattr__(self, "_slopes", slopes)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        ss, vs, slopes = self._ss, self._vs, self._slopes
        idx = np.clip(np.searchsorted(ss, s, side="right") - 1, 0, len(slopes) - 1)
        out = vs[idx] + slopes[idx] * (s - ss[idx])
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        ss, slopes = self._ss, self._slopes
        # Left slope: the segment ending at s when s sits on a knot.
        idx = np.clip(np.searchsorted(ss, s, side="left") - 1, 0, len(slopes) - 1)
        out = slopes[idx]
        return out if out.ndim else float(out)

    def derivative_interval(self, s: float) -> tuple[float, float]:
        ss, slopes = self._ss, self._slopes
        left = float(self.derivative(s))
        i = int(np.searchsorted(ss, s, side="right")) - 1
        if 0 <= i < len(ss) and s == ss[i] and 0 < i < len(ss) - 1:
            return (left, float(slopes[i]))
        return (left, left)

    def max_abs_derivative(self, lo: float, hi: float) -> float:
        return max(abs(float(self.derivative(lo))), abs(float(self.derivative(hi))))


PenaltyModel = Union[ZeroPenalty, ExponentialPenalty, InversePenalty, TabulatedPenalty]


def penalty_eval(p: PenaltyModel, s):
    """Penalty value at level ``s`` (scalar or array)."""
    return p.value(s)


def penalty_derivative(p: PenaltyModel, s):
    """Single-valued penalty slope at level ``s`` (left slope at knots)."""
    return p.derivative(s)


def penalty_derivative_interval(p: PenaltyModel, s: float) -> tuple[float, float]:
    """One-sided slope pair ``(d-, d+)`` at level ``s``."""
    return p.derivative_interval(s)


# ---------------------------------------------------------------------------
# Periods and instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodSpec:
    """Constraints and economics of a single trading period."""

    cost: CostModel
    penalty: PenaltyModel = field(default_factory=ZeroPenalty)
    rates: RateWindow = field(default_factory=RateWindow)
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper):
            raise ValueError(
                f"period bounds must satisfy 0 <= lower <= upper, got "
                f"[{self.lower}, {self.upper}]"
            )


@dataclass(frozen=True)
class ProblemInstance:
    """A deterministic store-control problem over ``horizon`` periods.

    Minimizes the total of trading costs and buffering penalties over
    level trajectories that respect per-period bounds and rate windows,
    starting from ``initial_level``.

    ``regularization_eps`` is the strict-convexification strength added as
    ``eps * x^2`` inside every tilted subproblem; it realizes the limiting
    selection for merely-convex costs as one continuous algorithm path.
    Tolerances default to scales derived from the instance data and are
    stored explicitly so that rebuilt instances can reproduce a solve
    bit-for-bit.
    """

    periods: tuple[PeriodSpec, ...]
    initial_level: float
    regularization_eps: Optional[float] = None
    nu_tolerance: Optional[float] = None
    snap_tolerance: Optional[float] = None

    def __post_init__(self):
        periods = tuple(self.periods)
        if len(periods) < 1:
            raise ValueError("horizon must be at least one period")
        if not (self.initial_level >= 0.0 and math.isfinite(self.initial_level)):
            raise ValueError(f"initial level must be finite and >= 0, got {self.initial_level}")
        object.__setattr__(self, "periods", periods)

        slopes = []
        max_rate = 0.0
        for p in periods:
            lo, _ = p.cost.subgradient(-p.rates.p_out)
            _, hi = p.cost.subgradient(p.rates.p_in)
            slopes.append(max(abs(lo), abs(hi)))
            max_rate = max(max_rate, p.rates.p_in, p.rates.p_out)
        slope_scale = max(1.0, max(slopes))
        if self.regularization_eps is None:
            eps = 1e-6 * float(np.median(slopes)) / max(max_rate, 1e-12)
            object.__setattr__(self, "regularization_eps", max(eps, 1e-12))
        elif self.regularization_eps < 0.0:
            raise ValueError("regularization_eps must be >= 0")
        if self.nu_tolerance is None:
            object.__setattr__(self, "nu_tolerance", 1e-10 * slope_scale)
        if self.snap_tolerance is None:
            finite_uppers = [p.upper for p in periods if math.isfinite(p.upper)]
            energy_scale = max([1.0, max_rate] + finite_uppers)
            object.__setattr__(self, "snap_tolerance", 1e-9 * energy_scale)

    @property
    def horizon(self) -> int:
        return len(self.periods)

    def objective(self, levels: Sequence[float]) -> float:
        """Total trading plus penalty cost of a level trajectory."""
        levels = np.asarray(levels, dtype=float)
        if levels.shape != (self.horizon + 1,):
            raise ValueError(
                f"expected {self.horizon + 1} levels, got {levels.shape}"
            )
        total = 0.0
        for t, p in enumerate(self.periods, start=1):
            total += float(p.cost.value(levels[t] - levels[t - 1]))
            total += float(p.penalty.value(levels[t]))
        return total


def build_instance(
    prices: Sequence[float],
    *,
    cost_model: str = "price_taker",
    eta: float = 1.0,
    delta: float = 0.0,
    capacity: float | Sequence[float] = 1.0,
    lower: float | Sequence[float] = 0.0,
    p_in: float = 1.0,
    p_out: float = 1.0,
    penalty: Optional[PenaltyModel] = None,
    initial_level: float = 0.0,
    terminal_level: Optional[float] = None,
    regularization_eps: Optional[float] = None,
    nu_tolerance: Optional[float] = None,
    snap_tolerance: Optional[float] = None,
) -> ProblemInstance:
    """Assemble a uniform instance from a price series.

    ``cost_model`` selects ``"price_taker"`` (buy at the price, sell at
    ``eta`` times the price) or ``"market_impact"`` (quadratic impact with
    strength ``delta``).  ``capacity``/``lower`` may be scalars or
    per-period sequences.  ``terminal_level`` pins the final level by
    setting the last period's bounds to that value.
    """
    prices = [float(c) for c in prices]
    T = len(prices)
    if T < 1:
        raise ValueError("price series is empty")
    uppers = list(np.broadcast_to(np.asarray(capacity, dtype=float), (T,)))
    lowers = list(np.broadcast_to(np.asarray(lower, dtype=float), (T,)))
    pen = penalty if penalty is not None else ZeroPenalty()
    rates = RateWindow(p_in=p_in, p_out=p_out)
    if terminal_level is not None:
        lowers[-1] = uppers[-1] = float(terminal_level)
    periods = []
    for c, lo, up in zip(prices, lowers, uppers):
        if cost_model == "price_taker":
            cost: CostModel = PriceTakerCost(c_buy=c, c_sell=eta * c)
        elif cost_model == "market_impact":
            cost = MarketImpactCost(c=c, delta=delta, eta=eta)
        else:
            raise ValueError(f"unknown cost model {cost_model!r}")
        periods.append(PeriodSpec(cost=cost, penalty=pen, rates=rates, lower=lo, upper=up))
    return ProblemInstance(
        periods=tuple(periods),
        initial_level=initial_level,
        regularization_eps=regularization_eps,
        nu_tolerance=nu_tolerance,
        snap_tolerance=snap_tolerance,
    )


# ---------------------------------------------------------------------------
# Instance validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_instance`."""

    ok: bool
    issues: tuple[str, ...] = ()
    first_infeasible_period: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def _check_cost_convexity(cost: CostModel, rates: RateWindow, t: int, issues: list[str]):
    xs = np.linspace(-rates.p_out, rates.p_in, 33)
    tol = 1e-9 * (1.0 + max(abs(cost.subgradient(x)[0]) for x in xs))
    prev_hi = None
    for x in xs:
        lo, hi = cost.subgradient(float(x))
        if hi < lo - tol:
            issues.append(f"period {t}: cost subgradient interval inverted at x={x:.4g}")
            return
        if prev_hi is not None and lo < prev_hi - tol:
            issues.append(
                f"period {t}: cost not convex on rate window (slope drops at x={x:.4g})"
            )
            return
        prev_hi = hi


def _check_penalty_shape(p: PenaltyModel, lo: float, hi: float, t: int, issues: list[str]):
    if hi <= lo:
        return
    ss = np.linspace(lo, hi, 33)
    ds = np.array([float(p.derivative(float(s))) for s in ss])
    vals = np.asarray(p.value(ss), dtype=float)
    scale = 1.0 + float(np.max(np.abs(vals)))
    if not np.all(np.isfinite(vals)):
        issues.append(f"period {t}: penalty not finite on [{lo:.4g}, {hi:.4g}]")
        return
    if np.any(ds > 1e-9 * scale):
        issues.append(f"period {t}: penalty increases in the level (must be nonincreasing)")
        return
    if np.any(np.diff(ds) < -1e-9 * scale):
        issues.append(f"period {t}: penalty derivative decreases (must be convex)")


def validate_instance(inst: ProblemInstance) -> ValidationReport:
    """Check convexity of costs, shape of penalties, and feasibility.

    Feasibility is established constructively by propagating the interval
    of reachable levels forward at maximal rates; the report names the
    earliest period at which the required band cannot be reached.
    """
    issues: list[str] = []
    first_bad: Optional[int] = None

    for t, p in enumerate(inst.periods, start=1):
        _check_cost_convexity(p.cost, p.rates, t, issues)
        if isinstance(p.cost, MarketImpactCost):
            max_rate = max(p.rates.p_in, p.rates.p_out)
            if p.cost.delta * max_rate >= 0.5:
                issues.append(
                    f"period {t}: market impact delta*rate = "
                    f"{p.cost.delta * max_rate:.4g} >= 0.5 (sell branch degenerates)"
                )
        _check_penalty_shape(p.penalty, p.lower, p.upper, t, issues)

    lo = hi = inst.initial_level
    for t, p in enumerate(inst.periods, start=1):
        lo, hi = lo - p.rates.p_out, hi + p.rates.p_in
        lo, hi = max(lo, p.lower), min(hi, p.upper)
        if lo > hi:
            issues.append(
                f"period {t}: level band [{p.lower:.6g}, {p.upper:.6g}] unreachable"
            )
            first_bad = t
            break

    return ValidationReport(
        ok=not issues, issues=tuple(issues), first_infeasible_period=first_bad
    )
