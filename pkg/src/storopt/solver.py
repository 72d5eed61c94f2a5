"""Local-in-time solver for the deterministic store-control program.

The optimal trajectory is built segment by segment.  Within a segment a
single dual quantity --- the *tilt* applied to the first period --- is
located by bisection: each trial tilt generates a candidate trajectory
through a forward sweep (myopic tilted minimization per period plus a
penalty-slope update of the tilt), and the sweep's failure mode tells the
bisection which way to move.  When no trial is feasible through the end
of the horizon, the critical tilt pins the store level to a bound at some
boundary time; the level there is fixed, a capacity multiplier absorbs
the tilt discontinuity, and the search restarts from the boundary time.

The procedure is local in time: every trial sweep launched from a
segment stops no later than the look-ahead horizon recorded for that
segment, so data beyond the horizon cannot influence the committed
prefix.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .models import (
    ExponentialPenalty,
    InversePenalty,
    ProblemInstance,
    TabulatedPenalty,
    ZeroPenalty,
    tilt_response_knots,
    validate_instance,
)

__all__ = [
    "SweepStatus",
    "TrialClass",
    "SweepResult",
    "Trajectory",
    "DualCertificate",
    "Solution",
    "KktCheck",
    "KktReport",
    "InfeasibleInstanceError",
    "InternalConsistencyError",
    "forward_sweep",
    "classify_trial",
    "find_critical_tilt",
    "solve",
    "verify_kkt",
    "capacity_sensitivity",
]


class InfeasibleInstanceError(ValueError):
    """Raised when an instance admits no feasible trajectory."""

    def __init__(self, report):
        self.report = report
        msg = report.issues[0] if report.issues else "instance infeasible"
        super().__init__(msg)


class InternalConsistencyError(RuntimeError):
    """Raised when the solver cannot certify its own output.

    Carries the offending ``certificate`` (and ``report`` when a KKT
    verification was run) for diagnosis.
    """

    def __init__(self, message, certificate=None, report=None):
        super().__init__(message)
        self.certificate = certificate
        self.report = report


class SweepStatus(enum.Enum):
    FEASIBLE = "feasible"
    VIOLATED_BELOW = "violated_below"
    VIOLATED_ABOVE = "violated_above"
    # A sweep that stays within the capacity band may still fail at the
    # horizon: the implied terminal capacity multiplier must satisfy
    # complementary slackness.  These statuses classify that failure by
    # the direction the tilt must move.
    TERMINAL_TOO_LOW = "terminal_too_low"
    TERMINAL_TOO_HIGH = "terminal_too_high"


class TrialClass(enum.Enum):
    TOO_LOW = "too_low"
    TOO_HIGH = "too_high"
    FEASIBLE = "feasible"


@dataclass(frozen=True)
class SweepResult:
    """Candidate trajectory generated by one trial tilt.

    ``levels[j]`` and ``tilts[j]`` belong to period ``start_period+1+j``.
    The sweep stops at the first capacity violation beyond the snap
    tolerance (its time is ``violation_time``) or at the horizon.  For
    completed sweeps ``terminal_multiplier`` is the selected terminal
    capacity multiplier when consistent, and ``terminal_residual`` the
    signed slackness defect otherwise.
    """

    status: SweepStatus
    levels: np.ndarray
    tilts: np.ndarray
    start_period: int
    start_level: float
    nu_start: float
    violation_time: Optional[int] = None
    terminal_multiplier: Optional[float] = None
    terminal_residual: Optional[float] = None

    @property
    def probe_end(self) -> int:
        if self.violation_time is not None:
            return self.violation_time
        return self.start_period + len(self.levels)

    def level_at(self, t: int) -> float:
        return float(self.levels[t - self.start_period - 1])


@dataclass(frozen=True)
class Trajectory:
    """Store levels ``s_0..s_T`` and increments ``x_1..x_T``."""

    levels: np.ndarray
    increments: np.ndarray
    feasible: bool = True


@dataclass(frozen=True)
class DualCertificate:
    """Dual data certifying a solution.

    Arrays are indexed by ``t-1`` for periods ``t = 1..T``:

    - ``multipliers``: capacity multipliers, zero off the level bounds;
    - ``tilts``: cumulative duals against which each period's trade is
      myopically optimal;
    - ``lower_sensitivity`` / ``upper_sensitivity``: one-sided objective
      sensitivities to the lower/upper level bounds (>= 0 / <= 0);
    - ``boundary_times``: ``0 = T_0 < ... < T_k = T`` where the level is
      pinned to a bound between search segments;
    - ``horizons``: the look-ahead horizon of each period, i.e. the last
      period whose data the committed decision depended on;
    - ``restarts``: interior periods where the search re-anchored because
      the critical tilt fell between adjacent floats (empty in well
      conditioned problems).
    """

    multipliers: np.ndarray
    tilts: np.ndarray
    lower_sensitivity: np.ndarray
    upper_sensitivity: np.ndarray
    boundary_times: tuple[int, ...]
    horizons: np.ndarray
    restarts: tuple[int, ...] = ()


@dataclass(frozen=True)
class Solution:
    trajectory: Trajectory
    certificate: DualCertificate
    objective: float


# ---------------------------------------------------------------------------
# Compiled per-period kernels
# ---------------------------------------------------------------------------


def _make_response(nu_knots: np.ndarray, x_knots: np.ndarray) -> Callable[[float], float]:
    nk = tuple(float(v) for v in nu_knots)
    xk = tuple(float(v) for v in x_knots)
    n = len(nk)
    if n == 1:
        x0 = xk[0]
        return lambda nu: x0

    def response(nu: float) -> float:
        if nu <= nk[0]:
            return xk[0]
        if nu >= nk[n - 1]:
            return xk[n - 1]
        i = 1
        while nk[i] < nu:
            i += 1
        lo, hi = nk[i - 1], nk[i]
        if hi == lo:
            return xk[i]
        w = (nu - lo) / (hi - lo)
        return xk[i - 1] + w * (xk[i] - xk[i - 1])

    return response


def _make_penalty_slope(p) -> Callable[[float], float]:
    if isinstance(p, ZeroPenalty):
        return lambda s: 0.0
    if isinstance(p, ExponentialPenalty):
        ak, k = p.scale * p.decay, p.decay
        return lambda s: -ak * math.exp(-k * s)
    if isinstance(p, InversePenalty):
        w, f = p.weight, p.floor

        def inv_slope(s: float) -> float:
            ss = s if s > f else f
            return -w / (ss * ss)

        return inv_slope
    if isinstance(p, TabulatedPenalty):
        ss = [float(v) for v in p._ss]
        slopes = [float(v) for v in p._slopes]
        nseg = len(slopes)

        def tab_slope(s: float) -> float:
            i = bisect_left(ss, s) - 1
            if i < 0:
                i = 0
            elif i >= nseg:
                i = nseg - 1
            return slopes[i]

        return tab_slope
    return lambda s: float(p.derivative(s))


class _Compiled:
    """Flattened per-period data for the sweep kernel."""

    def __init__(self, inst: ProblemInstance):
        self.inst = inst
        self.T = inst.horizon
        eps = inst.regularization_eps
        self.eps = eps
        self.snap = inst.snap_tolerance
        self.term_tol = 10.0 * inst.nu_tolerance
        self.lower = [p.lower for p in inst.periods]
        self.upper = [p.upper for p in inst.periods]
        self.response = []
        self.first_knot = []
        self.last_knot = []
        self.pen_slope = []
        self.pen_interval = []
        self.pen_max = []
        self.pen_knots = []
        for p in inst.periods:
            nu_k, x_k = tilt_response_knots(p.cost, p.rates, eps)
            self.response.append(_make_response(nu_k, x_k))
            self.first_knot.append(float(nu_k[0]))
            self.last_knot.append(float(nu_k[-1]))
            self.pen_slope.append(_make_penalty_slope(p.penalty))
            self.pen_interval.append(p.penalty.derivative_interval)
            lo_eval = p.lower
            hi_eval = p.upper if math.isfinite(p.upper) else p.lower + 1e6
            self.pen_max.append(float(p.penalty.max_abs_derivative(lo_eval, hi_eval)))
            # Levels where the penalty slope jumps; level plateaus of the
            # exact solution lock onto these, so the sweep snaps onto them
            # the same way it snaps onto the capacity bounds.
            if isinstance(p.penalty, TabulatedPenalty):
                self.pen_knots.append(tuple(float(v) for v in p.penalty._ss))
            else:
                self.pen_knots.append(())

    def pen_interval_wide(self, i: int, s: float) -> tuple[float, float]:
        """One-sided penalty slope pair, hulled with any slope jump within
        the snap neighbourhood of ``s`` (a level pinned against the edge of
        a snap zone must still see the knot's full interval)."""
        d_lo, d_hi = self.pen_interval[i](s)
        kn = self.pen_knots[i]
        if kn:
            tol = 4.0 * self.snap
            j = bisect_left(kn, s)
            for cand in (kn[j] if j < len(kn) else None, kn[j - 1] if j > 0 else None):
                if cand is not None and abs(s - cand) <= tol:
                    a_lo, a_hi = self.pen_interval[i](cand)
                    d_lo, d_hi = min(d_lo, a_lo), max(d_hi, a_hi)
        return d_lo, d_hi


def _run_sweep(comp: _Compiled, start: int, start_level: float, nu1: float) -> SweepResult:
    T = comp.T
    lower, upper = comp.lower, comp.upper
    response, pen_slope = comp.response, comp.pen_slope
    pen_knots = comp.pen_knots
    snap = comp.snap
    s = start_level
    nu = nu1
    levels: list[float] = []
    tilts: list[float] = []
    status = SweepStatus.FEASIBLE
    violation: Optional[int] = None
    lam_T: Optional[float] = None
    residual: Optional[float] = None

    for t in range(start + 1, T + 1):
        i = t - 1
        s = s + response[i](nu)
        lo, up = lower[i], upper[i]
        if s < lo:
            if s < lo - snap:
                levels.append(s)
                tilts.append(nu)
                status = SweepStatus.VIOLATED_BELOW
                violation = t
                break
            s = lo
        elif s > up:
            if s > up + snap:
                levels.append(s)
                tilts.append(nu)
                status = SweepStatus.VIOLATED_ABOVE
                violation = t
                break
            s = up
        elif up - s <= snap:
            s = up
        elif s - lo <= snap:
            s = lo
        else:
            kn = pen_knots[i]
            if kn:
                j = bisect_left(kn, s)
                if j < len(kn) and kn[j] - s <= snap and kn[j] <= up:
                    s = kn[j]
                elif j > 0 and s - kn[j - 1] <= snap and kn[j - 1] >= lo:
                    s = kn[j - 1]
        levels.append(s)
        tilts.append(nu)
        if t < T:
            nu = nu + pen_slope[i](s)
    else:
        d_lo, d_hi = comp.pen_interval_wide(T - 1, s)
        mu_lo, mu_hi = nu + d_lo, nu + d_hi
        at_lower = (s - lower[T - 1]) <= snap
        at_upper = (upper[T - 1] - s) <= snap
        ttol = comp.term_tol
        if at_lower and at_upper:
            lam_T = min(max(0.0, mu_lo), mu_hi)
        elif at_lower:
            if mu_hi >= -ttol:
                lam_T = min(max(0.0, mu_lo), mu_hi)
            else:
                status = SweepStatus.TERMINAL_TOO_LOW
                residual = mu_hi
        elif at_upper:
            if mu_lo <= ttol:
                lam_T = max(min(0.0, mu_hi), mu_lo)
            else:
                status = SweepStatus.TERMINAL_TOO_HIGH
                residual = mu_lo
        else:
            if mu_hi < -ttol:
                status = SweepStatus.TERMINAL_TOO_LOW
                residual = mu_hi
            elif mu_lo > ttol:
                status = SweepStatus.TERMINAL_TOO_HIGH
                residual = mu_lo
            else:
                lam_T = min(max(0.0, mu_lo), mu_hi)

    return SweepResult(
        status=status,
        levels=np.array(levels),
        tilts=np.array(tilts),
        start_period=start,
        start_level=start_level,
        nu_start=nu1,
        violation_time=violation,
        terminal_multiplier=lam_T,
        terminal_residual=residual,
    )


def forward_sweep(
    inst: ProblemInstance, start_period: int, start_level: float, nu_start: float
) -> SweepResult:
    """Generate the candidate trajectory for one trial tilt.

    Applies the tilted per-period minimization from the end-of-period
    ``start_period`` level, updating the tilt by the penalty slope at
    each landing level.  Stops at the first capacity violation beyond the
    snap tolerance or at the horizon; levels within the snap tolerance of
    a bound are snapped onto it.  Completed sweeps are additionally
    classified by the consistency of the implied terminal multiplier.
    """
    return _run_sweep(_Compiled(inst), start_period, start_level, nu_start)


def classify_trial(sweep: SweepResult) -> TrialClass:
    """Map a sweep outcome to the direction the trial tilt must move."""
    if sweep.status in (SweepStatus.VIOLATED_BELOW, SweepStatus.TERMINAL_TOO_LOW):
        return TrialClass.TOO_LOW
    if sweep.status in (SweepStatus.VIOLATED_ABOVE, SweepStatus.TERMINAL_TOO_HIGH):
        return TrialClass.TOO_HIGH
    return TrialClass.FEASIBLE


# ---------------------------------------------------------------------------
# Segment search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SegmentOutcome:
    case: str  # "full", "upper", "lower" or "restart"
    nu_bar: float
    sweep: SweepResult
    end: int
    probe_end: int
    pin_level: Optional[float] = None


_MAX_WIDENINGS = 80
_MAX_BISECTIONS = 400


def _scan_contact(
    sweep: SweepResult, bounds: list[float], ctol: float, T: int
) -> Optional[int]:
    """Largest period strictly before the probe end whose level touches
    the given bound array within ``ctol`` (never the horizon itself)."""
    n = len(sweep.levels)
    if sweep.violation_time is not None:
        n -= 1
    for j in range(n - 1, -1, -1):
        t = sweep.start_period + 1 + j
        if t >= T:
            continue
        if abs(float(sweep.levels[j]) - bounds[t - 1]) <= ctol:
            return t
    return None


def _join_consistent(comp: _Compiled, sweep: SweepResult, t1: int, bound_val: float) -> bool:
    """Check that pinning the level at ``t1`` to the bound keeps the
    boundary period's increment stationary for its tilt.

    The committed prefix comes from a trial tilt a hair away from the
    critical one; forcing the contact level onto the bound perturbs the
    boundary increment by the trial gap.  Accepting the commit only when
    the perturbed increment still satisfies its optimality condition
    makes the bisection keep refining through steep response segments.
    """
    j = t1 - sweep.start_period - 1
    s_prev = float(sweep.levels[j - 1]) if j >= 1 else sweep.start_level
    x = bound_val - s_prev
    p = comp.inst.periods[t1 - 1]
    margin = max(2.0 * comp.snap, 1e-12)
    if not (-p.rates.p_out - margin <= x <= p.rates.p_in + margin):
        return False
    slack = 1e-7 * max(1.0, *(abs(k) for k in comp.last_knot))
    g_lo = p.cost.subgradient(x - margin)[0]
    g_hi = p.cost.subgradient(x + margin)[1]
    resid = float(sweep.tilts[j]) - 2.0 * comp.eps * x
    if x < p.rates.p_in - margin and resid > g_hi + slack:
        return False
    if x > -p.rates.p_out + margin and resid < g_lo - slack:
        return False
    return True


def _segment_search(
    comp: _Compiled, start: int, level: float, nu_seed: Optional[float]
) -> _SegmentOutcome:
    inst = comp.inst
    T = comp.T
    tol = inst.nu_tolerance

    # Bracket seeding from data near the segment only; far-future data
    # must not influence the trial sequence (locality).
    w_end = min(start + 48, T)
    kmin = min(comp.first_knot[start:w_end])
    kmax = max(comp.last_knot[start:w_end])
    drift = sum(comp.pen_max[start:w_end])
    width = max(1.0, kmax - kmin) + drift + 1.0
    center = nu_seed if nu_seed is not None else 0.5 * (kmin + kmax)

    # Certified all-clip threshold: below it every sweep is identical, so
    # feasibility there means the critical tilt is unbounded below.
    theta_lo = min(comp.first_knot[start:T]) - sum(comp.pen_max[start:T]) - 1.0

    lo = center - width
    hi = center + width
    lo_sweep = hi_sweep = None
    hi_class = None
    best_feasible: Optional[tuple[float, SweepResult]] = None

    for _ in range(_MAX_WIDENINGS):
        sw = _run_sweep(comp, start, level, lo)
        cls = classify_trial(sw)
        if cls is TrialClass.TOO_LOW:
            lo_sweep = sw
            break
        if cls is TrialClass.FEASIBLE:
            if lo <= theta_lo:
                return _SegmentOutcome("full", lo, sw, T, T)
            best_feasible = (lo, sw)
            hi, hi_sweep, hi_class = lo, sw, cls
        else:
            hi, hi_sweep, hi_class = lo, sw, cls
        lo -= width
        width *= 2.0
    else:
        raise InternalConsistencyError(
            f"could not bracket the critical tilt from below at period {start}"
        )

    width = max(1.0, hi - lo)
    for _ in range(_MAX_WIDENINGS):
        if hi_sweep is not None:
            break
        sw = _run_sweep(comp, start, level, hi)
        cls = classify_trial(sw)
        if cls is not TrialClass.TOO_LOW:
            hi_sweep, hi_class = sw, cls
            if cls is TrialClass.FEASIBLE and (
                best_feasible is None or hi < best_feasible[0]
            ):
                best_feasible = (hi, sw)
            break
        lo, lo_sweep = hi, sw
        hi += width
        width *= 2.0
    else:
        raise InternalConsistencyError(
            f"could not bracket the critical tilt from above at period {start}"
        )

    # Bisect toward sup of the too-low set; feasible trials bound it from
    # above exactly like too-high ones.
    iterations = 0
    while hi - lo > tol and iterations < _MAX_BISECTIONS:
        iterations += 1
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break
        sw = _run_sweep(comp, start, level, mid)
        cls = classify_trial(sw)
        if cls is TrialClass.TOO_LOW:
            lo, lo_sweep = mid, sw
        else:
            hi, hi_sweep, hi_class = mid, sw, cls
            if cls is TrialClass.FEASIBLE:
                best_feasible = (mid, sw)

    if hi_class is TrialClass.FEASIBLE:
        return _SegmentOutcome("full", hi, hi_sweep, T, T)

    # No feasible tilt: the critical tilt pins the level to a bound at a
    # boundary time.  The blocking side is the edge sweep that violates
    # earliest; the boundary time is its last bound contact.
    ctol = max(4.0 * comp.snap, 1e-15 * max(1.0, abs(hi)))
    strict = True
    for _ in range(_MAX_BISECTIONS):
        t_lo = lo_sweep.violation_time if lo_sweep.violation_time is not None else T + 1
        t_hi = hi_sweep.violation_time if hi_sweep.violation_time is not None else T + 1

        order = []
        if t_lo <= t_hi:
            order = [("upper", lo_sweep, comp.upper, lo), ("lower", hi_sweep, comp.lower, hi)]
        else:
            order = [("lower", hi_sweep, comp.lower, hi), ("upper", lo_sweep, comp.upper, lo)]
        for case, sweep, bounds, nu_val in order:
            t1 = _scan_contact(sweep, bounds, ctol, T)
            if t1 is not None and t1 > start:
                bound_val = comp.upper[t1 - 1] if case == "upper" else comp.lower[t1 - 1]
                if strict and not _join_consistent(comp, sweep, t1, bound_val):
                    continue
                return _SegmentOutcome(case, nu_val, sweep, t1, sweep.probe_end)

        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            # Bracket exhausted at float resolution.
            if strict:
                strict = False
                continue
            # Penalty-curvature feedback can amplify the tilt so strongly
            # that adjacent floats straddle the critical value.  The edge
            # sweeps then still agree to within dust on a prefix; commit a
            # prefix and restart the search there.  The preferred anchor is
            # a penalty-knot contact: pinned exactly onto the knot, the
            # seam level carries no dust for the next search to amplify
            # and the knot's slope interval absorbs the tilt jump.
            n_common = min(len(lo_sweep.levels), len(hi_sweep.levels))
            div_tol = 4.0 * comp.snap
            j_div = n_common
            for j in range(n_common):
                if abs(float(lo_sweep.levels[j]) - float(hi_sweep.levels[j])) > div_tol:
                    j_div = j
                    break
            probe = max(lo_sweep.probe_end, hi_sweep.probe_end)
            for j in range(j_div - 1, -1, -1):
                t = start + 1 + j
                if t >= T:
                    continue
                s_j = float(hi_sweep.levels[j])
                kn = comp.pen_knots[t - 1]
                if not kn:
                    continue
                k = bisect_left(kn, s_j)
                for cand in (kn[k] if k < len(kn) else None, kn[k - 1] if k > 0 else None):
                    if (
                        cand is not None
                        and abs(s_j - cand) <= div_tol
                        and comp.lower[t - 1] <= cand <= comp.upper[t - 1]
                        and t > start
                    ):
                        return _SegmentOutcome("restart", hi, hi_sweep, t, probe, pin_level=cand)
            if j_div < n_common and j_div >= 1:
                t_star = start + 1 + j_div
                return _SegmentOutcome("restart", hi, hi_sweep, t_star - 1, probe)
            if t_lo == t_hi == T + 1:
                # Knife-edge terminal: both edges complete with opposite
                # residual signs too small for the floats to separate.
                cand = min(
                    (lo_sweep, hi_sweep), key=lambda s: abs(s.terminal_residual or 0.0)
                )
                return _SegmentOutcome("full", cand.nu_start, cand, T, T)
            ctol *= 10.0
            if ctol > 1e6 * comp.snap:
                raise InternalConsistencyError(
                    f"no bound contact found near the critical tilt at period {start}"
                )
            continue
        sw = _run_sweep(comp, start, level, mid)
        cls = classify_trial(sw)
        if cls is TrialClass.TOO_LOW:
            lo, lo_sweep = mid, sw
        elif cls is TrialClass.FEASIBLE:
            return _SegmentOutcome("full", mid, sw, T, T)
        else:
            hi, hi_sweep = mid, sw
    raise InternalConsistencyError(
        f"segment search did not converge at period {start}"
    )


def _polish_terminal(comp: _Compiled, levels: np.ndarray, tilts: np.ndarray, lam_T: float) -> tuple[float, float]:
    """Re-root the terminal slackness condition in level space.

    The tilt bisection pins the terminal multiplier only up to the chain
    sensitivity of the sweep, which can exceed float resolution when a
    penalty is extremely curved (e.g. near an inverse penalty's floor).
    The terminal level itself is free inside the last period's cost-kink
    stationarity band, so the condition can be solved directly for the
    level.  Returns the (possibly unchanged) terminal level and
    multiplier; applies nothing unless the repaired point satisfies the
    full set of local conditions.
    """
    T = comp.T
    i = T - 1
    s_T = float(levels[T])
    s_prev = float(levels[T - 1])
    nu_T = float(tilts[i])
    lo_b, up_b = comp.lower[i], comp.upper[i]
    p = comp.inst.periods[i]
    snap = comp.snap

    at_lower = s_T - lo_b <= snap
    at_upper = up_b - s_T <= snap
    defect = 0.0
    if at_lower and at_upper:
        return s_T, lam_T
    if at_lower:
        defect = min(lam_T, 0.0)
    elif at_upper:
        defect = max(lam_T, 0.0)
    else:
        defect = lam_T
    if abs(defect) <= comp.term_tol:
        return s_T, lam_T

    slope = comp.pen_slope[i]
    r_lo = max(lo_b, s_prev - p.rates.p_out)
    r_hi = min(up_b, s_prev + p.rates.p_in)
    if r_lo > r_hi:
        return s_T, lam_T

    f_lo = nu_T + slope(r_lo)
    f_hi = nu_T + slope(r_hi)
    if f_lo >= 0.0 and r_lo == lo_b:
        s_new, lam_new = r_lo, f_lo
    elif f_hi <= 0.0 and r_hi == up_b:
        s_new, lam_new = r_hi, f_hi
    elif f_lo < 0.0 < f_hi:
        a, b = r_lo, r_hi
        for _ in range(200):
            m = 0.5 * (a + b)
            if not (a < m < b):
                break
            if nu_T + slope(m) < 0.0:
                a = m
            else:
                b = m
        s_new = 0.5 * (a + b)
        lam_new = 0.0
    else:
        return s_T, lam_T

    # The move must stay stationary for the last period's cost.
    x_new = s_new - s_prev
    if not (-p.rates.p_out - 1e-12 <= x_new <= p.rates.p_in + 1e-12):
        return s_T, lam_T
    dust = max(2.0 * snap, 1e-12)
    g_lo = p.cost.subgradient(x_new - dust)[0]
    g_hi = p.cost.subgradient(x_new + dust)[1]
    resid = nu_T - 2.0 * comp.eps * x_new
    tol = comp.term_tol
    if x_new < p.rates.p_in - dust and resid > g_hi + tol:
        return s_T, lam_T
    if x_new > -p.rates.p_out + dust and resid < g_lo - tol:
        return s_T, lam_T
    return s_new, lam_new


def _terminal_defect(comp: _Compiled, levels: np.ndarray, lam_T: float) -> float:
    T = comp.T
    s_T = float(levels[T])
    lo_b, up_b = comp.lower[T - 1], comp.upper[T - 1]
    at_lower = s_T - lo_b <= comp.snap
    at_upper = up_b - s_T <= comp.snap
    if at_lower and at_upper:
        return 0.0
    if at_lower:
        return min(lam_T, 0.0)
    if at_upper:
        return max(lam_T, 0.0)
    return lam_T


def _polish_suffix(
    comp: _Compiled,
    levels: np.ndarray,
    tilts: np.ndarray,
    lam_T: float,
    seg_start: int,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Repair a terminal slackness defect by shifting a trajectory suffix.

    A tilt bisection resolves the terminal condition only up to the chain
    sensitivity of the sweep, which can exceed float resolution when
    penalty curvature is extreme.  Shifting all levels from some period
    ``u`` onward by the same amount leaves the downstream increments
    unchanged, so the terminal condition becomes a well-conditioned
    one-dimensional root problem in the shift.  The shift costs only
    ``2*eps*shift`` of stationarity slack at ``u`` (the regularized limit
    freedom of a merely-convex cost); the candidate is applied only if
    every downstream condition re-verifies.
    """
    T = comp.T
    defect = _terminal_defect(comp, levels, lam_T)
    if abs(defect) <= comp.term_tol:
        return levels, tilts, lam_T

    dual_slack = 1e-7 * max(1.0, *(abs(k) for k in comp.last_knot))
    for u in range(T, seg_start, -1):
        p = comp.inst.periods[u - 1]
        x_u = float(levels[u] - levels[u - 1])
        margin = max(4.0 * comp.snap, 1e-12)
        room_dn = min(
            float(levels[t] - comp.lower[t - 1]) for t in range(u, T + 1)
        )
        room_up = min(
            float(comp.upper[t - 1] - levels[t]) for t in range(u, T + 1)
        )
        d_lo = max(-p.rates.p_out - x_u, -room_dn)
        d_up = min(p.rates.p_in - x_u, room_up)
        if d_up - d_lo <= margin:
            continue

        def mu_of(shift: float) -> float:
            nu = float(tilts[u - 1])
            for t in range(u, T):
                nu += comp.pen_slope[t - 1](float(levels[t]) + shift)
            d_l, d_h = comp.pen_interval_wide(T - 1, float(levels[T]) + shift)
            m_lo, m_hi = nu + d_l, nu + d_h
            return min(max(0.0, m_lo), m_hi)

        f_lo, f_up = mu_of(d_lo), mu_of(d_up)
        if f_lo > 0.0 or f_up < 0.0:
            continue
        a, b = d_lo, d_up
        for _ in range(200):
            m = 0.5 * (a + b)
            if not (a < m < b):
                break
            if mu_of(m) < 0.0:
                a = m
            else:
                b = m
        shift = 0.5 * (a + b)

        # Build and validate the shifted suffix.
        new_levels = levels.copy()
        new_levels[u:] += shift
        new_tilts = tilts.copy()
        nu = float(new_tilts[u - 1])
        ok = True
        for t in range(u, T + 1):
            q = comp.inst.periods[t - 1]
            x_t = float(new_levels[t] - new_levels[t - 1])
            if not (-q.rates.p_out - margin <= x_t <= q.rates.p_in + margin):
                ok = False
                break
            if not (comp.lower[t - 1] - margin <= new_levels[t] <= comp.upper[t - 1] + margin):
                ok = False
                break
            new_tilts[t - 1] = nu
            g_lo = q.cost.subgradient(x_t - margin)[0]
            g_hi = q.cost.subgradient(x_t + margin)[1]
            resid = nu - 2.0 * comp.eps * x_t
            if x_t < q.rates.p_in - margin and resid > g_hi + dual_slack:
                ok = False
                break
            if x_t > -q.rates.p_out + margin and resid < g_lo - dual_slack:
                ok = False
                break
            if t < T:
                nu += comp.pen_slope[t - 1](float(new_levels[t]))
        if not ok:
            continue

        d_l, d_h = comp.pen_interval_wide(T - 1, float(new_levels[T]))
        lam_new = min(max(0.0, nu + d_l), nu + d_h)
        if abs(_terminal_defect(comp, new_levels, lam_new)) <= max(
            comp.term_tol, 1e-9 * max(1.0, abs(lam_new))
        ):
            return new_levels, new_tilts, lam_new
    return levels, tilts, lam_T


def find_critical_tilt(
    inst: ProblemInstance, start_period: int = 0, start_level: Optional[float] = None
) -> tuple[float, SweepResult]:
    """Supremum of the too-low trial tilts and the sweep accepted there.

    The returned sweep is feasible when a feasible band exists (its lower
    edge is returned, up to the tilt tolerance); otherwise it is the
    blocking edge sweep whose bound contact defines the next boundary
    time.
    """
    if start_level is None:
        start_level = inst.initial_level
    comp = _Compiled(inst)
    seg = _segment_search(comp, start_period, start_level, None)
    return seg.nu_bar, seg.sweep


# ---------------------------------------------------------------------------
# Full solve
# ---------------------------------------------------------------------------


def solve(inst: ProblemInstance, *, check: bool = True, validate: bool = True) -> Solution:
    """Solve the instance and return the trajectory with its certificate.

    Iterates the segment search across boundary times, recovering the
    capacity multipliers at the segment joins, and assembles the dual
    certificate.  With ``check=True`` the result is verified against the
    optimality conditions and an :class:`InternalConsistencyError` is
    raised if any check fails beyond tolerance.
    """
    if validate:
        report = validate_instance(inst)
        if not report.ok:
            raise InfeasibleInstanceError(report)

    comp = _Compiled(inst)
    T = comp.T
    levels = np.empty(T + 1)
    levels[0] = inst.initial_level
    tilts = np.full(T, np.nan)
    lams = np.zeros(T)
    horizons = np.zeros(T, dtype=int)
    boundaries = [0]

    start = 0
    level = inst.initial_level
    # A pending join carries (time, contact kind, tilt there, level there);
    # the multiplier is selected from the one-sided penalty-slope interval
    # once the next segment's critical tilt is known.
    pending_join: Optional[tuple[int, str, float, float]] = None
    sign_tol = 1e-6 * max(1.0, *(abs(k) for k in comp.last_knot))
    restarts: list[int] = []

    while start < T:
        if pending_join is not None:
            nu_seed = pending_join[2] + comp.pen_slope[pending_join[0] - 1](pending_join[3])
        else:
            nu_seed = None
        seg = _segment_search(comp, start, level, nu_seed)
        n_commit = seg.end - start
        levels[start + 1 : seg.end + 1] = seg.sweep.levels[:n_commit]
        tilts[start : seg.end] = seg.sweep.tilts[:n_commit]
        horizons[start : seg.end] = seg.probe_end

        if pending_join is not None:
            ti, kind, tilt_ti, level_ti = pending_join
            d_lo, d_hi = comp.pen_interval_wide(ti - 1, level_ti)
            lam_lo = tilt_ti + d_lo - seg.nu_bar
            lam_hi = tilt_ti + d_hi - seg.nu_bar
            if kind == "upper":
                lam = max(lam_lo, min(lam_hi, 0.0))
                viol = max(lam, 0.0)
            elif kind == "lower":
                lam = min(lam_hi, max(lam_lo, 0.0))
                viol = max(-lam, 0.0)
            else:
                lam = max(lam_lo, min(lam_hi, 0.0))
                viol = abs(lam)
            if viol > sign_tol:
                raise InternalConsistencyError(
                    f"multiplier selection failed at period {ti} "
                    f"({kind} contact): residual {viol:.3e}"
                )
            lams[ti - 1] = lam

        if seg.case == "full":
            tm = seg.sweep.terminal_multiplier
            if tm is None:
                tm = seg.sweep.terminal_residual or 0.0
            lams[T - 1] = tm
            boundaries.append(T)
            break

        t1 = seg.end
        if seg.case == "restart":
            restarts.append(t1)
            if seg.pin_level is not None:
                levels[t1] = seg.pin_level
            next_level = float(levels[t1])
            pending_join = (t1, "interior", float(seg.sweep.tilts[n_commit - 1]), next_level)
            start, level = t1, next_level
            continue

        bound_val = comp.upper[t1 - 1] if seg.case == "upper" else comp.lower[t1 - 1]
        levels[t1] = bound_val
        boundaries.append(t1)
        pending_join = (t1, seg.case, float(seg.sweep.tilts[n_commit - 1]), bound_val)
        start, level = t1, bound_val

    s_T_new, lam_T_new = _polish_terminal(comp, levels, tilts, lams[T - 1])
    levels[T] = s_T_new
    lams[T - 1] = lam_T_new
    if abs(_terminal_defect(comp, levels, lams[T - 1])) > comp.term_tol:
        polish_start = max(boundaries[-2], restarts[-1] if restarts else 0)
        levels, tilts, lam_T_new = _polish_suffix(
            comp, levels, tilts, lams[T - 1], polish_start
        )
        lams[T - 1] = lam_T_new

    increments = np.diff(levels)
    trajectory = Trajectory(levels=levels, increments=increments, feasible=True)
    alpha = np.zeros(T)
    beta = np.zeros(T)
    for t in range(1, T + 1):
        lo, up = comp.lower[t - 1], comp.upper[t - 1]
        at_lower = levels[t] - lo <= comp.snap
        at_upper = up - levels[t] <= comp.snap
        lam = lams[t - 1]
        if at_lower and at_upper:
            alpha[t - 1] = max(lam, 0.0)
            beta[t - 1] = min(lam, 0.0)
        elif at_lower:
            alpha[t - 1] = lam
        elif at_upper:
            beta[t - 1] = lam
    certificate = DualCertificate(
        multipliers=lams,
        tilts=tilts,
        lower_sensitivity=alpha,
        upper_sensitivity=beta,
        boundary_times=tuple(boundaries),
        horizons=horizons,
        restarts=tuple(restarts),
    )
    objective = inst.objective(levels)
    solution = Solution(trajectory=trajectory, certificate=certificate, objective=objective)

    if check:
        report = verify_kkt(inst, solution, tol=1e-6)
        if not report.ok:
            raise InternalConsistencyError(
                "solution failed self-verification: "
                + "; ".join(c.name for c in report.checks if not c.ok),
                certificate=certificate,
                report=report,
            )
    return solution


# ---------------------------------------------------------------------------
# Certification and sensitivities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KktCheck:
    name: str
    ok: bool
    max_violation: float
    failures: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True)
class KktReport:
    ok: bool
    checks: tuple[KktCheck, ...]

    def check(self, name: str) -> KktCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {
                    "name": c.name,
                    "ok": c.ok,
                    "max_violation": c.max_violation,
                    "failures": [{"period": t, "message": m} for t, m in c.failures],
                }
                for c in self.checks
            ],
        }


def verify_kkt(inst: ProblemInstance, sol: Solution, tol: float = 1e-6) -> KktReport:
    """Check a solution against the optimality conditions.

    Verifies primal feasibility, complementary slackness of the capacity
    multipliers, consistency of the tilt recursion (through the one-sided
    penalty slopes), and per-period stationarity of each increment for
    its tilt, with one-sided inequalities at the rate-window ends.
    Reports per condition; never raises.
    """
    T = inst.horizon
    levels = np.asarray(sol.trajectory.levels, dtype=float)
    incs = np.asarray(sol.trajectory.increments, dtype=float)
    cert = sol.certificate
    lams = np.asarray(cert.multipliers, dtype=float)
    tilts = np.asarray(cert.tilts, dtype=float)
    eps = inst.regularization_eps

    slope_scale = 1.0
    energy_scale = 1.0
    for p in inst.periods:
        lo, _ = p.cost.subgradient(-p.rates.p_out)
        _, hi = p.cost.subgradient(p.rates.p_in)
        slope_scale = max(slope_scale, abs(lo), abs(hi))
        energy_scale = max(energy_scale, p.rates.p_in, p.rates.p_out)
        if math.isfinite(p.upper):
            energy_scale = max(energy_scale, p.upper)
    ftol = tol * energy_scale
    dtol = tol * slope_scale
    contact_tol = max(2.0 * inst.snap_tolerance, 1e-3 * ftol)

    feas_fail: list[tuple[int, str]] = []
    feas_max = 0.0
    if abs(levels[0] - inst.initial_level) > 1e-12 * energy_scale:
        feas_fail.append((0, "initial level mismatch"))
    for t in range(1, T + 1):
        p = inst.periods[t - 1]
        v = max(p.lower - levels[t], levels[t] - p.upper, 0.0)
        gap = abs(levels[t] - levels[t - 1] - incs[t - 1])
        v = max(v, incs[t - 1] - p.rates.p_in, -p.rates.p_out - incs[t - 1], gap)
        feas_max = max(feas_max, v)
        if v > ftol:
            feas_fail.append((t, f"infeasible by {v:.3e}"))

    slack_fail: list[tuple[int, str]] = []
    slack_max = 0.0
    for t in range(1, T + 1):
        p = inst.periods[t - 1]
        at_lower = levels[t] - p.lower <= contact_tol
        at_upper = p.upper - levels[t] <= contact_tol
        lam = lams[t - 1]
        if at_lower and at_upper:
            v = 0.0
        elif at_lower:
            v = max(-lam, 0.0)
        elif at_upper:
            v = max(lam, 0.0)
        else:
            v = abs(lam)
        slack_max = max(slack_max, v)
        if v > dtol:
            slack_fail.append((t, f"slackness violated by {v:.3e}"))

    tilt_fail: list[tuple[int, str]] = []
    tilt_max = 0.0
    ktol = max(2.0 * inst.snap_tolerance, 1e-12 * energy_scale)
    for t in range(1, T + 1):
        p = inst.periods[t - 1]
        s_t = float(levels[t])
        d_lo = p.penalty.derivative_interval(s_t - ktol)[0]
        d_hi = p.penalty.derivative_interval(s_t + ktol)[1]
        if t < T:
            resid = tilts[t] - (tilts[t - 1] - lams[t - 1])
        else:
            resid = lams[T - 1] - tilts[T - 1]
        v = max(d_lo - resid, resid - d_hi, 0.0)
        tilt_max = max(tilt_max, v)
        if v > dtol:
            tilt_fail.append((t, f"tilt recursion off by {v:.3e}"))

    stat_fail: list[tuple[int, str]] = []
    stat_max = 0.0
    # Increments recovered from level differences sit within a few snap
    # radii of the tilted minimizer (bound, knot and seam pinning all move
    # levels by up to that much); widen the subgradient by that dust so a
    # kink a hair away is not missed.
    kink_tol = max(6.0 * inst.snap_tolerance, 1e-9 * energy_scale)
    for t in range(1, T + 1):
        p = inst.periods[t - 1]
        x = float(incs[t - 1])
        g_lo = p.cost.subgradient(x - kink_tol)[0]
        g_hi = p.cost.subgradient(x + kink_tol)[1]
        resid = tilts[t - 1] - 2.0 * eps * x
        rate_tol = 1e-9 * energy_scale
        at_hi = x >= p.rates.p_in - rate_tol
        at_lo = x <= -p.rates.p_out + rate_tol
        v = 0.0
        if not at_hi:
            v = max(v, resid - g_hi)
        if not at_lo:
            v = max(v, g_lo - resid)
        stat_max = max(stat_max, v)
        if v > dtol:
            stat_fail.append((t, f"stationarity violated by {v:.3e}"))

    checks = (
        KktCheck("feasibility", not feas_fail, feas_max, tuple(feas_fail)),
        KktCheck("slackness", not slack_fail, slack_max, tuple(slack_fail)),
        KktCheck("tilt_consistency", not tilt_fail, tilt_max, tuple(tilt_fail)),
        KktCheck("stationarity", not stat_fail, stat_max, tuple(stat_fail)),
    )
    return KktReport(ok=all(c.ok for c in checks), checks=checks)


def capacity_sensitivity(sol: Solution) -> list[tuple[float, float]]:
    """Per-period bound sensitivities ``(upper, lower)`` of the objective.

    The upper entry is the one-sided derivative of the optimal cost with
    respect to the period's upper bound (nonzero only on upper-bound
    contacts, where it equals the capacity multiplier); the lower entry
    is the analogue for the lower bound.
    """
    cert = sol.certificate
    return [
        (float(b), float(a))
        for b, a in zip(cert.upper_sensitivity, cert.lower_sensitivity)
    ]
