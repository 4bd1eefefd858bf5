"""Low-complexity optimal CPU-frequency allocation for fixed times and order.

Solves, for a fixed slot grid dt[0..K+1] and arrival order, the convex
program: minimize sum kappa f_{n,m}^3 dt_m subject to per-slot capacity
sum_{n<m} f_{n,m} <= F_max and per-task completion sum_m f_{n,m} dt_m >= F_n.

Index conventions used across the package: time slots are numbered 0..K+1
(slot 0 harvest-only, slots 1..K offloading, slots 2..K+1 computing).  A
frequency plan is a (K, K+2) array `f` where f[i, j] is the rate given in
slot j to the task that arrived in slot i+1; entries with j < i+2 are zero.

The fast path exploits the structure of the optimum: each task's rate is
flat up to a "transition" slot at which the server saturates, then decays,
then hits zero.  Duals are kept internally in rate-squared units
(B = beta/(3 kappa), a = alpha/(3 kappa dt)) where the closed form is just
f = sqrt(max(B - a, 0)); the public types carry the true multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NonConvergenceError

NO_TRANSITION = "none"
TRANSITION_AT = "at"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class TransitionVerdict:
    kind: str                 # one of NO_TRANSITION / TRANSITION_AT / INFEASIBLE
    slot: int | None = None   # first saturated slot, in 3..K+1, iff kind == "at"

    def __post_init__(self):
        if self.kind == TRANSITION_AT and self.slot is None:
            raise ValueError("TRANSITION_AT needs a slot index")
        if self.kind != TRANSITION_AT and self.slot is not None:
            raise ValueError(f"{self.kind} verdict carries no slot")


@dataclass(frozen=True)
class FreqDuals:
    """True multipliers: alpha[2..K+1] for capacity, beta[0..K-1] for completion."""

    alpha: tuple[float, ...]   # length K+2; entries 0 and 1 unused (zero)
    beta: tuple[float, ...]    # length K
    kappa: float

    def alpha_ratios(self) -> np.ndarray:
        """alpha_m / dt_m is undefined here; callers divide by their dt."""
        return np.asarray(self.alpha)


@dataclass(frozen=True)
class FreqSolution:
    f: np.ndarray              # (K, K+2) plan
    duals: FreqDuals
    energy: float
    iterations: int
    verdict: TransitionVerdict


def plan_mask(k: int) -> np.ndarray:
    """Boolean (K, K+2) mask of the valid plan support (slot j >= i+2)."""
    rows = np.arange(k)[:, None]
    cols = np.arange(k + 2)[None, :]
    return cols >= rows + 2


def eval_energy(f: np.ndarray, dt, kappa: float) -> float:
    """Server energy sum kappa f^3 dt over the plan support (J)."""
    dt = np.asarray(dt, dtype=float)
    return float(kappa * np.sum(f ** 3 * dt[None, :]))


def required_fmax(cycles, dt) -> float:
    """Smallest capacity for which the allocation problem is feasible (Hz).

    Equals max over arrival orders n of remaining work divided by remaining
    compute time; a zero-length remaining window with work left yields inf.
    """
    cycles = np.asarray(cycles, dtype=float)
    dt = np.asarray(dt, dtype=float)
    k = len(cycles)
    worst = 0.0
    tail_cycles = 0.0
    tail_time = 0.0
    for i in range(k - 1, -1, -1):
        tail_cycles += cycles[i]
        tail_time += dt[i + 2]
        if tail_cycles <= 0.0:
            continue
        if tail_time <= 0.0:
            return math.inf
        worst = max(worst, tail_cycles / tail_time)
    return worst


def _flat_rates(cycles, dt) -> np.ndarray:
    """Per-task equal-split rate F_n / (remaining window duration)."""
    cycles = np.asarray(cycles, dtype=float)
    dt = np.asarray(dt, dtype=float)
    k = len(cycles)
    windows = np.array([dt[i + 2:].sum() for i in range(k)])
    rates = np.zeros(k)
    busy = cycles > 0
    rates[busy] = cycles[busy] / windows[busy]
    return rates


def transition_point(cycles, dt, f_max: float) -> TransitionVerdict:
    """Locate the first saturated slot without solving the program.

    Uses the threshold function digamma(i) = sum_{n<=i-2} flat-rate_n +
    (work from order i-1 on) / (time from slot i on): the transition sits at
    slot i iff digamma(i-1) <= F_max < digamma(i).
    """
    cycles = np.asarray(cycles, dtype=float)
    dt = np.asarray(dt, dtype=float)
    k = len(cycles)
    if f_max < required_fmax(cycles, dt):
        return TransitionVerdict(INFEASIBLE)
    rates = _flat_rates(cycles, dt)
    if f_max >= rates.sum():
        return TransitionVerdict(NO_TRANSITION)
    prefix = 0.0
    for slot in range(3, k + 2):
        # digamma(slot): tasks ordered before slot-1 keep their flat rate,
        # the rest share the time from `slot` onward.
        tail_cycles = cycles[slot - 2:].sum()
        tail_time = dt[slot:].sum()
        prefix += rates[slot - 3]
        threshold = math.inf if tail_time <= 0 else prefix + tail_cycles / tail_time
        if f_max < threshold:
            return TransitionVerdict(TRANSITION_AT, slot)
    return TransitionVerdict(TRANSITION_AT, k + 1)


def primal_from_duals(duals: FreqDuals, dt) -> np.ndarray:
    """Plan implied by multipliers: f = sqrt([beta/(3k) - alpha/(3k dt)]+)."""
    dt = np.asarray(dt, dtype=float)
    k = len(duals.beta)
    three_k = 3.0 * duals.kappa
    beta = np.asarray(duals.beta)
    alpha = np.asarray(duals.alpha)
    ratio = np.zeros(k + 2)
    np.divide(alpha, dt, out=ratio, where=dt > 0)
    level = beta[:, None] / three_k - ratio[None, :] / three_k
    f = np.sqrt(np.clip(level, 0.0, None))
    f[~plan_mask(k)] = 0.0
    return f


def _col_sum(b_levels, rows, ratio) -> float:
    total = 0.0
    for i in rows:
        d = b_levels[i] - ratio
        if d > 0.0:
            total += math.sqrt(d)
    return total


def _bisect_column(b_levels, rows, f_max, lo, hi, width_tol) -> float:
    """Root of sum_n sqrt([B_n - a]+) = f_max for a in [lo, hi] (decreasing)."""
    if _col_sum(b_levels, rows, lo) <= f_max:
        return lo
    while hi - lo > width_tol:
        mid = 0.5 * (lo + hi)
        if _col_sum(b_levels, rows, mid) > f_max:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bisect_alpha(m: int, beta, dt, f_max: float, kappa: float,
                 ratio_lo: float | None = None, ratio_hi: float | None = None,
                 eps0: float = 1e-5) -> float:
    """Solve the slot-m saturation equation for the capacity multiplier.

    Bisects alpha_m/dt_m over [ratio_lo, ratio_hi] (defaults: 0 and
    max_n beta_n, the bounds at which the saturated column sum hits its
    extremes) until the bracket is below eps0 relative to its initial width;
    returns alpha_m in true units.
    """
    beta = np.asarray(beta, dtype=float)
    dt = np.asarray(dt, dtype=float)
    three_k = 3.0 * kappa
    b_levels = list(beta[:m - 1] / three_k)
    rows = range(len(b_levels))
    lo = 0.0 if ratio_lo is None else ratio_lo / three_k
    hi = (max(b_levels, default=0.0) if ratio_hi is None else ratio_hi / three_k)
    if hi < lo:
        raise ValueError("bisect_alpha bracket is empty")
    if _col_sum(b_levels, rows, lo) < f_max - 1e-9 * max(f_max, 1.0) and lo > 0.0:
        raise ValueError("bracket invalid: column already under capacity at lower bound")
    width_tol = eps0 * max(hi, 1e-300)
    root = _bisect_column(b_levels, rows, f_max, lo, hi, width_tol)
    return root * three_k * dt[m]


def _solve_row_level(a_ratios, cols, dtt, target, hint_hi) -> float:
    """Root of sum_j sqrt([B - a_j]+) dt_j = target (increasing in B)."""
    lo = 0.0
    hi = hint_hi
    for _ in range(120):
        total = 0.0
        for j in cols:
            d = hi - a_ratios[j]
            if d > 0.0:
                total += math.sqrt(d) * dtt[j]
        if total >= target:
            break
        lo = hi
        hi *= 2.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        total = 0.0
        for j in cols:
            d = mid - a_ratios[j]
            if d > 0.0:
                total += math.sqrt(d) * dtt[j]
        if total < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _newton_polish(b_levels, a_ratios, ft, dtt, fmax_t, kap, row_cols, k):
    """Damped Newton on the active saturation/completion system.

    Unknowns are the completion levels plus the positive slot multipliers;
    equations are the task-completion roots and the saturated-column sums.
    Returns (residual_norm, True) on a successful descent step, leaving the
    inputs updated in place; a failed step leaves them untouched.
    """
    rows = sorted(row_cols)
    cols = [j for j in range(kap, k + 2) if a_ratios[j] > 0.0]
    n_r, n_c = len(rows), len(cols)
    if n_r == 0:
        return 0.0, False
    idx_r = {i: p for p, i in enumerate(rows)}
    idx_c = {j: n_r + p for p, j in enumerate(cols)}

    def residual(bv, av):
        res = np.zeros(n_r + n_c)
        for i in rows:
            total = 0.0
            for j in row_cols[i]:
                d = bv[i] - av[j]
                if d > 0.0:
                    total += math.sqrt(d) * dtt[j]
            res[idx_r[i]] = total - ft[i]
        for j in cols:
            total = 0.0
            for i in range(min(j - 1, k)):
                if ft[i] <= 0.0:
                    continue
                d = bv[i] - av[j]
                if d > 0.0:
                    total += math.sqrt(d)
            res[idx_c[j]] = total - fmax_t
        return res

    res = residual(b_levels, a_ratios)
    norm0 = float(np.max(np.abs(res)))
    jac = np.zeros((n_r + n_c, n_r + n_c))
    for i in rows:
        for j in row_cols[i]:
            d = b_levels[i] - a_ratios[j]
            if d <= 0.0:
                continue
            slope = 0.5 / math.sqrt(d)
            jac[idx_r[i], idx_r[i]] += slope * dtt[j]
            if j in idx_c:
                jac[idx_r[i], idx_c[j]] -= slope * dtt[j]
                jac[idx_c[j], idx_r[i]] += slope
                jac[idx_c[j], idx_c[j]] -= slope
    try:
        step = np.linalg.solve(jac, -res)
    except np.linalg.LinAlgError:
        return norm0, False
    b_try = list(b_levels)
    a_try = list(a_ratios)
    damp = 1.0
    for _ in range(12):
        for p, i in enumerate(rows):
            b_try[i] = b_levels[i] + damp * step[p]
        for p, j in enumerate(cols):
            a_try[j] = max(0.0, a_ratios[j] + damp * step[n_r + p])
        if all(b_try[i] > 0.0 for i in rows):
            norm1 = float(np.max(np.abs(residual(b_try, a_try))))
            if norm1 < 0.7 * norm0:
                b_levels[:] = b_try
                a_ratios[:] = a_try
                return norm1, True
        damp *= 0.5
    return norm0, False


def allocate_frequencies(cycles, dt, f_max: float, kappa: float, *,
                         eps0: float = 1e-5, eps1: float = 1e-5,
                         max_iter: int = 10000,
                         warm: tuple | None = None) -> FreqSolution:
    """Optimal plan for the fixed-grid allocation problem.

    Fast path: classify the transition slot, pin the capacity multipliers of
    earlier slots to zero, then alternate per-slot bisections (saturation
    roots) with per-task completion-level updates until the objective settles
    to relative eps1 over five consecutive sweeps.  The completion update
    replaces the textbook diminishing subgradient step with the exact root of
    the task's completion equation, which is the same ascent direction with a
    step length chosen to zero the residual.

    `warm` re-seeds the dual levels (B, a) from a previous nearby solve.

    Raises InfeasibleError when F_max is below the feasibility threshold and
    NonConvergenceError (carrying the best iterate) at the iteration cap.
    """
    cycles = np.asarray(cycles, dtype=float)
    dt = np.asarray(dt, dtype=float)
    k = len(cycles)
    verdict = transition_point(cycles, dt, f_max)
    if verdict.kind == INFEASIBLE:
        raise InfeasibleError("capacity below feasibility threshold",
                              detail=required_fmax(cycles, dt))

    if verdict.kind == NO_TRANSITION or cycles.max(initial=0.0) <= 0.0:
        rates = _flat_rates(cycles, dt)
        f = np.zeros((k, k + 2))
        for i in range(k):
            f[i, i + 2:] = rates[i]
        beta = tuple(3.0 * kappa * r * r for r in rates)
        duals = FreqDuals(alpha=(0.0,) * (k + 2), beta=beta, kappa=kappa)
        return FreqSolution(f=f, duals=duals, energy=eval_energy(f, dt, kappa),
                            iterations=0, verdict=verdict)

    kap = verdict.slot
    # normalized units: cycles by the largest task, time by the compute span
    f_scale = float(cycles.max())
    t_scale = float(dt[2:].sum())
    ft = [c / f_scale for c in cycles]
    dtt = [d / t_scale for d in dt]
    fmax_t = f_max * t_scale / f_scale
    windows = [sum(dtt[i + 2:]) for i in range(k)]

    if warm is not None:
        b_levels, a_ratios = [list(w) for w in warm]
    else:
        b_levels = [(ft[i] / windows[i]) ** 2 if ft[i] > 0 else 0.0 for i in range(k)]
        a_ratios = [0.0] * (k + 2)
    col_rows = {j: [i for i in range(min(j - 1, k)) if ft[i] > 0]
                for j in range(kap, k + 2)}
    row_cols = {i: list(range(i + 2, k + 2)) for i in range(k) if ft[i] > 0}

    energy_prev = None
    stable = 0
    best = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # saturation roots, sweeping slots left to right; bisect from zero so
        # complementary slackness can never stick at a spurious positive level
        # (the ordered-bracket shortcut is only valid at the fixed point)
        for j in range(kap, k + 2):
            rows = col_rows[j]
            if not rows:
                a_ratios[j] = 0.0
                continue
            hi = max(b_levels[i] for i in rows)
            # run the bracket well below the stopping gate; the extra
            # halvings past eps0 are ~30 sqrt calls and buy exactness
            width_tol = hi * max(2.3e-16, min(eps0, 1e-12))
            a_ratios[j] = _bisect_column(b_levels, rows, fmax_t, 0.0, hi, width_tol)

        # completion levels: exact root per task
        db_rel = 0.0
        for i, cols in row_cols.items():
            hint = max(a_ratios[j] for j in cols) + (ft[i] / windows[i]) ** 2
            new_b = _solve_row_level(a_ratios, cols, dtt, ft[i], hint)
            db_rel = max(db_rel, abs(new_b - b_levels[i]) / max(new_b, 1e-300))
            b_levels[i] = new_b

        # objective and saturated-slot residuals for the stopping rule
        energy_t = 0.0
        col_resid = 0.0
        col_tot = [0.0] * (k + 2)
        for i, cols in row_cols.items():
            for j in cols:
                d = b_levels[i] - a_ratios[j]
                if d > 0.0:
                    r = math.sqrt(d)
                    energy_t += r * r * r * dtt[j]
                    col_tot[j] += r
        for j in range(2, k + 2):
            if j < kap or not col_rows.get(j):
                # pinned or empty slots only need primal feasibility
                col_resid = max(col_resid, col_tot[j] - fmax_t)
            elif a_ratios[j] > 0.0:
                # interior saturation root: both sides must pinch to F_max
                col_resid = max(col_resid, abs(col_tot[j] - fmax_t))
            else:
                col_resid = max(col_resid, col_tot[j] - fmax_t)
        if energy_prev is not None:
            rel = abs(energy_t - energy_prev) / max(energy_t, 1e-300)
            stable = stable + 1 if rel < eps1 else 0
        energy_prev = energy_t
        best = (list(b_levels), list(a_ratios))
        # the dual-movement gate stops a slow geometric crawl from passing
        # the objective test while still far from the fixed point
        if (stable >= 5 and col_resid <= 1e-9 * max(fmax_t, 1.0)
                and db_rel <= 1e-10):
            break
        if iterations >= 10:
            # quadratic cleanup once the saturation pattern has settled
            norm, ok = _newton_polish(b_levels, a_ratios, ft, dtt, fmax_t,
                                      kap, row_cols, k)
            if ok and norm <= 1e-13 * max(fmax_t, 1.0):
                best = (list(b_levels), list(a_ratios))
                break
    else:
        raise NonConvergenceError(
            f"frequency allocation did not settle in {max_iter} sweeps", best=best)

    three_k = 3.0 * kappa
    rate_scale = f_scale / t_scale
    beta = tuple(three_k * b * rate_scale ** 2 for b in b_levels)
    alpha = tuple(three_k * a_ratios[j] * rate_scale ** 2 * dt[j] if j >= 2 else 0.0
                  for j in range(k + 2))
    duals = FreqDuals(alpha=alpha, beta=beta, kappa=kappa)
    f = primal_from_duals(duals, dt)
    return FreqSolution(f=f, duals=duals, energy=eval_energy(f, dt, kappa),
                        iterations=iterations, verdict=verdict)


def observed_transition(f: np.ndarray, dt, f_max: float,
                        tol_scale: float = 1e-6) -> int | None:
    """First slot at which some already-running task's rate strictly drops.

    Returns None when every task keeps a flat rate over its whole window
    (the no-transition pattern); tolerance is tol_scale * F_max.
    """
    k = f.shape[0]
    tol = tol_scale * f_max
    break_slot = None
    for i in range(k):
        for j in range(i + 3, k + 2):
            if f[i, j] < f[i, j - 1] - tol:
                break_slot = j if break_slot is None else min(break_slot, j)
                break
    return break_slot


def row_pattern_ok(row: np.ndarray, first_col: int, f_max: float,
                   tol_scale: float = 1e-6) -> bool:
    """Check the flat, then strictly decreasing, then zero shape of one task."""
    tol = tol_scale * f_max
    vals = [v for v in row[first_col:]]
    # locate the end of the flat prefix
    idx = 0
    while idx + 1 < len(vals) and abs(vals[idx + 1] - vals[idx]) <= tol:
        idx += 1
    # strictly decreasing afterwards until zero
    prev = vals[idx]
    state_zero = prev <= tol
    for v in vals[idx + 1:]:
        if state_zero:
            if v > tol:
                return False
            continue
        if v <= tol:
            state_zero = True
            continue
        if v >= prev - tol:
            return False
        prev = v
    return True
