"""Self-contained convex solvers used as independent cross-checks.

Three problem shapes, all desk scale (K <= 10):

* the fixed-grid frequency program (capacity columns / completion rows),
* the joint time-and-computation program for a fixed offload order, and
* its l1 feasibility relaxation, whose multipliers feed feasibility cuts.

Method: augmented Lagrangian outer loop with a projected-gradient inner
solver (Barzilai-Borwein steps, Armijo backtracking, box projection).  No
external solver dependency, so every number here is auditable.  Variables
are normalized internally (cycles by the largest task, times by the
horizon) and multipliers are mapped back to SI units on exit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NonConvergenceError
from .freq_alloc import plan_mask, required_fmax
from .scenario import Scenario, Schedule


@dataclass
class ConvexSolution:
    primal: dict
    objective: float
    duals: dict
    kkt_residual: float
    iterations: int
    status: str = "optimal"
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# inner projected-gradient engine

def _pg_minimize(x0, fg, project, max_iter=600, gtol=1e-10):
    """Projected gradient with spectral (BB) steps and Armijo backtracking.

    Returns (x, value, grad, iterations, stationarity) where stationarity is
    the max-norm of the unit-step projected gradient at exit.
    """
    x = project(x0.copy())
    val, grad = fg(x)
    step = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    history = [val]
    pg_norm = math.inf
    for it in range(1, max_iter + 1):
        trial_step = step
        for _ in range(60):
            x_new = project(x - trial_step * grad)
            d = x_new - x
            dn2 = float(np.dot(d.ravel(), d.ravel()))
            if dn2 == 0.0:
                return x, val, grad, it, pg_norm
            val_new, grad_new = fg(x_new)
            ref = max(history[-8:])
            if val_new <= ref - 1e-4 * dn2 / max(trial_step, 1e-300):
                break
            trial_step *= 0.5
        else:
            return x, val, grad, it, pg_norm
        s = x_new - x
        y = grad_new - grad
        sy = float(np.dot(s.ravel(), y.ravel()))
        ss = float(np.dot(s.ravel(), s.ravel()))
        step = min(max(ss / sy, 1e-14), 1e14) if sy > 0 else trial_step * 2.0
        x, val, grad = x_new, val_new, grad_new
        history.append(val)
        # projected-gradient stationarity at unit reference step
        pg = x - project(x - grad)
        pg_norm = float(np.max(np.abs(pg)))
        if pg_norm <= gtol:
            break
    return x, val, grad, it, pg_norm


def _auglag(x0, objective, constraints, project, *, tol, max_outer=100,
            c0=10.0, c_max=1e9, inner_iter=1500):
    """Method of multipliers over inequality constraints g(x) <= 0.

    `objective(x) -> (value, grad)`; `constraints(x) -> (g, jac_apply)` where
    g is the stacked constraint vector and jac_apply(w) returns J^T w with the
    same shape as x.  Exits only once both the constraint violation and the
    subproblem stationarity are below tolerance, so the recovered multipliers
    are trustworthy.  Returns (x, multipliers, violation, outer_iters).
    """
    x = project(x0.copy())
    g, _ = constraints(x)
    lam = np.zeros_like(g)
    c = c0
    viol_prev = math.inf

    def al_fg(xv):
        val, grad = objective(xv)
        gv, jac_apply = constraints(xv)
        shifted = lam + c * gv
        active = np.clip(shifted, 0.0, None)
        val = val + float(np.sum(active ** 2 - lam ** 2)) / (2.0 * c)
        grad = grad + jac_apply(active)
        return val, grad

    total_inner = 0
    budget = inner_iter
    for outer in range(1, max_outer + 1):
        gtol = max(tol * 1e-2, 1e-13)
        x, _, _, inner, pg_norm = _pg_minimize(x, al_fg, project,
                                               max_iter=budget, gtol=gtol)
        total_inner += inner
        g, _ = constraints(x)
        viol = float(np.max(np.clip(g, 0.0, None), initial=0.0))
        lam = np.clip(lam + c * g, 0.0, None)
        stationary = pg_norm <= max(tol, 1e-9)
        if viol <= tol and stationary and outer > 1:
            return x, lam, viol, total_inner
        if inner >= budget and not stationary:
            budget = min(budget * 2, 20000)  # under-solved subproblem
        if viol > 0.25 * viol_prev and c < c_max:
            c = min(c * 3.0, c_max)
        viol_prev = viol
    return x, lam, viol, total_inner


# ---------------------------------------------------------------------------
# problem (fixed order, fixed times): frequency plan oracle

@dataclass(frozen=True)
class FreqProblem:
    cycles: tuple
    dt: tuple
    f_max: float
    kappa: float


def kkt_residual(problem: FreqProblem, point, duals) -> float:
    """Normalized max KKT violation of the frequency program.

    Checks stationarity (with the nonnegativity multiplier eliminated),
    primal and dual feasibility and complementary slackness, all scaled to
    the problem's natural units so a clean point scores ~1e-16.
    """
    cycles = np.asarray(problem.cycles, dtype=float)
    dt = np.asarray(problem.dt, dtype=float)
    f = np.asarray(point, dtype=float)
    alpha = np.asarray(duals["alpha"], dtype=float)
    beta = np.asarray(duals["beta"], dtype=float)
    k = len(cycles)
    kappa = problem.kappa
    mask = plan_mask(k) & (dt[None, :] > 0)
    f_scale = max(problem.f_max, float(np.max(f, initial=0.0)), 1e-300)
    stat_scale = 3.0 * kappa * f_scale ** 2 * max(float(dt[2:].max()), 1e-300)

    worst = 0.0
    # stationarity: 3 kappa f^2 dt + alpha - beta dt = gamma for some gamma >= 0
    # with gamma f = 0; eliminating gamma, a negative defect is dual
    # infeasibility and a positive defect must be complementary to f
    stat = 3.0 * kappa * f ** 2 * dt[None, :] + alpha[None, :] - beta[:, None] * dt[None, :]
    if mask.any():
        neg = np.clip(-stat[mask], 0.0, None)
        worst = max(worst, float(np.max(neg, initial=0.0)) / stat_scale)
        comp = np.clip(stat[mask], 0.0, None) * f[mask]
        worst = max(worst, float(np.max(comp, initial=0.0)) / (stat_scale * f_scale))
    # primal feasibility
    col = f.sum(axis=0)
    worst = max(worst, float(np.max(np.clip(col[2:] - problem.f_max, 0.0, None),
                                    initial=0.0)) / f_scale)
    row = (f * dt[None, :]).sum(axis=1)
    cyc_scale = max(float(cycles.max(initial=0.0)), 1e-300)
    worst = max(worst, float(np.max(np.clip(cycles - row, 0.0, None),
                                    initial=0.0)) / cyc_scale)
    worst = max(worst, float(np.max(np.clip(-f[mask], 0.0, None), initial=0.0)) / f_scale)
    # dual feasibility and complementary slackness
    worst = max(worst, float(np.max(np.clip(-alpha, 0.0, None), initial=0.0)) /
                (stat_scale))
    worst = max(worst, float(np.max(np.clip(-beta, 0.0, None), initial=0.0)) *
                max(float(dt[2:].max()), 1e-300) / stat_scale)
    comp_a = np.abs(alpha[2:] * (col[2:] - problem.f_max)) / (stat_scale * f_scale)
    comp_b = np.abs(beta * (cycles - row)) / (stat_scale * f_scale)
    worst = max(worst, float(np.max(comp_a, initial=0.0)),
                float(np.max(comp_b, initial=0.0)))
    return worst


def _pour_completes(ft, dtt, cap, k) -> bool:
    """Work-conserving pour at per-slot rate cap; True iff all tasks finish.

    Tasks share the final deadline, so any work-conserving order decides
    feasibility exactly; this is the brute-force side of the feasibility
    threshold, independent of the closed-form test.
    """
    remaining = list(ft)
    for j in range(2, k + 2):
        budget = cap * dtt[j]
        for i in range(min(j - 1, k)):
            if remaining[i] <= 0.0 or budget <= 0.0:
                continue
            take = min(remaining[i], budget)
            remaining[i] -= take
            budget -= take
    return max(remaining) <= 1e-12 * max(max(ft), 1e-300)


def _pour_plan(ft, dtt, cap, k) -> np.ndarray:
    """The rate plan realized by the work-conserving pour at the given cap."""
    f = np.zeros((k, k + 2))
    remaining = list(ft)
    for j in range(2, k + 2):
        if dtt[j] <= 0.0:
            continue
        budget = cap * dtt[j]
        for i in range(min(j - 1, k)):
            if remaining[i] <= 0.0 or budget <= 0.0:
                continue
            take = min(remaining[i], budget)
            remaining[i] -= take
            budget -= take
            f[i, j] = take / dtt[j]
    return f


def solve_freq_oracle(cycles, dt, f_max: float, kappa: float,
                      tol: float = 1e-10) -> ConvexSolution:
    """Interior-point solution of the frequency program with dual recovery.

    Log-barrier Newton over the valid plan entries, started from a strictly
    interior inflation of a greedy pour; multipliers are read off the barrier
    slacks at the final centering.  Fully self-contained so the oracle side
    of every cross-check stays auditable.
    """
    cycles = np.asarray(cycles, dtype=float)
    dt = np.asarray(dt, dtype=float)
    k = len(cycles)
    f_scale = float(cycles.max(initial=0.0))
    if f_scale <= 0.0:
        zero = np.zeros((k, k + 2))
        duals = {"alpha": np.zeros(k + 2), "beta": np.zeros(k)}
        return ConvexSolution(primal={"f": zero}, objective=0.0, duals=duals,
                              kkt_residual=0.0, iterations=0)
    t_scale = float(dt[2:].sum())
    if t_scale <= 0.0:
        raise InfeasibleError("no compute time at all", detail=math.inf)
    dtt = dt / t_scale
    ft = cycles / f_scale
    fmax_t = f_max * t_scale / f_scale

    # brute-force feasibility threshold by bisection on the pour cap
    hi_cap = float(ft.sum() / max(min(d for d in dtt[2:] if d > 0), 1e-300))
    lo_cap, hi = 0.0, max(hi_cap, fmax_t)
    for _ in range(80):
        mid = 0.5 * (lo_cap + hi)
        if _pour_completes(ft, dtt, mid, k):
            hi = mid
        else:
            lo_cap = mid
    cap_star = hi
    if fmax_t < cap_star * (1.0 - 1e-9):
        raise InfeasibleError("capacity below feasibility threshold",
                              detail=cap_star * f_scale / t_scale)

    # strictly interior start: inflate a pour plan run below capacity
    margin = max(fmax_t - cap_star, 0.0)
    cap0 = cap_star + 0.5 * margin
    f0 = _pour_plan(ft, dtt, cap0, k)
    mask = plan_mask(k) & (dt[None, :] > 0)
    delta = min(0.02, 0.2 * margin / max(cap0, 1e-300)) + 1e-12
    eps = 1e-7 * max(margin, 1e-6 * fmax_t) / (k + 1)
    f0 = f0 * (1.0 + delta) + eps
    f0[~mask] = 0.0

    entries = np.argwhere(mask)
    rows_e = entries[:, 0]
    cols_e = entries[:, 1]
    dtt_e = dtt[cols_e]
    n_e = len(entries)
    n_con = 2 * k + n_e
    v = f0[rows_e, cols_e]

    col_mat = np.zeros((k, n_e))      # col_mat[j-2, e] = 1 if entry in slot j
    row_mat = np.zeros((k, n_e))      # row_mat[i, e] = dtt_j if entry in row i
    for e in range(n_e):
        col_mat[cols_e[e] - 2, e] = 1.0
        row_mat[rows_e[e], e] = dtt_e[e]

    def slacks(vv):
        s_col = fmax_t - col_mat @ vv
        s_row = row_mat @ vv - ft
        return s_col, s_row

    s_col, s_row = slacks(v)
    assert s_col.min() > 0 and s_row.min() > 0 and v.min() > 0

    mu = max(0.1 * float(np.sum(v ** 3 * dtt_e)) / n_con, 1e-6)
    mu_end = 1e-13 * max(1.0, fmax_t)
    newton_steps = 0
    while True:
        for _ in range(50):
            s_col, s_row = slacks(v)
            grad = (3.0 * v ** 2 * dtt_e
                    + mu * (col_mat.T @ (1.0 / s_col))
                    - mu * (row_mat.T @ (1.0 / s_row))
                    - mu / v)
            hess = np.diag(6.0 * v * dtt_e + mu / v ** 2)
            hess += mu * (col_mat.T * (1.0 / s_col ** 2)) @ col_mat
            hess += mu * (row_mat.T * (1.0 / s_row ** 2)) @ row_mat
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                step = -grad / np.diag(hess)
            newton_steps += 1
            # fraction-to-boundary then Armijo on the barrier objective
            with np.errstate(divide="ignore"):
                t_max = 1.0
                neg = step < 0
                if neg.any():
                    t_max = min(t_max, 0.995 * float(np.min(-v[neg] / step[neg])))
                dcol = col_mat @ step
                pos = dcol > 0
                if pos.any():
                    t_max = min(t_max, 0.995 * float(np.min(s_col[pos] / dcol[pos])))
                drow = row_mat @ step
                negr = drow < 0
                if negr.any():
                    t_max = min(t_max, 0.995 * float(np.min(-s_row[negr] / drow[negr])))

            def psi(vv):
                sc, sr = slacks(vv)
                if sc.min() <= 0 or sr.min() <= 0 or vv.min() <= 0:
                    return math.inf
                return (float(np.sum(vv ** 3 * dtt_e))
                        - mu * float(np.sum(np.log(sc)) + np.sum(np.log(sr))
                                     + np.sum(np.log(vv))))

            base = psi(v)
            slope = float(grad @ step)
            t_ls = t_max
            accepted = False
            for _ in range(50):
                cand = v + t_ls * step
                if psi(cand) <= base + 1e-4 * t_ls * slope:
                    v = cand
                    accepted = True
                    break
                t_ls *= 0.5
            if not accepted:
                break
            if float(np.max(np.abs(step))) * t_ls <= 1e-10 * (1.0 + float(v.max())):
                break
        if mu <= mu_end:
            break
        mu = max(mu * 0.15, mu_end)

    s_col, s_row = slacks(v)
    alpha_t = mu / s_col
    beta_t = mu / s_row
    f_norm = np.zeros((k, k + 2))
    f_norm[rows_e, cols_e] = v
    rate = f_scale / t_scale
    f_true = f_norm * rate
    alpha = np.zeros(k + 2)
    alpha[2:] = alpha_t * kappa * f_scale ** 2 / t_scale
    beta = beta_t * kappa * f_scale ** 2 / t_scale ** 2
    energy = float(kappa * np.sum(f_true ** 3 * dt[None, :]))
    problem = FreqProblem(tuple(cycles), tuple(dt), f_max, kappa)
    res = kkt_residual(problem, f_true, {"alpha": alpha, "beta": beta})
    return ConvexSolution(primal={"f": f_true}, objective=energy,
                          duals={"alpha": alpha, "beta": beta},
                          kkt_residual=res, iterations=newton_steps)


# ---------------------------------------------------------------------------
# joint time / computation problems for a fixed offload order

def _order_constants(scenario: Scenario, schedule: Schedule):
    """Per-slot constants of the normalized joint program."""
    order = list(schedule.order)
    bits = scenario.data_bits[order]
    gains = scenario.gains[order]
    cycles = scenario.cycles[order]
    p = scenario.params
    t = scenario.t_s
    causality = p.lam * bits ** 3 / (gains ** 2 * p.eta * p.p0_w * t ** 3)
    return bits, gains, cycles, causality


def _joint_setup(scenario: Scenario, schedule: Schedule):
    k = scenario.k
    bits, gains, cycles, causality = _order_constants(scenario, schedule)
    f_cyc = float(cycles.max())
    mask = plan_mask(k)
    cap_ratio = f_cyc / (scenario.f_max_hz * scenario.t_s)
    ft = cycles / f_cyc
    return k, bits, gains, cycles, causality, f_cyc, mask, cap_ratio, ft


_T_FLOOR = 1e-9


def _split(z, k):
    return z[:k + 2], z[k + 2:].reshape(k, k + 2)


def solve_primal_oracle(scenario: Scenario, schedule: Schedule,
                        tol: float = 1e-9) -> ConvexSolution:
    """Joint optimum of slot durations and computation amounts, with duals.

    Raises InfeasibleError when the augmented-Lagrangian loop cannot close
    the constraint violation for this offload order.
    """
    (k, bits, gains, cycles, causality, f_cyc, mask,
     cap_ratio, ft) = _joint_setup(scenario, schedule)
    n_t = k + 2

    def project(z):
        t = z[:n_t]
        np.clip(t, _T_FLOOR, 1.0, out=t)
        x = z[n_t:].reshape(k, k + 2)
        np.clip(x, 0.0, None, out=x)
        x[~mask] = 0.0
        return z

    def objective(z):
        t, x = _split(z, k)
        inv_t2 = 1.0 / t[2:] ** 2
        val = float(np.sum(x[:, 2:] ** 3 * inv_t2[None, :]))
        gx = np.zeros_like(x)
        gx[:, 2:] = 3.0 * x[:, 2:] ** 2 * inv_t2[None, :]
        gt = np.zeros(n_t)
        gt[2:] = -2.0 * np.sum(x[:, 2:] ** 3, axis=0) / t[2:] ** 3
        return val, np.concatenate([gt, gx.ravel()])

    def constraints(z):
        t, x = _split(z, k)
        cum = np.concatenate([[0.0], np.cumsum(t)])  # cum[i] = sum t[:i]
        g_e = causality / t[1:k + 1] ** 2 - cum[1:k + 1]
        g_row = ft - x.sum(axis=1)
        g_col = cap_ratio * x[:, 2:].sum(axis=0) - t[2:]
        g_budget = np.array([t.sum() - 1.0])
        g = np.concatenate([g_e, g_row, g_col, g_budget])

        def jac_apply(w):
            w_e = w[:k]
            w_row = w[k:2 * k]
            w_col = w[2 * k:3 * k]
            w_b = w[3 * k]
            gt = np.zeros(n_t)
            # causality: -2 C_n / t_n^3 on own slot, -1 on every harvest
            # slot 0..n-1; slot i sits in the window of order n iff i <= n-1
            gt[1:k + 1] += -2.0 * causality * w_e / t[1:k + 1] ** 3
            suffix = np.concatenate([np.cumsum(w_e[::-1])[::-1], [0.0]])
            gt[:k + 1] -= suffix[:k + 1]
            gt[2:] += -w_col
            gt += w_b
            gx = np.zeros((k, k + 2))
            gx -= w_row[:, None]
            gx[:, 2:] += cap_ratio * w_col[None, :]
            gx[~mask] = 0.0
            return np.concatenate([gt, gx.ravel()])

        return g, jac_apply

    z0 = np.zeros(n_t + k * (k + 2))
    z0[:n_t] = 1.0 / (k + 2)
    x0 = z0[n_t:].reshape(k, k + 2)
    for i in range(k):
        x0[i, i + 2:] = ft[i] / (k - i)
    x0[~mask] = 0.0

    z, lam, viol, iters = _auglag(z0, objective, constraints, project,
                                  tol=tol, max_outer=80, inner_iter=900)
    if viol > 50 * tol:
        raise InfeasibleError("joint program infeasible for this order",
                              detail=viol)
    t, x = _split(z, k)
    p = scenario.params
    t_true = t * scenario.t_s
    x_true = x * f_cyc
    s_e = p.kappa * f_cyc ** 3 / scenario.t_s ** 2
    rho = lam[:k] * s_e / (gains * p.eta * p.p0_w * scenario.t_s)
    beta = lam[k:2 * k] * s_e / f_cyc
    omega = np.zeros(k + 2)
    omega[2:] = lam[2 * k:3 * k] * s_e / (scenario.f_max_hz * scenario.t_s)
    xi = lam[3 * k] * s_e / scenario.t_s
    energy = float(p.kappa * np.sum(
        x_true[:, 2:] ** 3 / np.maximum(t_true[2:], _T_FLOOR * scenario.t_s) ** 2))
    duals = {"rho": rho, "beta": beta, "omega": omega, "xi": xi}
    return ConvexSolution(
        primal={"dt": t_true, "x": x_true}, objective=energy, duals=duals,
        kkt_residual=viol, iterations=iters)


def solve_feasibility(scenario: Scenario, schedule: Schedule,
                      tol: float = 1e-9) -> ConvexSolution:
    """l1 relaxation: minimal summed slack making the joint program feasible.

    Always succeeds; a (normalized) objective at or below tol certifies the
    order feasible.  Returns the slack multipliers used by feasibility cuts
    plus the relaxed point itself.
    """
    (k, bits, gains, cycles, causality, f_cyc, mask,
     cap_ratio, ft) = _joint_setup(scenario, schedule)
    n_t = k + 2
    n_x = k * (k + 2)

    def unpack(z):
        t = z[:n_t]
        x = z[n_t:n_t + n_x].reshape(k, k + 2)
        zeta = z[n_t + n_x:n_t + n_x + k]
        iota = z[n_t + n_x + k:]
        return t, x, zeta, iota

    def project(z):
        t, x, zeta, iota = unpack(z)
        np.clip(t, _T_FLOOR, 1.0, out=t)
        np.clip(x, 0.0, None, out=x)
        x[~mask] = 0.0
        np.clip(zeta, 0.0, None, out=zeta)
        np.clip(iota, 0.0, None, out=iota)
        return z

    def objective(z):
        _, _, zeta, iota = unpack(z)
        grad = np.zeros_like(z)
        grad[n_t + n_x:] = 1.0
        return float(zeta.sum() + iota.sum()), grad

    def constraints(z):
        t, x, zeta, iota = unpack(z)
        cum = np.concatenate([[0.0], np.cumsum(t)])
        g_e = causality / t[1:k + 1] ** 2 - cum[1:k + 1] - zeta
        g_row = ft - x.sum(axis=1) - iota
        g_col = cap_ratio * x[:, 2:].sum(axis=0) - t[2:]
        g_budget = np.array([t.sum() - 1.0])
        g = np.concatenate([g_e, g_row, g_col, g_budget])

        def jac_apply(w):
            w_e = w[:k]
            w_row = w[k:2 * k]
            w_col = w[2 * k:3 * k]
            w_b = w[3 * k]
            gt = np.zeros(n_t)
            gt[1:k + 1] += -2.0 * causality * w_e / t[1:k + 1] ** 3
            suffix = np.concatenate([np.cumsum(w_e[::-1])[::-1], [0.0]])
            gt[:k + 1] -= suffix[:k + 1]
            gt[2:] += -w_col
            gt += w_b
            gx = np.zeros((k, k + 2))
            gx -= w_row[:, None]
            gx[:, 2:] += cap_ratio * w_col[None, :]
            gx[~mask] = 0.0
            out = np.zeros_like(z)
            out[:n_t] = gt
            out[n_t:n_t + n_x] = gx.ravel()
            out[n_t + n_x:n_t + n_x + k] = -w_e
            out[n_t + n_x + k:] = -w_row
            return out

        return g, jac_apply

    z0 = np.zeros(n_t + n_x + 2 * k)
    z0[:n_t] = 1.0 / (k + 2)
    x0 = z0[n_t:n_t + n_x].reshape(k, k + 2)
    for i in range(k):
        x0[i, i + 2:] = ft[i] / (k - i)
    project(z0)

    z, lam, viol, iters = _auglag(z0, objective, constraints, project,
                                  tol=tol, max_outer=80, inner_iter=900)
    if viol > 1e-5:
        raise NonConvergenceError("feasibility relaxation failed to converge",
                                  best={"violation": viol})
    t, x, zeta, iota = unpack(z)
    objective_val = float(zeta.sum() + iota.sum())
    duals = {"rho": lam[:k].copy(), "beta": lam[k:2 * k].copy()}
    return ConvexSolution(
        primal={"dt": t * scenario.t_s, "x": x * f_cyc,
                "zeta": zeta.copy(), "iota": iota.copy()},
        objective=objective_val, duals=duals, kkt_residual=viol,
        iterations=iters, status="feasible" if objective_val <= tol else "relaxed",
        extras={"f_cyc": f_cyc, "causality": causality})
