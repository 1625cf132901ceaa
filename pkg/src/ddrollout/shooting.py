"""Continuous lookahead backends: shooting with terminal sample targets.

For piecewise-linear dynamics with quadratic stage costs the l-step problem
decomposes into independent subproblems, one per (mode sequence, terminal
target) pair. Each subproblem is a box-constrained quadratic program solved
by projected gradient with fixed step 1/L; terminal equality to a sampled
state is enforced by a quadratic mismatch penalty driven below eps_term by
continuation. Budget-augmented problems add an exact ball constraint on the
control energy, handled by bisection on its multiplier. Subproblems are
independent, may run on a thread pool, and are reduced in deterministic
(value, index) order so parallel and serial runs agree exactly.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .budget import AugmentedState, BudgetSampleSet, base_view
from .costs import INF
from .errors import SolverFailureError
from .lookahead import LookaheadSolution, SolverConfig
from .model import BoxControls, Policy, ProblemDef, state_key
from .sample_sets import AnalyticSampleSet, ExplicitSampleSet


class FreeTerminal:
    """Pseudo terminal set: every state admissible, smooth quadratic cost.

    Used by the classical receding-horizon baseline, where the terminal
    cost is a design choice rather than recorded data.
    """

    def __init__(self, quadratic: np.ndarray | None = None, label: str = "free-terminal"):
        self.quadratic = None if quadratic is None else np.asarray(quadratic, dtype=float)
        self.label = label
        self.analytic_tail = False

    @property
    def policy_ids(self) -> tuple:
        return ()

    def contains(self, x) -> bool:
        return True

    def terminal_cost(self, x) -> float:
        if self.quadratic is None:
            return 0.0
        v = np.asarray(x, dtype=float)
        return float(v @ self.quadratic @ v)


# ---------------------------------------------------------------------------
# Quadratic subproblem machinery


def _qp_obj(h, b, z) -> float:
    return 0.5 * float(z @ h @ z) + float(b @ z)


def _polish_box(h, b, lo, hi, z):
    """Exact solve on the inactive face; accepted only if it improves."""
    g = h @ z + b
    tol = 1e-10 * (1.0 + float(np.max(np.abs(np.concatenate([lo, hi])), initial=0.0)))
    at_lo = (z <= lo + tol) & (g > 0)
    at_hi = (z >= hi - tol) & (g < 0)
    active = at_lo | at_hi
    free = ~active
    if not free.any():
        return z
    cand = z.copy()
    cand[at_lo] = lo[at_lo]
    cand[at_hi] = hi[at_hi]
    rhs = -b[free]
    if active.any():
        rhs = rhs - h[np.ix_(free, active)] @ cand[active]
    try:
        cand[free] = np.linalg.lstsq(h[np.ix_(free, free)], rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return z
    np.clip(cand, lo, hi, out=cand)
    return cand if _qp_obj(h, b, cand) < _qp_obj(h, b, z) else z


def _box_qp(h, b, lo, hi, z0, max_iters):
    """Projected gradient with step 1/L, least-squares warm start, and
    periodic face polishing. Returns (z, converged, iterations)."""
    lip = max(float(np.linalg.eigvalsh(h)[-1]), 1e-9)
    z = np.clip(z0, lo, hi)
    try:
        z_ls = np.linalg.lstsq(h, -b, rcond=None)[0]
    except np.linalg.LinAlgError:
        z_ls = None
    if z_ls is not None:
        margin = 1e-12 * (1.0 + float(np.abs(z_ls).max(initial=0.0)))
        if np.all(z_ls > lo + margin) and np.all(z_ls < hi - margin):
            return z_ls, True, 1  # interior stationary point is the optimum
        cand = np.clip(z_ls, lo, hi)
        if _qp_obj(h, b, cand) <= _qp_obj(h, b, z):
            z = cand
    z = _polish_box(h, b, lo, hi, z)
    converged, it = False, 0
    inv_lip = 1.0 / lip
    for it in range(1, max_iters + 1):
        z_new = np.clip(z - inv_lip * (h @ z + b), lo, hi)
        if it % 16 == 0:
            z_new = _polish_box(h, b, lo, hi, z_new)
        disp = float(np.abs(z_new - z).max(initial=0.0))
        z = z_new
        if disp <= 1e-11 * (1.0 + float(np.abs(z).max(initial=0.0))):
            converged = True
            break
    return z, converged, it


def _ball_box_qp(h, b, lo, hi, radius, z0, max_iters):
    """Minimize over box AND ||z|| <= radius.

    The ball multiplier is found by bisection: z(lam) solves the box QP for
    h + 2*lam*I, and ||z(lam)|| decreases in lam. Returns the feasible-side
    solution, so the ball constraint holds at the result.
    """
    z, conv, iters = _box_qp(h, b, lo, hi, z0, max_iters)
    if float(np.linalg.norm(z)) <= radius:
        return z, conv, iters
    if radius <= 0.0:
        return np.clip(np.zeros_like(z), lo, hi), True, iters
    eye = np.eye(h.shape[0])
    lam_hi = 1.0
    while lam_hi < 1e16:
        z, conv, it = _box_qp(h + 2.0 * lam_hi * eye, b, lo, hi, z, max_iters)
        iters += it
        if float(np.linalg.norm(z)) <= radius:
            break
        lam_hi *= 8.0
    lam_lo = 0.0
    best = z
    for _ in range(64):
        if lam_hi - lam_lo <= 1e-13 * lam_hi:
            break
        lam = 0.5 * (lam_lo + lam_hi)
        z, conv, it = _box_qp(h + 2.0 * lam * eye, b, lo, hi, z, max_iters)
        iters += it
        norm = float(np.linalg.norm(z))
        if norm <= radius:
            lam_hi, best = lam, z
            if norm >= radius * (1.0 - 1e-12):
                break  # multiplier tight: the ball is active to spec
        else:
            lam_lo = lam
    return best, conv, iters


@dataclass
class _Assembled:
    phis: list       # state offsets per step
    gammas: list     # state response to the stacked control vector
    h0: np.ndarray   # running-cost Hessian (terminal excluded)
    b0: np.ndarray
    c0: float        # constant part of the running cost
    reach: np.ndarray  # componentwise bound on |x_l - phi_l|
    row_norms: np.ndarray  # 2-norms of the terminal response rows


def _assemble(pl, x0: np.ndarray, ell: int, sigma, lo_full, hi_full) -> _Assembled:
    d = x0.size
    m = pl.modes[0].b.shape[1]
    width = ell * m
    phi = x0.astype(float)
    gam = np.zeros((d, width))
    phis, gammas = [phi], [gam]
    for k in range(ell):
        mode = pl.modes[sigma[k]]
        nxt = mode.a @ gammas[-1]
        nxt[:, k * m:(k + 1) * m] += mode.b
        gammas.append(nxt)
        phi = mode.a @ phi + mode.c
        phis.append(phi)
    rblk = np.kron(np.eye(ell), pl.r)
    h0 = 2.0 * rblk
    b0 = np.zeros(width)
    c0 = 0.0
    for k in range(ell):
        gq = gammas[k].T @ pl.q
        h0 += 2.0 * gq @ gammas[k]
        b0 += 2.0 * gq @ phis[k]
        c0 += float(phis[k] @ pl.q @ phis[k])
    u_abs = np.maximum(np.abs(lo_full), np.abs(hi_full))
    reach = np.abs(gammas[ell]) @ u_abs
    row_norms = np.linalg.norm(gammas[ell], axis=1)
    return _Assembled(phis, gammas, h0, b0, c0, reach, row_norms)


# ---------------------------------------------------------------------------
# Targets


@dataclass(frozen=True)
class _Target:
    kind: str                      # "free" | "sample" | "budget"
    state: np.ndarray | None = None
    value: float = 0.0
    quad: np.ndarray | None = None
    ball_radius: float | None = None
    sample_id: object = None


def _targets_for(sset, x, eps_term: float, usage_scale: float) -> list:
    if isinstance(sset, (AnalyticSampleSet, FreeTerminal)):
        if isinstance(sset, AnalyticSampleSet) and sset.quadratic is None:
            raise ValueError("analytic sample set needs a quadratic evaluator for shooting")
        return [_Target(kind="free", quad=sset.quadratic)]
    if isinstance(sset, ExplicitSampleSet):
        return [
            _Target(kind="sample", state=np.asarray(e.state, dtype=float),
                    value=e.value, sample_id=state_key(e.state))
            for e in sset.entries()
        ]
    if isinstance(sset, BudgetSampleSet):
        if not isinstance(x, AugmentedState):
            raise ValueError("budget sample set requires an augmented state")
        out = []
        for k in range(len(sset.seed.states)):
            head = float(x.info) - sset.tail_usages[k]
            if head < 0.0:
                continue  # not enough budget left to finish from this sample
            out.append(_Target(
                kind="budget",
                state=np.asarray(sset.seed.states[k], dtype=float),
                value=sset.seed.tail_costs[k],
                ball_radius=float(np.sqrt(head / usage_scale)),
                sample_id=k,
            ))
        return out
    raise TypeError(f"unsupported terminal set {type(sset).__name__} for shooting")


def _usage_scale(budget_spec) -> float:
    if budget_spec is None or budget_spec.usage_quad is None:
        return 1.0
    uq = budget_spec.usage_quad
    scale = float(uq[0, 0])
    if not np.allclose(uq, scale * np.eye(uq.shape[0])):
        raise ValueError("shooting supports usage matrices c*I only")
    return scale


# ---------------------------------------------------------------------------
# Exact evaluation of a concrete control plan


def _plan_value(problem: ProblemDef, sset, x, controls, target: _Target | None,
                eps_term: float):
    """Simulate the true (extended-cost) problem and price the plan exactly.

    Returns (value, states, mismatch, state_box_violations).
    """
    states = [x]
    for u in controls:
        states.append(problem.dynamics(states[-1], u))
    terminal = states[-1]
    base_terminal = terminal.base if isinstance(terminal, AugmentedState) else terminal

    mismatch = None
    if target is not None and target.state is not None:
        mismatch = float(np.max(np.abs(np.asarray(base_terminal, dtype=float) - target.state),
                                initial=0.0))

    if target is None or target.kind == "free":
        tval = sset.terminal_cost(terminal)
    elif target.kind == "sample":
        tval = target.value if mismatch is not None and mismatch <= eps_term else INF
    else:  # budget: base state must match and the remaining budget must cover the tail
        k = target.sample_id
        enough = float(terminal.info) >= sset.tail_usages[k]
        tval = target.value if (mismatch is not None and mismatch <= eps_term and enough) else INF

    violations = []
    total = tval
    pl = _problem_pl(problem)
    for k in range(len(controls) - 1, -1, -1):
        g = problem.stage_cost(states[k], controls[k])
        if g == INF and pl is not None and pl.state_box is not None:
            xb = states[k].base if isinstance(states[k], AugmentedState) else states[k]
            lo, hi = pl.state_box
            over = np.maximum(xb - hi, 0.0) + np.maximum(lo - xb, 0.0)
            if float(np.max(over, initial=0.0)) > pl.box_tol:
                violations.append((k, over))
        total = g + total
    return total, states, mismatch, violations


def _problem_pl(problem: ProblemDef):
    if problem.pl is not None:
        return problem.pl
    if problem.budget is not None:
        return problem.budget.base.pl
    return None


# ---------------------------------------------------------------------------
# Main entry


def solve_continuous(problem: ProblemDef, sset, x, cfg: SolverConfig,
                     seeds=(), base_policy: Policy | None = None) -> LookaheadSolution:
    """Solve the l-step lookahead with a shooting backend.

    seeds are concrete control plans (tuples of control vectors) evaluated
    exactly and entered into the candidate pool; the recorded base policy,
    when given, contributes its own rollout plan. These anchors keep the
    returned value at or below every supplied plan, which is what the
    stepwise-descent guarantee needs from an approximate solver.
    """
    pl = _problem_pl(problem)
    if pl is None:
        raise ValueError("shooting backends need piecewise-linear problem structure")
    budget_spec = problem.budget.spec if problem.budget is not None else None
    base_x = np.asarray(x.base if isinstance(x, AugmentedState) else x, dtype=float)
    ell = cfg.ell

    base_problem = problem.budget.base if problem.budget is not None else problem
    box = base_problem.control_set(base_x)
    if not isinstance(box, BoxControls):
        raise ValueError("shooting backends need box control sets")
    m = box.lo.size
    lo_full = np.tile(box.lo, ell)
    hi_full = np.tile(box.hi, ell)

    n_modes = len(pl.modes)
    usage_scale = _usage_scale(budget_spec)
    targets = _targets_for(sset, x, cfg.eps_term, usage_scale)

    seed_plans = [tuple(s) for s in seeds if len(tuple(s)) == ell]
    if base_policy is not None:
        plan = _base_plan(problem, base_policy, x, ell)
        if plan is not None:
            seed_plans.append(plan)
    seed_by_target = _index_seeds(problem, x, seed_plans, targets, eps_term=cfg.eps_term)

    candidates = [_evaluate_seed(problem, sset, x, plan, targets, cfg.eps_term)
                  for plan in seed_plans]

    # mode sequences: full enumeration while it stays small, otherwise a
    # refinement loop that re-solves along the best plan's realized modes
    if cfg.backend == "shooting":
        if n_modes != 1:
            raise ValueError("shooting backend expects a single dynamics mode; use hybrid")
        sequences = [(0,) * ell]
        exhaustive = True
    else:
        first = pl.mode_of(base_x)
        exhaustive = n_modes ** (ell - 1) <= cfg.mode_cap
        if exhaustive:
            sequences = [(first,) + rest
                         for rest in itertools.product(range(n_modes), repeat=ell - 1)]
        else:
            sequences = [_realized_modes(pl, base_x, ((np.zeros(m),) * ell))]
            for plan in seed_plans:
                sig = _realized_modes(pl, base_x, plan)
                if sig not in sequences:
                    sequences.append(sig)

    assembled = {}

    def run_batch(sigs, bound):
        jobs = []
        for sig_pos, sig in enumerate(sigs):
            if sig not in assembled:
                assembled[sig] = _assemble(pl, base_x, ell, sig, lo_full, hi_full)
            for t_idx, target in enumerate(targets):
                if target.kind != "free":
                    if target.value >= bound:
                        continue  # stage costs are nonnegative: cannot win
                    gap = np.abs(target.state - assembled[sig].phis[ell])
                    reach = assembled[sig].reach
                    if target.ball_radius is not None:
                        # Cauchy-Schwarz: a depleted energy ball shrinks the
                        # reachable tube far below the control-box bound
                        reach = np.minimum(
                            reach, assembled[sig].row_norms * target.ball_radius)
                    if np.any(gap > reach + cfg.eps_term + 1e-12):
                        continue  # provably unreachable under box and energy ball
                jobs.append((sig_pos, sig, t_idx))
        # cheap tails first so the running bound can retire the rest early
        jobs.sort(key=lambda j: (targets[j[2]].value, j[2], j[0]))

        exact_pred = n_modes == 1
        results = []
        cur_bound = bound
        chunk = 16  # fixed so the outcome does not depend on the worker count
        for start in range(0, len(jobs), chunk):
            batch = [j for j in jobs[start:start + chunk]
                     if targets[j[2]].kind == "free"
                     or targets[j[2]].value < cur_bound]
            if not batch:
                continue

            def run_job(job, bnd=INF):
                _, sig, t_idx = job
                return _solve_candidate(problem, sset, x, assembled[sig],
                                        targets[t_idx], lo_full, hi_full, m, cfg,
                                        seed_by_target.get(t_idx),
                                        prune_bound=bnd, exact_prediction=exact_pred)

            bnd = cur_bound
            if cfg.workers > 1 and len(batch) > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    out = list(pool.map(lambda j: run_job(j, bnd), batch))
            else:
                out = [run_job(j, bnd) for j in batch]
            results.extend(out)
            for value, _, _ in out:
                if value < cur_bound:
                    cur_bound = value
        return results

    def reduce_best():
        best, best_idx, any_conv = None, -1, False
        for idx, cand in enumerate(candidates):
            if cand is None:
                continue
            value, controls, diag = cand
            any_conv = any_conv or diag.get("converged", True)
            if best is None or (value, idx) < (best[0], best_idx):
                best, best_idx = (value, controls, diag), idx
        return best, any_conv

    seed_bound = min((c[0] for c in candidates if c is not None), default=INF)
    candidates.extend(run_batch(sequences, seed_bound))
    best, any_converged = reduce_best()

    if not exhaustive:
        tried = set(sequences)
        for _ in range(4):
            plan = _refinement_plan(candidates, best)
            if plan is None:
                break
            sig = _realized_modes(pl, base_x, plan)
            if sig in tried:
                break
            tried.add(sig)
            candidates.extend(run_batch([sig], best[0] if best else INF))
            best, any_converged = reduce_best()

    if best is None or best[0] == INF:
        if not any_converged and candidates:
            raise SolverFailureError("no shooting subproblem converged",
                                     incumbent=best)
        return LookaheadSolution(controls=(), terminal_state=None, value=INF,
                                 diagnostics={"candidates": len(candidates)})

    value, controls, diag = best
    states = [x]
    for u in controls:
        states.append(problem.dynamics(states[-1], u))
    diag = dict(diag)
    diag["candidates"] = len(candidates)
    return LookaheadSolution(
        controls=tuple(controls),
        terminal_state=states[-1],
        value=value,
        terminal_sample_id=diag.get("sample_id"),
        diagnostics=diag,
    )


def _refinement_plan(candidates, best):
    """The plan whose realized modes the refinement loop should try next:
    the incumbent when finite, else the near-miss with the smallest
    terminal mismatch."""
    if best is not None and best[0] < INF:
        return best[1]
    near = None
    for cand in candidates:
        if cand is None or not cand[1]:
            continue
        mis = (cand[2] or {}).get("mismatch")
        if mis is None:
            continue
        if near is None or mis < near[0]:
            near = (mis, cand[1])
    return near[1] if near is not None else None


def _realized_modes(pl, base_x, controls) -> tuple:
    """The mode sequence the true dynamics picks along a control plan."""
    sig = []
    cur = np.asarray(base_x, dtype=float)
    for u in controls:
        k = pl.mode_of(cur)
        sig.append(k)
        mode = pl.modes[k]
        cur = mode.a @ cur + mode.b @ np.asarray(u, dtype=float)
    return tuple(sig)


def _base_plan(problem, base_policy, x, ell):
    plan = []
    cur = x
    for _ in range(ell):
        u = base_policy.action(base_view(cur))
        if problem.stage_cost(cur, u) == INF:
            return None
        plan.append(np.asarray(u, dtype=float))
        cur = problem.dynamics(cur, u)
    return tuple(plan)


def _index_seeds(problem, x, seed_plans, targets, eps_term):
    """Map target index -> stacked warm-start vector from a seed plan."""
    out = {}
    for plan in seed_plans:
        if not plan:
            continue
        z = np.concatenate([np.asarray(u, dtype=float).ravel() for u in plan])
        cur = x
        for u in plan:
            cur = problem.dynamics(cur, u)
        base_term = cur.base if isinstance(cur, AugmentedState) else cur
        for t_idx, t in enumerate(targets):
            if t.state is None:
                out.setdefault(t_idx, z)
            else:
                gap = float(np.max(np.abs(np.asarray(base_term, dtype=float) - t.state),
                                   initial=0.0))
                if gap <= max(eps_term * 10.0, 1e-3):
                    out.setdefault(t_idx, z)
    return out


def _solve_candidate(problem, sset, x, asm: _Assembled, target: _Target,
                     lo_full, hi_full, m, cfg: SolverConfig, warm,
                     prune_bound=INF, exact_prediction=False):
    ell = len(asm.gammas) - 1
    g_l = asm.gammas[ell]
    phi_l = asm.phis[ell]
    z = warm.copy() if warm is not None else np.zeros(lo_full.size)
    iters_total = 0
    converged = True
    state_pen_h = None
    state_pen_b = None

    for _state_round in range(4):
        if target.kind == "free":
            quad = target.quad
            if quad is None:
                h = asm.h0.copy()
                b = asm.b0.copy()
            else:
                gq = g_l.T @ quad
                h = asm.h0 + 2.0 * gq @ g_l
                b = asm.b0 + 2.0 * gq @ phi_l
            if state_pen_h is not None:
                h = h + state_pen_h
                b = b + state_pen_b
            z, converged, it = _box_qp(h, b, lo_full, hi_full, z, cfg.max_iters)
            iters_total += it
            mismatch_pred = 0.0
            penalty = 0.0
        else:
            penalty = cfg.penalty_init
            pen_offset = float(np.dot(phi_l - target.state, phi_l - target.state))
            while True:
                gq = g_l.T
                h = asm.h0 + 2.0 * penalty * gq @ g_l
                b = asm.b0 + 2.0 * penalty * gq @ (phi_l - target.state)
                if state_pen_h is not None:
                    h = h + state_pen_h
                    b = b + state_pen_b
                if target.kind == "budget":
                    z, converged, it = _ball_box_qp(h, b, lo_full, hi_full,
                                                    target.ball_radius, z, cfg.max_iters)
                else:
                    z, converged, it = _box_qp(h, b, lo_full, hi_full, z, cfg.max_iters)
                iters_total += it
                mismatch_pred = float(np.max(np.abs(phi_l + g_l @ z - target.state),
                                             initial=0.0))
                if mismatch_pred <= 0.9 * cfg.eps_term or penalty >= cfg.penalty_max:
                    break
                if exact_prediction and converged and state_pen_h is None \
                        and prune_bound < INF:
                    # the relaxed objective under-estimates the exact-constraint
                    # running cost, so a dominated target can be abandoned early
                    relaxed = _qp_obj(h, b, z) + asm.c0 + penalty * pen_offset
                    lower = relaxed + target.value
                    if lower >= prune_bound + 1e-7 * (1.0 + abs(prune_bound)):
                        diag = {"mismatch": None, "predicted_mismatch": mismatch_pred,
                                "penalty": penalty, "iterations": iters_total,
                                "converged": True, "sample_id": target.sample_id,
                                "mode_sequence": None, "pruned": True}
                        return INF, (), diag
                jump = penalty * mismatch_pred / max(0.45 * cfg.eps_term, 1e-300)
                penalty = min(cfg.penalty_max,
                              max(penalty * cfg.penalty_growth, jump))

        controls = tuple(z[k * m:(k + 1) * m].copy() for k in range(ell))
        value, states, mismatch, violations = _plan_value(
            problem, sset, x, controls, target, cfg.eps_term)

        if target.kind == "budget" and value == INF and mismatch is not None \
                and mismatch <= cfg.eps_term:
            # exact budget repair: shrink the plan until the accounting holds
            for _ in range(3):
                z = z * (1.0 - 1e-12)
                controls = tuple(z[k * m:(k + 1) * m].copy() for k in range(ell))
                value, states, mismatch, violations = _plan_value(
                    problem, sset, x, controls, target, cfg.eps_term)
                if value < INF:
                    break

        if value < INF or not violations:
            break
        # add quadratic penalties on the violated state-box rows and retry
        weight = 1e4 * (100.0 ** _state_round)
        if state_pen_h is None:
            state_pen_h = np.zeros_like(asm.h0)
            state_pen_b = np.zeros(asm.b0.size)
        lo_box, hi_box = _problem_pl(problem).state_box
        for k, over in violations:
            for i in np.nonzero(over > 0.0)[0]:
                row = asm.gammas[k][i]
                xb = states[k].base if isinstance(states[k], AugmentedState) else states[k]
                bound = hi_box[i] if xb[i] > hi_box[i] else lo_box[i]
                state_pen_h += 2.0 * weight * np.outer(row, row)
                state_pen_b += 2.0 * weight * (asm.phis[k][i] - bound) * row

    diag = {
        "mismatch": mismatch,
        "predicted_mismatch": mismatch_pred,
        "penalty": penalty,
        "iterations": iters_total,
        "converged": converged,
        "sample_id": target.sample_id,
        "mode_sequence": None,
    }
    return value, controls, diag


def _evaluate_seed(problem, sset, x, plan, targets, eps_term):
    """Price a concrete plan exactly against the best-matching target."""
    if not plan:
        return None
    best = None
    if any(t.kind == "free" for t in targets):
        value, _, mismatch, _ = _plan_value(problem, sset, x, plan, None, eps_term)
        best = (value, plan, {"mismatch": mismatch, "converged": True,
                              "sample_id": None, "seed": True})
    else:
        for t in targets:
            value, _, mismatch, _ = _plan_value(problem, sset, x, plan, t, eps_term)
            if best is None or value < best[0]:
                best = (value, plan, {"mismatch": mismatch, "converged": True,
                                      "sample_id": t.sample_id, "seed": True})
    return best
