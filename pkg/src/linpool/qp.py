"""Dense strictly convex quadratic programs.

All problems have the form::

    minimize    1/2 x' B x - c' x
    subject to  lower <= x <= upper
                sum(x) == total      (optional)
                sum(x) <= total      (optional, alternative to the equality)

:func:`solve_small` targets the tiny coefficient problems (a handful of
variables) and is exact: it enumerates active sets up to 16 variables and
falls back to a primal active-set method above that. :func:`solve_box_eq`
targets portfolio-sized problems with a sum-to-one constraint.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, InfeasibleError, NotStrictlyConvexError, ShapeError

log = logging.getLogger(__name__)

ENUMERATION_MAX_DIM = 16
SMALL_MAX_DIM = 24
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Problem data; see the module docstring for the form.

    ``lower`` defaults to zeros (nonnegativity), ``upper`` to ``+inf``. At most
    one of ``sum_eq`` and ``sum_le`` may be given.
    """

    B: np.ndarray
    c: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sum_eq: float | None = None
    sum_le: float | None = None

    def __post_init__(self) -> None:
        B = np.asarray(self.B, dtype=float)
        c = np.asarray(self.c, dtype=float).ravel()
        d = c.size
        if B.shape != (d, d):
            raise ShapeError(f"B has shape {B.shape}, expected ({d}, {d})")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(c))):
            raise ShapeError("B and c must be finite")
        lower = np.zeros(d) if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), (d,)).copy()
        upper = np.full(d, np.inf) if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), (d,)).copy()
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ShapeError("bounds must not be NaN")
        if self.sum_eq is not None and self.sum_le is not None:
            raise ShapeError("give at most one of sum_eq and sum_le")
        object.__setattr__(self, "B", (B + B.T) / 2)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.B @ x - self.c @ x)

    def check_feasible(self) -> None:
        lo, up = self.lower, self.upper
        if np.any(lo > up):
            i = int(np.argmax(lo > up))
            raise InfeasibleError(f"lower bound {lo[i]} exceeds upper bound {up[i]} for variable {i}")
        if self.sum_eq is not None:
            if lo.sum() > self.sum_eq or up.sum() < self.sum_eq:
                raise InfeasibleError(
                    f"sum(x) = {self.sum_eq} is incompatible with bounds (sum of lower {lo.sum():.6g}, "
                    f"sum of upper {up.sum():.6g})"
                )
        if self.sum_le is not None and lo.sum() > self.sum_le:
            raise InfeasibleError(f"sum(x) <= {self.sum_le} is incompatible with sum of lower bounds {lo.sum():.6g}")


@dataclass(frozen=True, eq=False)
class QpResult:
    """Solution and diagnostics.

    ``at_lower``/``at_upper`` flag bounds in the final active set and
    ``sum_active`` whether the sum constraint binds. Multipliers follow the
    convention ``B x - c - lam + mu + nu 1 = 0`` with ``lam, mu >= 0``.
    ``damped`` marks a solve on the Tikhonov-damped copy of ``B``.
    """

    x: np.ndarray
    objective: float
    at_lower: np.ndarray
    at_upper: np.ndarray
    sum_active: bool
    lam: np.ndarray
    mu: np.ndarray
    nu: float
    method: str
    iterations: int
    damped: bool = False
    kkt_residual: float = field(default=0.0)


def _conditioned(B: np.ndarray) -> tuple[np.ndarray, bool]:
    """Validate positive definiteness; damp if the condition number is extreme."""
    w = np.linalg.eigvalsh(B)
    if not w[0] > 0:
        raise NotStrictlyConvexError(f"quadratic term is not positive definite (smallest eigenvalue {w[0]:.3g})")
    if w[-1] / w[0] <= COND_LIMIT:
        return B, False
    d = B.shape[0]
    Bd = B + 1e-12 * np.trace(B) / d * np.eye(d)
    log.warning("ill-conditioned QP (cond=%.3g); solving a damped copy", w[-1] / w[0])
    return Bd, True


def _tolerance(B: np.ndarray, c: np.ndarray, x: np.ndarray | None = None) -> float:
    scale = max(np.abs(B).max(), np.abs(c).max(), 1e-300)
    if x is not None:
        scale = max(scale, np.abs(B @ x).max())
    return 1e-9 * scale


def _kkt_residual(prob: QpProblem, B: np.ndarray, x: np.ndarray) -> float:
    """Norm of the projected-gradient step, zero exactly at the optimum."""
    g = B @ x - prob.c
    L = max(np.linalg.norm(B, 2), 1e-300)
    y = _project(prob, x - g / L)
    return float(L * np.linalg.norm(x - y))


# -- exact active-set enumeration ------------------------------------------


def _solve_face(B, c, fixed_idx, fixed_val, free_idx, total):
    """Minimize over the face where ``fixed_idx`` are pinned; returns (x, nu) or None."""
    d = c.size
    x = np.zeros(d)
    x[fixed_idx] = fixed_val
    nf = free_idx.size
    rhs = c[free_idx] - B[np.ix_(free_idx, fixed_idx)] @ fixed_val
    if total is None:
        if nf:
            try:
                x[free_idx] = np.linalg.solve(B[np.ix_(free_idx, free_idx)], rhs)
            except np.linalg.LinAlgError:
                return None
        return x, 0.0
    if nf == 0:
        return None
    K = np.zeros((nf + 1, nf + 1))
    K[:nf, :nf] = B[np.ix_(free_idx, free_idx)]
    K[:nf, nf] = K[nf, :nf] = 1.0
    r = np.append(rhs, total - fixed_val.sum())
    try:
        sol = np.linalg.solve(K, r)
    except np.linalg.LinAlgError:
        return None
    x[free_idx] = sol[:nf]
    return x, float(sol[nf])


def _enumerate(prob: QpProblem, B: np.ndarray):
    """First active set (by size) whose face minimizer satisfies KKT.

    Strict convexity makes the KKT point unique, so the first hit is the
    global solution.
    """
    c, lo, up = prob.c, prob.lower, prob.upper
    d = c.size
    cons = [(i, 0) for i in range(d) if np.isfinite(lo[i])]
    cons += [(i, 1) for i in range(d) if np.isfinite(up[i]) and up[i] > lo[i]]
    eq_fixed = [i for i in range(d) if lo[i] == up[i]]
    sum_modes = [False]
    if prob.sum_eq is not None:
        sum_modes = [True]
    elif prob.sum_le is not None:
        sum_modes = [False, True]
    total_val = prob.sum_eq if prob.sum_eq is not None else prob.sum_le
    # gradient signs are judged on the scale of B and c, bounds on the scale of x
    tol = _tolerance(B, c)
    finite = np.concatenate([lo[np.isfinite(lo)], up[np.isfinite(up)], [abs(total_val or 0.0)]])
    x_scale = max(1.0, np.abs(finite).max())
    tried = 0
    cons = [k for k in cons if k[0] not in eq_fixed]
    for size in range(len(cons) + 1):
        for combo in itertools.combinations(cons, size):
            vars_ = [i for i, _ in combo]
            if len(set(vars_)) != len(vars_):
                continue
            fixed = dict(combo)
            for i in eq_fixed:
                fixed[i] = 0
            fixed_idx = np.array(sorted(fixed), dtype=int)
            fixed_val = np.array([lo[i] if fixed[i] == 0 else up[i] for i in fixed_idx])
            free_idx = np.array([i for i in range(d) if i not in fixed], dtype=int)
            for sum_on in sum_modes:
                tried += 1
                out = _solve_face(B, c, fixed_idx, fixed_val, free_idx, total_val if sum_on else None)
                if out is None:
                    continue
                x, nu = out
                ptol = 1e-12 * max(x_scale, np.abs(x).max())
                if np.any(x[free_idx] < lo[free_idx] - ptol) or np.any(x[free_idx] > up[free_idx] + ptol):
                    continue
                if not sum_on and prob.sum_le is not None and x.sum() > prob.sum_le + ptol:
                    continue
                if sum_on and prob.sum_le is not None and nu < -tol:
                    continue
                g = B @ x - c + nu
                at_lo = np.array([i in fixed and fixed[i] == 0 for i in range(d)])
                at_up = np.array([i in fixed and fixed[i] == 1 and i not in eq_fixed for i in range(d)])
                if np.any(g[at_lo & ~np.isin(np.arange(d), eq_fixed)] < -tol) or np.any(g[at_up] > tol):
                    continue
                lam = np.where(at_lo, np.maximum(g, 0), 0.0)
                mu = np.where(at_up, np.maximum(-g, 0), 0.0)
                return np.clip(x, lo, up), at_lo, at_up, sum_on, lam, mu, nu, tried
    return None


# -- primal active-set method ----------------------------------------------


def _primal_active_set(prob: QpProblem, B: np.ndarray, x0: np.ndarray, max_iter: int | None = None):
    """Primal active-set iterations from a feasible start.

    The working set holds pinned bounds (``state`` -1 lower, +1 upper) and,
    for ``sum_le``, whether the sum constraint is enforced.
    """
    c, lo, up = prob.c, prob.lower, prob.upper
    d = c.size
    eq = prob.sum_eq is not None
    total = prob.sum_eq if eq else prob.sum_le
    x = x0.copy()
    tol = _tolerance(B, c, x)
    bound_tol = 1e-12 * max(1.0, np.abs(x).max())
    state = np.zeros(d, dtype=int)
    state[x <= lo + bound_tol] = -1
    state[(x >= up - bound_tol) & (state == 0)] = 1
    x[state == -1] = lo[state == -1]
    x[state == 1] = up[state == 1]
    sum_on = eq or (prob.sum_le is not None and x.sum() >= total - bound_tol)
    if sum_on and not np.any(state == 0):
        # keep at least one free variable so the sum multiplier is determined
        state[int(np.argmax(up - lo))] = 0
    max_iter = max_iter or 50 * (d + 1)
    at_face_min = False
    for it in range(1, max_iter + 1):
        free = np.flatnonzero(state == 0)
        g = B @ x - c
        nf = free.size
        if sum_on:
            K = np.zeros((nf + 1, nf + 1))
            K[:nf, :nf] = B[np.ix_(free, free)]
            K[:nf, nf] = K[nf, :nf] = 1.0
            sol = np.linalg.solve(K, np.append(-g[free], 0.0))
            step_f, nu = sol[:nf], float(sol[nf])
        else:
            step_f = np.linalg.solve(B[np.ix_(free, free)], -g[free]) if nf else np.zeros(0)
            nu = 0.0
        step = np.zeros(d)
        step[free] = step_f
        # after a full step x already minimizes the face; re-solving only returns rounding noise
        if at_face_min or np.linalg.norm(step) <= 1e-14 * max(1.0, np.linalg.norm(x)):
            at_face_min = False
            # multipliers of the working set at the face minimizer
            gn = g + nu
            lam = np.where(state == -1, gn, np.inf)
            mu = np.where(state == 1, -gn, np.inf)
            candidates = [(lam.min(), "lower"), (mu.min(), "upper")]
            if sum_on and not eq:
                candidates.append((nu, "sum"))
            worst, kind = min(candidates, key=lambda t: t[0])
            if worst >= -tol:
                at_lo, at_up = state == -1, state == 1
                return (
                    x, at_lo, at_up, sum_on,
                    np.where(at_lo, np.maximum(gn, 0), 0.0),
                    np.where(at_up, np.maximum(-gn, 0), 0.0),
                    nu, it,
                )
            if kind == "lower":
                state[int(np.argmin(lam))] = 0
            elif kind == "upper":
                state[int(np.argmin(mu))] = 0
            else:
                sum_on = False
            continue
        alpha, block = 1.0, None
        dec = (step < 0) & (state == 0) & np.isfinite(lo)
        if dec.any():
            ratios = (lo[dec] - x[dec]) / step[dec]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, block = max(ratios[k], 0.0), (np.flatnonzero(dec)[k], -1)
        inc = (step > 0) & (state == 0) & np.isfinite(up)
        if inc.any():
            ratios = (up[inc] - x[inc]) / step[inc]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha, block = max(ratios[k], 0.0), (np.flatnonzero(inc)[k], 1)
        if not sum_on and prob.sum_le is not None and step.sum() > 0:
            r = (total - x.sum()) / step.sum()
            if r < alpha:
                alpha, block = max(r, 0.0), ("sum", 0)
        x = x + alpha * step
        at_face_min = block is None
        if block is not None:
            if block[0] == "sum":
                sum_on = True
            else:
                i, side = block
                state[i] = side
                x[i] = lo[i] if side == -1 else up[i]
                if sum_on and not np.any(state == 0):
                    state[i] = 0
    raise ConditioningError(f"primal active-set method did not converge in {max_iter} iterations")


def _feasible_start(prob: QpProblem, y: np.ndarray) -> np.ndarray:
    return _project(prob, y)


def solve_small(problem: QpProblem) -> QpResult:
    """Exact solution of a small strictly convex QP.

    Dimensions up to 16 are solved by active-set enumeration (the first face
    whose minimizer passes the KKT test is the unique optimum); up to 24 by a
    primal active-set method.

    Raises
    ------
    NotStrictlyConvexError
        ``B`` is not positive definite.
    InfeasibleError
        The constraint set is empty.
    """
    d = problem.dim
    if d > SMALL_MAX_DIM:
        raise ShapeError(f"solve_small handles at most {SMALL_MAX_DIM} variables, got {d}")
    problem.check_feasible()
    B, damped = _conditioned(problem.B)
    out = None
    method = "enumeration"
    if d <= ENUMERATION_MAX_DIM:
        out = _enumerate(problem, B)
    if out is None:
        method = "active-set"
        x0 = _feasible_start(problem, np.linalg.solve(B, problem.c))
        out = _primal_active_set(problem, B, x0)
    x, at_lo, at_up, sum_on, lam, mu, nu, iters = out
    return QpResult(
        x=x,
        objective=problem.objective(x),
        at_lower=at_lo,
        at_upper=at_up,
        sum_active=bool(sum_on),
        lam=lam,
        mu=mu,
        nu=float(nu),
        method=method,
        iterations=int(iters),
        damped=damped,
        kkt_residual=_kkt_residual(problem, B, x),
    )


# -- projection and the box + equality solver -------------------------------


def project_box_sum(y: np.ndarray, lower: np.ndarray, upper: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``{lower <= x <= upper, sum(x) = total}``.

    Finds the shift ``t`` with ``sum(clip(y - t, lower, upper)) = total`` by
    sweeping the sorted breakpoints of this piecewise-linear, nonincreasing
    function.
    """
    y = np.asarray(y, dtype=float)
    lo = np.broadcast_to(lower, y.shape)
    up = np.broadcast_to(upper, y.shape)
    fin_up, fin_lo = np.isfinite(up), np.isfinite(lo)
    # state as t -> -inf: variables with finite upper bound sit there, the rest are free
    A0 = up[fin_up].sum() + y[~fin_up].sum()
    n0 = int((~fin_up).sum())
    t_ev = np.concatenate([(y - up)[fin_up], (y - lo)[fin_lo]])
    dA = np.concatenate([(y - up)[fin_up], (lo - y)[fin_lo]])
    dn = np.concatenate([np.ones(int(fin_up.sum())), -np.ones(int(fin_lo.sum()))])
    if t_ev.size == 0:
        return y - (y.sum() - total) / y.size
    order = np.argsort(t_ev, kind="stable")
    t_ev, dA, dn = t_ev[order], dA[order], dn[order]
    A = A0 + np.cumsum(dA)
    n = n0 + np.cumsum(dn)
    phi = A - n * t_ev
    hit = np.flatnonzero(phi <= total)
    if hit.size == 0:
        A_seg, n_seg, t_ref = A[-1], n[-1], t_ev[-1]
    else:
        k = hit[0]
        if k == 0:
            A_seg, n_seg, t_ref = A0, n0, t_ev[0]
        else:
            A_seg, n_seg, t_ref = A[k - 1], n[k - 1], t_ev[k]
    if n_seg > 0:
        t = (A_seg - total) / n_seg
    elif np.isclose(A_seg, total, rtol=1e-12, atol=1e-14):
        t = t_ref
    else:
        raise InfeasibleError(f"sum(x) = {total} unattainable within the bounds")
    return np.clip(y - t, lo, up)


def _project(prob: QpProblem, y: np.ndarray) -> np.ndarray:
    lo, up = prob.lower, prob.upper
    if prob.sum_eq is not None:
        return project_box_sum(y, lo, up, prob.sum_eq)
    x = np.clip(y, lo, up)
    if prob.sum_le is not None and x.sum() > prob.sum_le:
        return project_box_sum(y, lo, up, prob.sum_le)
    return x


def solve_box_eq(
    problem: QpProblem,
    tol: float = 1e-9,
    max_iter: int = 20000,
    x0: np.ndarray | None = None,
) -> QpResult:
    """Box- and sum-constrained QP for portfolio-sized problems.

    Runs accelerated projected gradient (FISTA with adaptive restart, step
    ``1/L``) until the projected-gradient residual falls below
    ``tol * scale``, then finishes with primal active-set iterations from
    that point so the returned solution satisfies the KKT conditions to
    rounding accuracy.
    """
    if problem.sum_eq is None:
        raise ShapeError("solve_box_eq needs the equality constraint sum(x) = total")
    problem.check_feasible()
    B, damped = _conditioned(problem.B)
    c = problem.c
    L = float(np.linalg.eigvalsh(B)[-1])
    d = c.size
    x = _project(problem, np.full(d, problem.sum_eq / d) if x0 is None else x0)
    y, t = x.copy(), 1.0
    f_old = problem.objective(x)
    scale = max(np.abs(c).max(), L * max(np.abs(x).max(), 1e-300))
    it = 0
    restarted = False
    for it in range(1, max_iter + 1):
        x_new = _project(problem, y - (B @ y - c) / L)
        f_new = 0.5 * x_new @ B @ x_new - c @ x_new
        if f_new > f_old:
            if restarted:
                # a plain gradient step no longer decreases f: rounding floor
                break
            # adaptive restart: drop momentum
            y, t, restarted = x.copy(), 1.0, True
            continue
        restarted = False
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t, f_old = x_new, t_new, f_new
        res = L * np.linalg.norm(x - _project(problem, x - (B @ x - c) / L))
        if res <= tol * scale:
            break
    x, at_lo, at_up, sum_on, lam, mu, nu, polish = _primal_active_set(problem, B, x)
    return QpResult(
        x=x,
        objective=problem.objective(x),
        at_lower=at_lo,
        at_upper=at_up,
        sum_active=True,
        lam=lam,
        mu=mu,
        nu=float(nu),
        method="fista+active-set",
        iterations=it + polish,
        damped=damped,
        kkt_residual=_kkt_residual(problem, B, x),
    )
