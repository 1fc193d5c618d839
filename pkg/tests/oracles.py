"""Reference implementations used only by the tests.

They share no code with the package: brute-force enumeration of every face
of the feasible set for small QPs, and plain projected gradient with a
bisection projection for larger ones.
"""

import itertools

import numpy as np


def brute_force_qp(B, c, lower, upper, sum_eq=None, sum_le=None, tol=1e-10):
    """Minimum of 1/2 x'Bx - c'x over all face minimizers that are feasible.

    Every variable is pinned at its lower bound, its (finite) upper bound, or
    left free; the sum constraint is either active or (for ``sum_le``)
    inactive. For a strictly convex problem the best feasible face minimizer
    is the global optimum.
    """
    B = np.asarray(B, float)
    c = np.asarray(c, float)
    d = c.size
    states = [("L", "U", "F") if np.isfinite(upper[i]) else ("L", "F") for i in range(d)]
    sum_modes = [True] if sum_eq is not None else ([True, False] if sum_le is not None else [False])
    total = sum_eq if sum_eq is not None else sum_le
    best_val, best_x = np.inf, None
    for combo in itertools.product(*states):
        x = np.zeros(d)
        free = np.array([s == "F" for s in combo])
        for i, s in enumerate(combo):
            if s == "L":
                x[i] = lower[i]
            elif s == "U":
                x[i] = upper[i]
        fi = np.flatnonzero(free)
        for use_sum in sum_modes:
            y = x.copy()
            rhs = c[fi] - B[np.ix_(fi, ~free)] @ x[~free]
            if use_sum:
                if fi.size == 0:
                    if abs(x.sum() - total) > tol:
                        continue
                else:
                    m = fi.size
                    K = np.zeros((m + 1, m + 1))
                    K[:m, :m] = B[np.ix_(fi, fi)]
                    K[:m, m] = K[m, :m] = 1.0
                    sol = np.linalg.solve(K, np.append(rhs, total - x[~free].sum()))
                    y[fi] = sol[:m]
            elif fi.size:
                y[fi] = np.linalg.solve(B[np.ix_(fi, fi)], rhs)
            if np.any(y < lower - tol) or np.any(y > upper + tol):
                continue
            if sum_le is not None and y.sum() > sum_le + tol:
                continue
            val = 0.5 * y @ B @ y - c @ y
            if val < best_val:
                best_val, best_x = val, y
    return best_x, best_val


def bisection_projection(y, lower, upper, total, iters=200):
    """Projection onto {lower <= x <= upper, sum x = total} by bisection on the shift."""
    lo_t = np.min(y - upper[np.isfinite(upper)], initial=np.min(y - total)) - abs(total) - 1.0
    hi_t = np.max(y - lower) + 1.0
    for _ in range(iters):
        t = (lo_t + hi_t) / 2
        if np.clip(y - t, lower, upper).sum() > total:
            lo_t = t
        else:
            hi_t = t
    return np.clip(y - (lo_t + hi_t) / 2, lower, upper)


def projected_gradient_qp(B, c, lower, upper, total, iters=5000):
    """Long-horizon plain projected gradient for the box + sum problem."""
    L = np.linalg.eigvalsh(B)[-1]
    x = bisection_projection(np.full(c.size, total / c.size), lower, upper, total)
    for _ in range(iters):
        x = bisection_projection(x - (B @ x - c) / L, lower, upper, total, iters=80)
    return x, 0.5 * x @ B @ x - c @ x


def random_qp(rng, d, with_upper, sum_mode, cond=None):
    """Random strictly convex QP with feasible bounds.

    ``cond`` fixes the condition number of ``B``; by default ``B`` is a
    shifted Wishart draw.
    """
    if cond is None:
        A = rng.standard_normal((d, d))
        B = A @ A.T + 0.1 * np.eye(d)
    else:
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        B = (Q * np.geomspace(1.0, cond, d)) @ Q.T
    c = rng.standard_normal(d) * 2
    lower = rng.uniform(-1.0, 0.5, d)
    upper = lower + rng.uniform(0.2, 2.0, d) if with_upper else np.full(d, np.inf)
    total = None
    if sum_mode != "none":
        hi = upper.sum() if with_upper else lower.sum() + 3.0
        total = float(rng.uniform(lower.sum(), hi))
    return B, c, lower, upper, total
