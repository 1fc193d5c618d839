import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import bisection_projection, brute_force_qp, projected_gradient_qp, random_qp
from scipy import optimize

from linpool.errors import InfeasibleError, NotStrictlyConvexError, ShapeError
from linpool.qp import QpProblem, project_box_sum, solve_box_eq, solve_small


def _kw(mode, total):
    return {"sum_eq": total} if mode == "eq" else ({"sum_le": total} if mode == "le" else {})


@pytest.mark.parametrize("mode", ["none", "eq", "le"])
def test_solve_small_matches_enumeration(mode):
    rng = np.random.default_rng({"none": 1, "eq": 2, "le": 3}[mode])
    for _ in range(40):
        d = int(rng.integers(1, 7))
        B, c, lo, up, tot = random_qp(rng, d, bool(rng.integers(2)), mode)
        res = solve_small(QpProblem(B, c, lo, up, **_kw(mode, tot)))
        x, val = brute_force_qp(B, c, lo, up, **_kw(mode, tot))
        assert np.allclose(res.x, x, atol=1e-9)
        assert res.objective == pytest.approx(val, abs=1e-10)


def test_solve_small_multipliers_satisfy_kkt():
    rng = np.random.default_rng(9)
    for _ in range(30):
        B, c, lo, up, tot = random_qp(rng, 5, True, "eq")
        r = solve_small(QpProblem(B, c, lo, up, sum_eq=tot))
        stationarity = B @ r.x - c - r.lam + r.mu + r.nu
        assert np.abs(stationarity).max() < 1e-8
        assert np.all(r.lam >= -1e-12) and np.all(r.mu >= -1e-12)
        assert np.abs(r.lam * (r.x - lo)).max() < 1e-9
        assert np.abs(r.mu * (up - r.x)).max() < 1e-9


def test_unconstrained_interior_solution():
    B = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = np.array([1.0, 1.0])
    r = solve_small(QpProblem(B, c, lower=-np.inf))
    assert np.allclose(r.x, np.linalg.solve(B, c))
    assert not r.at_lower.any()


@pytest.mark.filterwarnings("ignore:Values in x were outside bounds")
def test_active_set_path_above_enumeration_limit():
    rng = np.random.default_rng(4)
    for _ in range(5):
        B, c, lo, up, tot = random_qp(rng, 20, True, "eq")
        r = solve_small(QpProblem(B, c, lo, up, sum_eq=tot))
        assert r.method == "active-set"
        ref = optimize.minimize(
            lambda x: 0.5 * x @ B @ x - c @ x, np.clip(np.full(20, tot / 20), lo, up),
            jac=lambda x: B @ x - c, bounds=list(zip(lo, up)), method="SLSQP",
            constraints=[{"type": "eq", "fun": lambda x: x.sum() - tot}],
            options={"ftol": 1e-14, "maxiter": 2000},
        )
        assert r.objective <= ref.fun + 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_box_eq_matches_projected_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    B, c, lo, up, tot = random_qp(rng, 30, True, "eq", cond=20)
    res = solve_box_eq(QpProblem(B, c, lo, up, sum_eq=tot))
    _, val = projected_gradient_qp(B, c, lo, up, tot, iters=2000)
    assert res.objective == pytest.approx(val, abs=1e-6)
    assert res.x.sum() == pytest.approx(tot)
    assert np.all(res.x >= lo - 1e-12) and np.all(res.x <= up + 1e-12)


def test_box_eq_ill_conditioned_large():
    rng = np.random.default_rng(5)
    B, c, lo, up, tot = random_qp(rng, 200, True, "eq", cond=1e6)
    res = solve_box_eq(QpProblem(B, c, lo, up, sum_eq=tot))
    assert res.kkt_residual < 1e-7 * max(1.0, np.abs(c).max())


def test_box_eq_requires_equality():
    with pytest.raises(ShapeError):
        solve_box_eq(QpProblem(np.eye(2), np.ones(2)))


@given(
    y=st.lists(st.floats(-10, 10), min_size=1, max_size=12),
    width=st.floats(0.1, 5.0),
    frac=st.floats(0.0, 1.0),
)
def test_projection_matches_bisection(y, width, frac):
    y = np.array(y)
    lo = np.full(y.size, -1.0)
    up = lo + width
    total = lo.sum() + frac * (up.sum() - lo.sum())
    x = project_box_sum(y, lo, up, total)
    assert x.sum() == pytest.approx(total, abs=1e-9)
    assert np.allclose(x, bisection_projection(y, lo, up, total), atol=1e-8)


def test_projection_onto_simplex():
    x = project_box_sum(np.array([0.5, 0.2, -1.0]), np.zeros(3), np.full(3, np.inf), 1.0)
    assert np.allclose(x, [0.65, 0.35, 0.0])


def test_errors():
    with pytest.raises(NotStrictlyConvexError):
        solve_small(QpProblem(np.diag([1.0, 0.0]), np.ones(2)))
    with pytest.raises(InfeasibleError):
        solve_small(QpProblem(np.eye(2), np.ones(2), lower=[0, 0], upper=[1, 1], sum_eq=3.0))
    with pytest.raises(InfeasibleError):
        solve_small(QpProblem(np.eye(2), np.ones(2), lower=[1, 0], upper=[0, 1]))
    with pytest.raises(ShapeError):
        QpProblem(np.eye(2), np.ones(3))
    with pytest.raises(ShapeError):
        QpProblem(np.eye(2), np.ones(2), sum_eq=1.0, sum_le=1.0)


def test_ill_conditioned_is_damped(caplog):
    B = np.diag([1.0, 1e-14])
    r = solve_small(QpProblem(B, np.ones(2), upper=1.0))
    assert r.damped
    assert "ill-conditioned" in caplog.text


@given(seed=st.integers(0, 10_000), mode=st.sampled_from(["none", "eq", "le"]), power=st.integers(-3, 6))
def test_solution_invariant_to_objective_scale(seed, mode, power):
    # scaling B and c together leaves the minimizer unchanged; bounds must hold exactly
    rng = np.random.default_rng(seed)
    B, c, lo, up, tot = random_qp(rng, int(rng.integers(1, 7)), bool(rng.integers(2)), mode)
    x, _ = brute_force_qp(B, c, lo, up, **_kw(mode, tot))
    r = solve_small(QpProblem(B * 10.0**power, c * 10.0**power, lo, up, **_kw(mode, tot)))
    assert np.all(r.x >= lo) and np.all(r.x <= up)
    assert np.allclose(r.x, x, atol=1e-8)
