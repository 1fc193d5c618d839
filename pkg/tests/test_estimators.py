import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize, stats

from linpool.dataset import Dataset
from linpool.errors import InsufficientDataError, NumericalError, ShapeError
from linpool.estimators import (
    PoolingStatistics,
    class_statistics,
    delta_estimate,
    kurtosis_estimate,
    kurtosis_lower_bound,
    pooling_statistics,
    sample_covariance,
    scale_estimate,
    spatial_median,
    sphericity_estimate,
    sscm_shape,
    zou_correction,
)
from linpool.models import CovarianceModel, EllipticalLaw, sample, sphericity


def test_scm_divisors():
    X = np.array([[1.0, 0.0], [3.0, 2.0], [2.0, 4.0]])
    assert np.allclose(sample_covariance(Dataset(X)), np.cov(X.T))
    mu = np.array([1.0, 1.0])
    S = sample_covariance(Dataset(X, known_mean=mu))
    assert np.allclose(S, (X - mu).T @ (X - mu) / 3)
    with pytest.raises(InsufficientDataError):
        sample_covariance(Dataset(X[:1]))


def test_complex_scm_is_hermitian(rng):
    X = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
    S = sample_covariance(Dataset(X))
    assert np.allclose(S, S.conj().T)
    assert np.allclose(S, np.cov(X.T))


def _sum_dist(m, X):
    return np.linalg.norm(X - m, axis=1).sum()


@pytest.mark.parametrize("seed", range(5))
def test_spatial_median_minimizes_distance_sum(seed):
    r = np.random.default_rng(seed)
    X = r.standard_t(3, size=(25, 4))
    m = spatial_median(X)
    ref = optimize.minimize(_sum_dist, X.mean(0), args=(X,), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    assert _sum_dist(m, X) <= ref.fun + 1e-9


def test_spatial_median_at_data_point():
    # the centre point carries most of the mass, so it is the minimizer
    X = np.array([[0.0, 0.0]] * 3 + [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(spatial_median(X), [0.0, 0.0], atol=1e-9)


def test_spatial_median_complex_equals_real_embedding(rng):
    Z = rng.standard_normal((15, 3)) + 1j * rng.standard_normal((15, 3))
    m = spatial_median(Z)
    mr = spatial_median(np.hstack([Z.real, Z.imag]))
    assert np.allclose(np.concatenate([m.real, m.imag]), mr, atol=1e-7)


def test_sscm_shape_has_trace_p(rng):
    X = rng.standard_normal((30, 6))
    L = sscm_shape(Dataset(X))
    assert np.trace(L) == pytest.approx(6.0)
    assert np.allclose(L, L.T)


def test_sscm_is_scale_invariant(rng):
    X = rng.standard_normal((30, 6))
    assert np.allclose(sscm_shape(Dataset(X)), sscm_shape(Dataset(7.5 * X)))


def test_scale_estimate():
    assert scale_estimate(np.diag([1.0, 2.0, 6.0])) == 3.0


@pytest.mark.parametrize("seed", range(3))
def test_kurtosis_matches_bias_corrected_marginal_average(seed):
    X = np.random.default_rng(seed).standard_t(9, size=(40, 5))
    G2 = stats.kurtosis(X, axis=0, fisher=True, bias=False)
    assert kurtosis_estimate(Dataset(X)) == pytest.approx(np.mean(G2) / 3, rel=1e-12)


def test_kurtosis_clamped_below_lower_bound():
    # two-point marginals have the smallest possible excess kurtosis
    X = np.tile([[1.0, -1.0], [-1.0, 1.0]], (3, 1))
    X = np.hstack([X, X])
    lb = kurtosis_lower_bound(4)
    assert kurtosis_estimate(Dataset(X)) == pytest.approx(0.99 * lb)


def test_kurtosis_large_sample():
    law = EllipticalLaw("t", CovarianceModel.ar1(10, 0.3), nu=8)
    assert kurtosis_estimate(sample(law, 200_000, 5)) == pytest.approx(0.5, abs=0.05)
    claw = EllipticalLaw("complex_gaussian", CovarianceModel.ar1(10, 0.3j))
    assert kurtosis_estimate(sample(claw, 200_000, 5)) == pytest.approx(0.0, abs=0.02)


def test_kurtosis_needs_four_real_rows():
    with pytest.raises(InsufficientDataError):
        kurtosis_estimate(Dataset(np.ones((3, 2)) + np.eye(3, 2)))


def test_zou_approximation():
    X = np.random.default_rng(0).standard_normal((10, 3))
    assert zou_correction(Dataset(X), approximate=True) == pytest.approx(1 / 100 + 2 / 1000)
    assert 0 < zou_correction(Dataset(X)) < 0.1


def test_sphericity_estimate_consistent():
    # the SSCM shape is biased towards the identity by O(1/p), so use a large p
    law = EllipticalLaw("t", CovarianceModel.ar1(200, 0.6), nu=8)
    g, g_star = sphericity_estimate(sample(law, 4000, 11))
    truth = sphericity(law.cov_matrix)
    assert g_star <= g
    assert g_star == pytest.approx(truth, rel=0.05)


def test_sphericity_clipped_to_range():
    X = np.random.default_rng(1).standard_normal((6, 40))
    _, g_star = sphericity_estimate(Dataset(X))
    assert 1.0 <= g_star <= 40.0


def test_delta_trivial_values():
    # Gaussian, M = I: (p + 1)/(n - 1)
    assert delta_estimate(1.0, 0.0, 1.0, 26, 50) == pytest.approx(51 / 25)
    assert delta_estimate(1.0, 0.0, 1.0, 26, 50, mean_known=True) == pytest.approx(51 / 26)
    assert delta_estimate(2.0, 0.0, 1.0, 11, 50, field="complex") == pytest.approx(4 * 50 / 10)
    with pytest.raises(InsufficientDataError):
        delta_estimate(1.0, 0.0, 1.0, 1, 5)
    with pytest.raises(NumericalError):
        delta_estimate(1.0, -5.0, 1.0, 2, 1)


@pytest.mark.parametrize(
    "family,rho,kappa,known",
    [("gaussian", 0.6, 0.0, True), ("t", 0.6, 0.5, False), ("complex_gaussian", 0.5j, 0.0, False)],
)
def test_delta_matches_monte_carlo(family, rho, kappa, known):
    law = EllipticalLaw(family, CovarianceModel.ar1(20, rho, 2.0), nu=8)
    M, p, n = law.cov_matrix, 20, 10
    r = np.random.default_rng(3)
    errs = np.empty(6000)
    for i in range(errs.size):
        errs[i] = np.sum(np.abs(sample_covariance(sample(law, n, r, known_mean=known)) - M) ** 2) / p
    field = "complex" if law.is_complex else "real"
    expected = delta_estimate(np.trace(M).real / p, kappa, sphericity(M), n, p, field, known)
    assert abs(errs.mean() - expected) < 4 * errs.std() / np.sqrt(errs.size)


def test_class_statistics_fields():
    law = EllipticalLaw("gaussian", CovarianceModel.cs(8, 0.3, sigma2=2.0))
    cs = class_statistics(sample(law, 50, 2))
    assert cs.n == 50 and cs.p == 8 and cs.field == "real"
    assert cs.eta == pytest.approx(np.trace(cs.scm) / 8)
    assert cs.delta == pytest.approx(delta_estimate(cs.eta, cs.kappa, cs.gamma_star, 50, 8))


def test_pooling_statistics_structure(rng):
    data = [Dataset(rng.standard_normal((n, 5)) * s) for n, s in [(10, 1.0), (20, 2.0), (15, 0.5)]]
    st_ = pooling_statistics(data)
    assert st_.K == 3
    assert np.allclose(st_.C, st_.C.T)
    for k, c in enumerate(st_.classes):
        assert st_.C[k, k] == pytest.approx(c.gamma_star * c.eta**2)
    B, R = st_.system(with_identity=True)
    assert B.shape == (4, 4) and R.shape == (4, 3)
    assert B[3, 3] == 1.0 and np.array_equal(B[:3, 3], st_.f)


def test_population_statistics():
    Ms = [CovarianceModel.ar1(10, 0.5).materialize(), 2 * np.eye(10)]
    st_ = PoolingStatistics.from_population(Ms, [5, 7])
    assert st_.C[1, 1] == pytest.approx(4.0)
    assert st_.C[0, 1] == pytest.approx(2.0)
    assert st_.f == pytest.approx([1.0, 2.0])
    assert st_.D[1] == pytest.approx(4 * (10 + 1) / 6)


def test_pooling_statistics_validation():
    with pytest.raises(ShapeError):
        PoolingStatistics(np.eye(2), [1.0], [1.0, 1.0], [5, 5], 3)
    with pytest.raises(ShapeError):
        PoolingStatistics(np.array([[1.0, 0.2], [0.3, 1.0]]), [1.0, 1.0], [1.0, 1.0], [5, 5], 3)
    with pytest.raises(NumericalError):
        PoolingStatistics(np.eye(2), [1.0, 0.0], [1.0, 1.0], [5, 5], 3)


@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 10_000))
def test_statistics_scale_equivariance(scale, seed):
    X = np.random.default_rng(seed).standard_normal((12, 4))
    a, b = class_statistics(Dataset(X)), class_statistics(Dataset(scale * X))
    assert b.eta == pytest.approx(scale**2 * a.eta, rel=1e-9)
    assert b.kappa == pytest.approx(a.kappa, rel=1e-9, abs=1e-12)
    assert b.gamma_star == pytest.approx(a.gamma_star, rel=1e-7)
    assert b.delta == pytest.approx(scale**4 * a.delta, rel=1e-7)


def test_spatial_median_one_dimensional_grid():
    x = np.array([3.0, -1.0, 7.5, 2.0, 2.2, 10.0, -4.0])
    m = spatial_median(x[:, None])[0]
    grid = np.linspace(-5, 11, 160_001)
    obj = np.abs(x[None, :] - grid[:, None]).sum(axis=1)
    assert m == pytest.approx(np.median(x), abs=1e-9)
    assert np.abs(x - m).sum() <= obj.min() + 1e-12


def test_cross_term_damping_restores_definiteness(caplog):
    from linpool.estimators import _damp_cross_terms

    f = np.array([1.0, 2.0, 3.0])
    C = np.outer(f, f) + np.array([[0.1, 5.0, -4.0], [5.0, 0.2, 3.0], [-4.0, 3.0, 0.3]])
    D = np.array([0.05, 0.05, 0.05])
    assert np.linalg.eigvalsh(np.diag(D) + C - np.outer(f, f))[0] < 0
    fixed = _damp_cross_terms(C, D, f)
    assert "scaled them" in caplog.text
    assert np.array_equal(np.diag(fixed), np.diag(C))
    ratio = (fixed - np.outer(f, f)) / (C - np.outer(f, f))
    assert np.allclose(ratio[~np.eye(3, dtype=bool)], ratio[0, 1])
    S = np.diag(D) + fixed - np.outer(f, f)
    s = 1 / np.sqrt(np.diag(S))
    assert np.linalg.eigvalsh(S * np.outer(s, s))[0] == pytest.approx(1e-3)


def test_cross_term_damping_leaves_valid_systems_alone():
    from linpool.estimators import _damp_cross_terms

    Ms = [CovarianceModel.ar1(10, r).materialize() for r in (0.2, 0.5, 0.8)]
    pop = PoolingStatistics.from_population(Ms, [10, 10, 10])
    assert np.array_equal(_damp_cross_terms(pop.C, pop.D, pop.f), pop.C)


@given(seed=st.integers(0, 100_000))
def test_augmented_system_factorizes(seed):
    r = np.random.default_rng(seed)
    p, K = int(r.integers(2, 12)), int(r.integers(1, 6))
    data = [Dataset(r.standard_t(4, (int(r.integers(4, 10)), p)) * r.uniform(0.1, 10, p)) for _ in range(K)]
    B, _ = pooling_statistics(data).system(with_identity=True)
    np.linalg.cholesky(B)
