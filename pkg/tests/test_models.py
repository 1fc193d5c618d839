import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linpool.errors import InvalidModelError, UnsupportedClosedFormError
from linpool.models import (
    CovarianceModel,
    EllipticalLaw,
    ar1_sphericity_limit,
    banded1_rho_limit,
    materialize,
    psd_sqrt,
    sample,
    sphericity,
    sphericity_closed_form,
    spiked_sphericity_bound,
)


def test_ar1_entries():
    M = materialize(CovarianceModel.ar1(4, 0.5, sigma2=2.0))
    assert M[0, 0] == 2.0
    assert M[0, 3] == pytest.approx(2.0 * 0.125)
    assert M[3, 0] == M[0, 3]


def test_complex_ar1_is_hermitian_with_powers_above_diagonal():
    rho = 0.4 * np.exp(1j * 0.7)
    M = materialize(CovarianceModel.ar1(5, rho))
    assert np.allclose(M, M.conj().T)
    assert M[0, 2] == pytest.approx(rho**2)
    assert M[2, 0] == pytest.approx(np.conj(rho) ** 2)
    assert np.linalg.eigvalsh(M).min() > 0


def test_cs_and_banded_entries():
    M = materialize(CovarianceModel.cs(3, 0.25, sigma2=4.0))
    assert np.array_equal(M, [[4, 1, 1], [1, 4, 1], [1, 1, 4]])
    B = materialize(CovarianceModel.banded1(3, 0.3))
    assert np.array_equal(B, [[1, 0.3, 0], [0.3, 1, 0.3], [0, 0.3, 1]])


@pytest.mark.parametrize(
    "factory",
    [
        lambda: CovarianceModel.ar1(5, 1.0),
        lambda: CovarianceModel.cs(5, -0.3),
        lambda: CovarianceModel.cs(5, 0.5 + 0.1j),
        lambda: CovarianceModel.banded1(5, 0.6),
        lambda: CovarianceModel.ar1(0, 0.1),
        lambda: CovarianceModel.ar1(3, 0.1, sigma2=0.0),
        lambda: CovarianceModel.explicit(np.array([[1.0, 2.0], [2.0, 1.0]])),
        lambda: CovarianceModel.explicit(np.array([[1.0, 0.1], [0.2, 1.0]])),
        lambda: CovarianceModel.spiked(np.eye(3), 0.0),
    ],
)
def test_invalid_models_rejected(factory):
    with pytest.raises(InvalidModelError):
        factory()


def test_banded_limit_boundary():
    lim = banded1_rho_limit(10)
    CovarianceModel.banded1(10, 0.999 * lim)
    with pytest.raises(InvalidModelError):
        CovarianceModel.banded1(10, lim)


def test_sphericity_extremes():
    assert sphericity(3.0 * np.eye(7)) == pytest.approx(1.0)
    v = np.arange(1.0, 8.0)
    assert sphericity(np.outer(v, v)) == pytest.approx(7.0)


@given(
    kind=st.sampled_from(["ar1", "cs", "banded1", "ar1c"]),
    p=st.integers(1, 300),
    u=st.floats(-0.95, 0.95),
    phase=st.floats(0, 2 * np.pi),
    sigma2=st.floats(0.1, 10),
)
def test_closed_form_sphericity_matches_direct(kind, p, u, phase, sigma2):
    if kind == "ar1":
        model = CovarianceModel.ar1(p, u, sigma2)
    elif kind == "ar1c":
        model = CovarianceModel.ar1(p, u * np.exp(1j * phase), sigma2)
    elif kind == "cs":
        lower = -1.0 / (p - 1) if p > 1 else -0.95
        model = CovarianceModel.cs(p, max(u, 0.95 * lower), sigma2)
    else:
        model = CovarianceModel.banded1(p, u * banded1_rho_limit(p) if p > 1 else u, sigma2)
    direct = sphericity(materialize(model))
    assert sphericity_closed_form(model) == pytest.approx(direct, rel=1e-10)
    assert 1 - 1e-12 <= direct <= p + 1e-9


def test_ar1_limit():
    rho = 0.6
    assert sphericity_closed_form(CovarianceModel.ar1(20000, rho)) == pytest.approx(
        ar1_sphericity_limit(rho), rel=1e-3
    )


def test_spiked_has_no_closed_form_but_respects_bound(rng):
    V = rng.standard_normal((30, 3))
    model = CovarianceModel.spiked(V @ V.T, 0.5)
    with pytest.raises(UnsupportedClosedFormError):
        sphericity_closed_form(model)
    assert sphericity(materialize(model)) <= spiked_sphericity_bound(model)


def test_psd_sqrt_squares_back(rng):
    A = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    M = A @ A.conj().T
    R = psd_sqrt(M)
    assert np.allclose(R @ R, M)


def test_t_law_needs_finite_fourth_moment():
    with pytest.raises(InvalidModelError):
        EllipticalLaw("t", CovarianceModel.ar1(3, 0.1), nu=4.0)
    with pytest.raises(InvalidModelError):
        EllipticalLaw("gaussian", CovarianceModel.ar1(3, 0.5j))


def test_law_kurtosis():
    cov = CovarianceModel.ar1(3, 0.1)
    assert EllipticalLaw("gaussian", cov).kurtosis == 0.0
    assert EllipticalLaw("t", cov, nu=8).kurtosis == 0.5


@pytest.mark.parametrize("family", ["gaussian", "t", "complex_gaussian", "complex_t"])
def test_sample_covariance_matches_model(family):
    rho = 0.5j if family.startswith("complex") else 0.5
    law = EllipticalLaw(family, CovarianceModel.ar1(4, rho, sigma2=2.0), nu=8)
    X = sample(law, 400_000, np.random.default_rng(1)).X
    emp = X.T @ X.conj() / X.shape[0]
    assert np.allclose(emp, law.cov_matrix, atol=0.05)
    if law.is_complex:
        # circular: the pseudo-covariance vanishes
        assert np.abs(X.T @ X / X.shape[0]).max() < 0.05


def test_sample_t_marginal_kurtosis():
    # t(8): one third of the marginal excess kurtosis is 2 / (8 - 4)
    law = EllipticalLaw("t", CovarianceModel.ar1(3, 0.5), nu=8)
    x = sample(law, 1_000_000, np.random.default_rng(0)).X[:, 0]
    kappa = np.mean(x**4) / np.mean(x**2) ** 2 / 3 - 1
    assert kappa == pytest.approx(0.5, abs=0.05)


def test_sample_known_mean_and_reproducibility():
    law = EllipticalLaw("gaussian", CovarianceModel.cs(3, 0.2), mean=np.array([1.0, 2.0, 3.0]))
    a = sample(law, 10, 7, known_mean=True)
    b = sample(law, 10, np.random.default_rng(7), known_mean=True)
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.known_mean, [1.0, 2.0, 3.0])
    with pytest.raises(InvalidModelError):
        sample(law, 0, 1)
