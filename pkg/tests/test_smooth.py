import numpy as np
import pytest

from jadeode.basis import latent_basis, roughness_matrix
from jadeode.expfam import Family
from jadeode.smooth import SmoothingError, fit_penalized, select_smoothing


def test_gaussian_fit_solves_normal_equations():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 30)
    y = np.column_stack([np.sin(6 * t) + 0.1 * rng.normal(size=30) for _ in range(2)])
    y[4, 1] = np.nan
    basis = latent_basis(t, 10)
    lam = 1e-3
    fit = fit_penalized(y, t, Family.gaussian(), basis, lam)
    Psi = basis.evaluate(t)
    ok = ~np.isnan(y)
    S, R = np.where(ok, y, 0).sum(1), ok.sum(1)
    N = R.sum()
    A = (Psi * (R / N)[:, None]).T @ Psi + 2 * lam * roughness_matrix(basis)
    ref = np.linalg.solve(A, Psi.T @ S / N)
    np.testing.assert_allclose(fit.coefficients, ref, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("fam,link", [
    (Family.poisson(), np.log),
    (Family.binomial(20), lambda m: np.log(m / (20 - m))),
])
def test_nongaussian_recovers_the_natural_parameter(fam, link):
    rng = np.random.default_rng(1)
    t = np.linspace(0, 10, 120)
    theta = 0.8 * np.sin(t / 2) + 0.5
    y = fam.sample(theta[:, None], rng, size=(120, 5))
    fit = select_smoothing(y, t, fam, latent_basis(t))
    err = np.sqrt(np.mean((fit(t) - theta) ** 2))
    assert err < 0.1
    assert fit.edf > 1


def test_gradient_is_zero_at_the_optimum():
    rng = np.random.default_rng(2)
    t = np.linspace(0, 5, 40)
    fam = Family.poisson()
    y = fam.sample(np.cos(t)[:, None], rng, size=(40, 3))
    basis = latent_basis(t)
    lam = 0.01
    fit = fit_penalized(y, t, fam, basis, lam)
    Psi, c = basis.evaluate(t), fit.coefficients
    S, R = y.sum(1), np.full(40, 3.0)
    grad = -Psi.T @ (S - R * np.exp(Psi @ c)) / 120 + 2 * lam * roughness_matrix(basis) @ c
    assert np.abs(grad).max() < 1e-8


def test_gcv_prefers_smoother_fits_for_noisier_data():
    rng = np.random.default_rng(5)
    t = np.linspace(0, 1, 60)
    basis = latent_basis(t)
    quiet = select_smoothing(np.sin(4 * t) + 0.01 * rng.normal(size=60), t, Family.gaussian(), basis)
    noisy = select_smoothing(np.sin(4 * t) + 1.0 * rng.normal(size=60), t, Family.gaussian(), basis)
    assert noisy.smoothing_parameter > quiet.smoothing_parameter


def test_errors():
    t = np.linspace(0, 1, 20)
    basis = latent_basis(t)
    with pytest.raises(ValueError):
        fit_penalized(np.zeros(20), t, Family.gaussian(), basis, 0.0)
    with pytest.raises(ValueError):
        select_smoothing(np.zeros(20), t, Family.gaussian(), basis, grid=[])
    y = np.full(20, np.nan)
    y[:2] = 1.0
    with pytest.raises(SmoothingError):
        fit_penalized(y, t, Family.gaussian(), basis, 1.0)
