import numpy as np
import pytest

from panelcca.cca import fit_cca
from panelcca.errors import DomainError, InputError
from panelcca.regress import fe_twoway_arellano, ols_newey_west
from panelcca.regress.linear import demean_groups
from panelcca.smcca import SmccaProblem, fit_smcca, standardize_columns
from panelcca.synth import (
    PlantedSpec,
    gen_planted_cca,
    gen_planted_multiset,
    gen_planted_panel,
    make_rng,
    matrix_to_grid,
    observations_to_panels,
    population_first_correlation,
    splitmix64,
)


def test_splitmix64_reference_values():
    # published reference outputs of splitmix64 started from state 0
    state, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF
    state, out = splitmix64(state)
    assert out == 0x6E789E6AA1B965F4
    state, out = splitmix64(state)
    assert out == 0x06C45D188009454F


def test_rng_deterministic_and_stream_separated():
    a = make_rng(7).standard_normal(5)
    np.testing.assert_array_equal(a, make_rng(7).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, stream=1).standard_normal(5))
    assert not np.array_equal(a, make_rng(8).standard_normal(5))
    assert isinstance(make_rng(0).bit_generator, np.random.Philox)


def test_generators_bitwise_deterministic():
    spec = PlantedSpec(T=50, dims=(3, 4, 5), seed=3)
    d1, t1 = gen_planted_multiset(spec)
    d2, t2 = gen_planted_multiset(spec)
    for a, b in zip(d1, d2):
        np.testing.assert_array_equal(a, b)
    o1, _ = gen_planted_panel(PlantedSpec(T=20, N=4, seed=3, location_sd=1, time_sd=1))
    o2, _ = gen_planted_panel(PlantedSpec(T=20, N=4, seed=3, location_sd=1, time_sd=1))
    np.testing.assert_array_equal(o1.cpi, o2.cpi)


def test_spec_validation():
    with pytest.raises(DomainError):
        PlantedSpec(noise_sd=0.0)
    with pytest.raises(InputError):
        PlantedSpec(T=1)


def test_unit_loadings_give_half():
    X, Y, truth = gen_planted_cca(PlantedSpec(T=10, dims=(3, 3), noise_sd=1.0))
    assert truth["rho1"] == pytest.approx(0.5, abs=1e-15)
    for L in truth["loadings"]:
        assert np.linalg.norm(L) == pytest.approx(1.0)


def test_closed_form_matches_covariance_route():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(4), rng.standard_normal(3)
    _, _, truth = gen_planted_cca(PlantedSpec(T=10, dims=(4, 3), loadings=[a, b], noise_sd=0.7))
    assert truth["rho1"] == pytest.approx(population_first_correlation([a[:, None], b[:, None]], 0.7), rel=1e-12)


def test_small_noise_rho_near_one():
    X, Y, _ = gen_planted_cca(PlantedSpec(T=500, dims=(3, 3), noise_sd=1e-4, seed=1))
    assert fit_cca(X, Y).correlations[0] > 0.9999


def test_fitted_rho_near_population():
    X, Y, truth = gen_planted_cca(PlantedSpec(T=5000, dims=(2, 2), noise_sd=1.0, seed=9))
    assert abs(fit_cca(X, Y).correlations[0] - truth["rho1"]) <= 0.05


def test_single_nonzero_loading_sparse_recovery():
    a = np.array([0.0, 0.0, 3.0, 0.0])
    b = np.array([3.0, 0.0, 0.0])
    (X, Y), _ = gen_planted_multiset(PlantedSpec(T=400, dims=(4, 3), loadings=[a, b], seed=2))
    res = fit_smcca(SmccaProblem([standardize_columns(X), standardize_columns(Y)], [1.0, 1.0]))
    assert int(np.flatnonzero(res.weights[0])[0]) == 2
    assert int(np.flatnonzero(res.weights[1])[0]) == 0


def test_panel_balanced_and_truth():
    obs, truth = gen_planted_panel(PlantedSpec(T=30, N=5, seed=1, location_sd=1.0, time_sd=0.5))
    assert len(obs) == 150 and obs.complete.all()
    assert set(truth["location_effects"]) == {f"loc{j:02d}" for j in range(5)}
    assert truth["betas"] == {"temp": -0.03, "pdsi": -0.007}
    obs_m, _ = gen_planted_panel(PlantedSpec(T=30, N=5, seed=1, missing_fraction=0.2))
    assert 0 < (~obs_m.complete).sum() < 150


def test_panel_noise_free_reconstruction():
    # cpi minus the returned truth must equal the noise term exactly when noise_sd is tiny
    spec = PlantedSpec(T=20, N=3, seed=4, location_sd=1.0, time_sd=1.0, noise_sd=1e-12)
    obs, truth = gen_planted_panel(spec)
    fit = (
        truth["betas"]["temp"] * obs.temp + truth["betas"]["pdsi"] * obs.pdsi
        + np.array([truth["location_effects"][l] for l in obs.location])
        + np.array([truth["year_effects"][y] for y in obs.year.tolist()])
    )
    np.testing.assert_allclose(obs.cpi, fit, atol=1e-10)


def test_fe_unbiased_monte_carlo():
    est = []
    for seed in range(200):
        obs, _ = gen_planted_panel(PlantedSpec(T=40, N=10, seed=seed, location_sd=1.0, time_sd=1.0, noise_sd=0.5))
        est.append(fe_twoway_arellano(obs).coefficients)
    est = np.array(est)
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - [-0.03, -0.007]) <= 2 * se)


def test_zero_effects_ols_and_fe_agree_within_sampling_error():
    obs, _ = gen_planted_panel(PlantedSpec(T=200, N=10, seed=5, noise_sd=0.5))
    ols, fe = ols_newey_west(obs), fe_twoway_arellano(obs)
    diff = np.abs(ols.coefficients[1:] - fe.coefficients)
    assert np.all(diff <= 3 * np.hypot(ols.std_errors[1:], fe.std_errors))


def test_clustered_se_exceed_naive_on_average():
    ratios = []
    for seed in range(40):
        spec = PlantedSpec(T=60, N=10, seed=seed, regressor_ar=0.7, error_ar=0.7, heteroskedastic=True, location_sd=1.0)
        obs, _ = gen_planted_panel(spec)
        fe = fe_twoway_arellano(obs, cov_type="cluster")
        codes = [np.unique(obs.location, return_inverse=True)[1], np.unique(obs.year, return_inverse=True)[1]]
        Xw = demean_groups(np.column_stack([obs.temp, obs.pdsi]), codes)
        s2 = fe.residuals @ fe.residuals / (len(obs) - 2)
        naive = np.sqrt(np.diag(s2 * np.linalg.inv(Xw.T @ Xw)))
        ratios.append(fe.std_errors / naive)
    assert np.all(np.mean(ratios, axis=0) >= 1.0)


def test_panel_and_grid_helpers():
    obs, _ = gen_planted_panel(PlantedSpec(T=10, N=3, seed=0))
    cpi, temp, pdsi = observations_to_panels(obs)
    assert cpi.shape == (10, 3) and cpi.names == ["loc00", "loc01", "loc02"]
    np.testing.assert_array_equal(temp.values[:, 1], obs.temp[obs.location == "loc01"])
    M = np.arange(20.0).reshape(4, 5)
    g = matrix_to_grid(M, np.arange(1600, 1604))
    assert g.values.shape == (4, 2, 3)
    assert g.present[0].sum() == 5
