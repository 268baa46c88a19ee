import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelcca.cca import (
    CcaInput,
    DuplicateColumnWarning,
    canonical_variates_series,
    fit_cca,
    wilks_lambda,
)
from panelcca.errors import ConditioningError, InputError
from panelcca.preprocess import FilterSpec, gaussian_filter
from panelcca.synth import PlantedSpec, gen_planted_cca


def _corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


def probe_max_correlation(X, Y, n_probes, rng):
    """Largest |corr(Xa, Yb)| over random unit-vector pairs (brute-force oracle)."""
    Xc, Yc = X - X.mean(0), Y - Y.mean(0)
    a = rng.standard_normal((X.shape[1], n_probes))
    b = rng.standard_normal((Y.shape[1], n_probes))
    a /= np.linalg.norm(a, axis=0)
    b /= np.linalg.norm(b, axis=0)
    U, V = Xc @ a, Yc @ b
    r = (U * V).sum(0) / np.sqrt((U * U).sum(0) * (V * V).sum(0))
    return float(np.abs(r).max())


def correlated_pair(rng, T=200, p=3, q=4):
    Z = rng.standard_normal((T, 2))
    X = Z @ rng.standard_normal((2, p)) + rng.standard_normal((T, p))
    Y = Z @ rng.standard_normal((2, q)) + rng.standard_normal((T, q))
    return X, Y


def test_y_equals_x_gives_unit_correlations(rng):
    X = rng.standard_normal((50, 3))
    r = fit_cca(X, X.copy())
    np.testing.assert_allclose(r.correlations, 1.0, atol=1e-10)
    for j in range(3):
        assert abs(abs(_corr(r.U[:, j], r.V[:, j])) - 1) <= 1e-10


def test_independent_noise_small_correlation():
    rng = np.random.default_rng(7)
    r = fit_cca(rng.standard_normal((2000, 2)), rng.standard_normal((2000, 2)))
    assert r.correlations[0] <= 0.1


def test_correlations_match_variates(rng):
    X, Y = correlated_pair(rng)
    r = fit_cca(X, Y)
    for j in range(r.k):
        assert _corr(r.U[:, j], r.V[:, j]) == pytest.approx(r.correlations[j], abs=1e-10)
    assert np.all(np.diff(r.correlations) <= 0)


def test_variates_unit_variance_and_orthogonal(rng):
    X, Y = correlated_pair(rng)
    r = fit_cca(X, Y)
    np.testing.assert_allclose(np.cov(r.U, rowvar=False), np.eye(r.k), atol=1e-8)
    np.testing.assert_allclose(np.cov(r.V, rowvar=False), np.eye(r.k), atol=1e-8)


def test_weights_reproduce_variates(rng):
    X, Y = correlated_pair(rng)
    r = fit_cca(X, Y)
    np.testing.assert_allclose((X - X.mean(0)) @ r.a_weights, r.U, atol=1e-10)
    np.testing.assert_allclose((Y - Y.mean(0)) @ r.b_weights, r.V, atol=1e-10)


def test_sign_convention(rng):
    X, Y = correlated_pair(rng)
    r = fit_cca(X, Y)
    for j in range(r.k):
        col = r.a_weights[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_matches_literal_eigenproblem(rng):
    # eigenvalues of Sxx^-1/2 Sxy Syy^-1 Syx Sxx^-1/2 are the squared correlations
    X, Y = correlated_pair(rng)
    r = fit_cca(X, Y)
    vals, vecs = np.linalg.eigh(r.sxx)
    wx = vecs @ np.diag(vals**-0.5) @ vecs.T
    M = wx @ r.sxy @ np.linalg.inv(r.syy) @ r.sxy.T @ wx
    lam = np.sort(np.linalg.eigvalsh(M))[::-1][: r.k]
    np.testing.assert_allclose(np.sqrt(lam), r.correlations, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariance_under_invertible_maps(seed):
    rng = np.random.default_rng(seed)
    X, Y = correlated_pair(rng, T=120)
    Mx = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    My = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    base = fit_cca(X, Y).correlations
    moved = fit_cca(X @ Mx, Y @ My).correlations
    np.testing.assert_allclose(moved, base, atol=1e-8)


def test_probe_oracle_never_beats_rho1():
    rng = np.random.default_rng(11)
    for _ in range(3):
        X, Y = correlated_pair(rng, T=150, p=2, q=2)
        rho1 = fit_cca(X, Y).correlations[0]
        assert probe_max_correlation(X, Y, 100_000, rng) <= rho1 + 1e-3


def test_column_scaling_leaves_correlations(rng):
    # latitude weighting is a column rescaling, so it cannot change CCA correlations
    X, Y = correlated_pair(rng)
    w = np.cos(np.deg2rad([40.0, 50.0, 60.0])) ** 0.5
    np.testing.assert_allclose(fit_cca(X * w, Y).correlations, fit_cca(X, Y).correlations, atol=1e-10)


def test_singular_block_raises_with_eigenvalue(rng):
    X = rng.standard_normal((40, 2))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.raises(ConditioningError) as info:
        fit_cca(X, rng.standard_normal((40, 2)))
    assert info.value.smallest_eigenvalue < 1e-10


def test_duplicate_columns_collapsed_with_warning(rng):
    X = rng.standard_normal((60, 2))
    Xd = np.column_stack([X, X[:, 1]])
    Y = X @ [[1.0], [0.5]] + rng.standard_normal((60, 1))
    with pytest.warns(DuplicateColumnWarning):
        r = fit_cca(Xd, Y)
    np.testing.assert_allclose(r.correlations, fit_cca(X, Y).correlations, atol=1e-12)
    assert r.a_weights.shape == (3, 1) and r.a_weights[2, 0] == 0.0


def test_duplicates_kept_need_ridge(rng):
    X = rng.standard_normal((60, 2))
    Xd = np.column_stack([X, X[:, 1]])
    Y = rng.standard_normal((60, 2))
    with pytest.raises(ConditioningError):
        fit_cca(Xd, Y, collapse_duplicates=False)
    r = fit_cca(Xd, Y, collapse_duplicates=False, ridge=True)
    assert r.ridge[0] > 0
    np.testing.assert_allclose(r.correlations, fit_cca(X, Y).correlations, atol=1e-6)


def test_k_bounds(rng):
    X, Y = correlated_pair(rng)
    assert fit_cca(X, Y, k=1).a_weights.shape == (3, 1)
    with pytest.raises(InputError):
        fit_cca(X, Y, k=4)
    with pytest.raises(InputError):
        CcaInput.from_arrays(X[:3], Y[:3])


def test_input_centered(rng):
    X, Y = correlated_pair(rng)
    d = CcaInput.from_arrays(X + 100, Y - 7)
    assert np.abs(d.X.mean(0)).max() <= 1e-12
    assert np.abs(d.Y.mean(0)).max() <= 1e-12


def test_scale_option_same_correlations(rng):
    X, Y = correlated_pair(rng)
    a = fit_cca(X, Y, scale=True)
    b = fit_cca(X, Y)
    np.testing.assert_allclose(a.correlations, b.correlations, atol=1e-12)
    np.testing.assert_allclose((X - X.mean(0)) @ a.a_weights, b.U, atol=1e-10)


# ------------------------------------------------------------------ Wilks


def _fake_result(rho, p, q, T):
    r = fit_cca(np.random.default_rng(0).standard_normal((T, p)), np.random.default_rng(1).standard_normal((T, q)))
    r.all_correlations = np.asarray(rho, dtype=float)
    return r


def test_wilks_all_zero():
    w = wilks_lambda(_fake_result([0.0, 0.0], 2, 2, 50))
    np.testing.assert_array_equal(w.lambdas, [1.0, 1.0])
    np.testing.assert_array_equal(w.chi2, [0.0, 0.0])
    np.testing.assert_array_equal(w.pvalues, [1.0, 1.0])


def test_wilks_single_pair_formula():
    w = wilks_lambda(_fake_result([0.5], 1, 1, 101))
    expected = -(101 - 1 - 1.5) * math.log(0.75)
    assert w.chi2[0] == pytest.approx(expected, rel=1e-14)
    assert w.chi2[0] == pytest.approx(28.33669, abs=1e-5)
    assert w.df[0] == 1
    # chi-square(1) upper tail: P(Z^2 > x) = erfc(sqrt(x / 2))
    assert w.pvalues[0] == pytest.approx(math.erfc(math.sqrt(expected / 2)), rel=1e-10)
    assert w.pvalues[0] < 1e-6


def test_wilks_direct_evaluation(rng):
    X, Y = correlated_pair(rng)
    r = fit_cca(X, Y)
    w = wilks_lambda(r)
    rho = r.all_correlations
    T, p, q = r.n_obs, r.p, r.q
    for k in range(len(rho)):
        lam = np.prod([1 - x**2 for x in rho[k:]])
        assert w.lambdas[k] == pytest.approx(lam, rel=1e-12)
        assert w.chi2[k] == pytest.approx(-(T - 1 - (p + q + 1) / 2) * math.log(lam), rel=1e-12)
        assert w.df[k] == (p - k) * (q - k)
    assert np.all((w.lambdas > 0) & (w.lambdas <= 1))
    assert np.all((w.pvalues >= 0) & (w.pvalues <= 1))
    assert w.pvalues[0] < 0.01


def test_wilks_saturated():
    w = wilks_lambda(_fake_result([1.0, 0.3], 2, 2, 50))
    assert w.saturated[0] and w.pvalues[0] == 0.0 and np.isinf(w.chi2[0])
    assert not w.saturated[1]


# ---------------------------------------------------------------- variates


def test_variates_series_columns_and_events(rng):
    X, Y = correlated_pair(rng, T=60)
    years = np.arange(1600, 1660)
    r = fit_cca(X, Y)
    df = canonical_variates_series(r, years, components=2, filter_spec=FilterSpec(3.0))
    assert list(df.columns) == ["year", "U1", "V1", "U2", "V2", "U1_filtered", "V1_filtered", "U2_filtered", "V2_filtered", "event"]
    np.testing.assert_allclose(df["U1_filtered"], gaussian_filter(r.U[:, 0], FilterSpec(3.0)))
    assert df.loc[df.year == 1617, "event"].item() == ""
    assert df.loc[df.year == 1618, "event"].item() == "thirty-years-war"
    assert df.loc[df.year == 1635, "event"].item() == "thirty-years-war;marker"


def test_variates_identical_when_y_equals_x(rng):
    X = rng.standard_normal((40, 2))
    df = canonical_variates_series(fit_cca(X, X.copy()), np.arange(40))
    np.testing.assert_allclose(np.abs(df["U1"]), np.abs(df["V1"]), atol=1e-10)


def test_variates_length_mismatch(rng):
    X, Y = correlated_pair(rng, T=30)
    with pytest.raises(InputError):
        canonical_variates_series(fit_cca(X, Y), np.arange(29))


def test_planted_factor_recovered():
    X, Y, truth = gen_planted_cca(PlantedSpec(T=2000, dims=(6, 6), noise_sd=0.3, loadings=[np.ones(6) / 6**0.5 * 3] * 2, seed=4))
    r = fit_cca(X, Y)
    assert abs(_corr(r.U[:, 0], truth["factors"][:, 0])) >= 0.95


def test_planted_rho_near_population():
    X, Y, truth = gen_planted_cca(PlantedSpec(T=5000, dims=(3, 3), noise_sd=1.0, seed=1))
    assert truth["rho1"] == pytest.approx(0.5)
    assert abs(fit_cca(X, Y).correlations[0] - 0.5) <= 0.05
