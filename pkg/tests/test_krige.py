import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import lfilter

from conftest import constant_panel
from stgarch.core import CovarianceModel, ParameterPoint, unconditional_variance
from stgarch.covfit import ResidualPanel, extract_residuals
from stgarch.krige import (
    EPS_VAR,
    SingularSystemError,
    kriging_weights,
    ma_coefficients,
    predict_squared_process,
    predict_unconditional,
    predictor_covariance,
    predictor_covariance_matrix,
)

EXP = CovarianceModel("exponential", 1.0, 0.5, 0.0)


def _random_point(rng, p, q):
    a = rng.uniform(0.0, 0.3, q)
    b = rng.uniform(0.0, 0.9, p)
    s = a.sum() + b.sum()
    if s > 0.9:
        a, b = a * 0.9 / s, b * 0.9 / s
    return ParameterPoint(rng.uniform(0.05, 1.0), a, b)


def _impulse_response(pt, K):
    # psi(L) = (1 - sum beta_j L^j) / (1 - sum delta_i L^i)
    num = np.r_[1.0, -np.asarray(pt.beta)]
    den = np.r_[1.0, -pt.delta]
    imp = np.zeros(K + 1)
    imp[0] = 1.0
    return lfilter(num, den, imp)


def test_psi_garch11_example():
    ma = ma_coefficients(ParameterPoint(0.1, [0.2], [0.5]))
    np.testing.assert_allclose(ma.psi[:4], [1.0, 0.2, 0.14, 0.098], rtol=1e-14)
    np.testing.assert_allclose(ma.delta, [0.7])


def test_psi_white_noise_and_arch1():
    np.testing.assert_array_equal(ma_coefficients(ParameterPoint(0.1, [0.0], [0.0]), K=5).psi, [1, 0, 0, 0, 0, 0])
    ma = ma_coefficients(ParameterPoint(0.1, [0.3], [0.0]), K=20)
    np.testing.assert_allclose(ma.psi, 0.3 ** np.arange(21), rtol=1e-13)


@pytest.mark.parametrize("p, q", [(1, 1), (2, 1), (1, 2), (3, 2)])
def test_psi_matches_arma_impulse_response(p, q):
    rng = np.random.default_rng(p * 7 + q)
    for _ in range(20):
        pt = _random_point(rng, p, q)
        ma = ma_coefficients(pt)
        np.testing.assert_allclose(ma.psi, _impulse_response(pt, ma.truncation), rtol=1e-9, atol=1e-15)


def test_psi_autocovariance_oracle():
    # lag-1 autocorrelation of Z^2 implied by the MA weights equals the GARCH(1,1) closed form
    a, b = 0.2, 0.5
    psi = ma_coefficients(ParameterPoint(0.1, [a], [b])).psi
    rho1 = np.dot(psi[:-1], psi[1:]) / np.dot(psi, psi)
    assert rho1 == pytest.approx(a * (1 - a * b - b * b) / (1 - 2 * a * b - b * b), rel=1e-10)


def test_truncation_rule_and_decay_bound():
    pt = ParameterPoint(0.1, [0.2], [0.5])
    ma = ma_coefficients(pt)
    c, lam = ma.decay
    assert lam == pytest.approx(0.7)
    assert c * lam**ma.truncation < 1e-12 <= c * lam ** (ma.truncation - 1)
    k = np.arange(ma.truncation + 1)
    assert np.all(np.abs(ma.psi) <= c * lam**k * (1 + 1e-12))
    assert abs(ma.psi[-1]) < 1e-10 * np.abs(ma.psi).max()


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
def test_truncation_adequacy(seed, p, q):
    ma = ma_coefficients(_random_point(np.random.default_rng(seed), p, q))
    assert ma.psi[0] == 1.0
    assert abs(ma.psi[-1]) < 1e-10 * np.abs(ma.psi).max() or ma.truncation == 10_000


def test_ma_rejects_nonstationary():
    with pytest.raises(ValueError):
        ma_coefficients(ParameterPoint(0.1, [0.5], [0.5]))


def _ma_reconstruction(pt, zeta, K=None):
    ma = ma_coefficients(pt, K)
    return unconditional_variance(pt) + np.convolve(zeta, ma.psi)[: zeta.size]


def test_ma_matches_garch_recursion_on_same_zeta_path():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        pt = _random_point(rng, int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        panel = constant_panel(pt, m=1, T=600, seed=int(rng.integers(1e6)), burn_in=0, locations=[[0.5, 0.5]])
        z2 = panel.values[:, 0] ** 2
        zeta = z2 - panel.volatility[:, 0]
        worst = max(worst, np.max(np.abs(_ma_reconstruction(pt, zeta) - z2)[200:]))
    assert worst < 1e-8


def test_two_site_kriging_example():
    ks = kriging_weights([[0, 0], [1, 0]], (0.5, 0), EXP)
    assert ks.R[0, 1] == pytest.approx(math.exp(-2))
    np.testing.assert_allclose(ks.r, [math.exp(-1)] * 2)
    expected = math.exp(-1) / (1 + math.exp(-2))
    np.testing.assert_allclose(ks.gamma, [expected, expected], rtol=1e-13)
    assert expected == pytest.approx(0.324028, abs=1e-6)


def test_colocated_target_gives_unit_vector():
    sites = np.random.default_rng(1).uniform(size=(30, 2))
    ks = kriging_weights(sites, sites[7], EXP)
    e = np.zeros(30)
    e[7] = 1.0
    np.testing.assert_allclose(ks.gamma, e, atol=1e-10)


def test_symmetric_pair_gets_equal_weights():
    ks = kriging_weights([[0.2, 0.5], [0.8, 0.5], [0.5, 0.9]], (0.5, 0.5), EXP)
    assert ks.gamma[0] == pytest.approx(ks.gamma[1], rel=1e-12)


def test_nugget_only_on_diagonal_of_r():
    ks = kriging_weights([[0, 0], [1, 0]], (0.5, 0), EXP.with_params(nugget=0.3))
    np.testing.assert_allclose(np.diag(ks.R), 1.3)
    np.testing.assert_allclose(ks.r, [math.exp(-1)] * 2)
    ks = kriging_weights([[0, 0], [1, 0]], (0, 0), EXP.with_params(nugget=0.3))
    assert ks.r[0] == pytest.approx(1.3)


@given(st.integers(0, 10_000), st.integers(2, 25), st.floats(0.0, 0.5))
def test_kriging_system_residual(seed, m, nugget):
    rng = np.random.default_rng(seed)
    ks = kriging_weights(rng.uniform(size=(m, 2)), rng.uniform(size=2), EXP.with_params(nugget=nugget + 1e-6))
    assert ks.residual_norm < 1e-8 * max(np.linalg.norm(ks.r), 1e-300)
    np.testing.assert_array_equal(ks.R, ks.R.T)
    assert np.linalg.eigvalsh(ks.R).min() > -1e-8 * np.trace(ks.R)


def test_singular_system_reports_condition_number():
    # distinct sites whose correlation rounds to exactly one
    sites = [[0.0, 0.0], [1e-20, 0.0], [0.5, 0.5]]
    with pytest.raises(SingularSystemError) as info:
        kriging_weights(sites, (0.3, 0.3), EXP)
    assert info.value.condition_number > 1e12


def test_squared_route_scales():
    sites = [[0, 0], [1, 0]]
    ks = kriging_weights(sites, (0.5, 0), EXP, site_scale=[2.0, 3.0], target_scale=0.5, squared=True)
    R = 2 * np.array([[1.0, math.exp(-4)], [math.exp(-4), 1.0]]) * np.outer([2, 3], [2, 3])
    np.testing.assert_allclose(ks.R, R, rtol=1e-13)
    np.testing.assert_allclose(ks.r, 2 * math.exp(-2) * np.array([2.0, 3.0]) * 0.5, rtol=1e-13)


def _observed_setup(pt, T=400, m=8, seed=3):
    panel = constant_panel(pt, m=m, T=T, seed=seed)
    res = extract_residuals(panel, [pt] * m)
    return panel, res


def test_colocated_prediction_reproduces_squared_path(garch11):
    panel, res = _observed_setup(garch11)
    u = 4
    ks = kriging_weights(panel.locations, panel.locations[u], EXP)
    pred = predict_squared_process(panel.locations[u], garch11, res, ks)
    z2 = res.values[:, u] ** 2
    rel = np.abs(pred.squared - z2) / np.maximum(z2, 1e-3)
    assert rel[200:].max() < 1e-6
    # the recursion starts at zero, so the early part is floored
    assert pred.n_floored >= 0
    assert np.all(pred.volatility >= math.sqrt(EPS_VAR))


def test_zero_kriged_innovations_converge_to_unconditional(garch11):
    loc = np.array([[0, 0], [1, 1], [0, 1]])
    res = ResidualPanel(np.zeros((300, 3)), np.zeros((300, 3)), np.ones((300, 3)), np.zeros((300, 3)), loc)
    ks = kriging_weights(loc, (0.5, 0.5), EXP)
    pred = predict_squared_process((0.5, 0.5), garch11, res, ks)
    assert pred.squared[-1] == pytest.approx(1 / 3, rel=1e-12)
    gaps = np.abs(pred.squared - 1 / 3)
    np.testing.assert_allclose(gaps[1:40] / gaps[:39], 0.7, rtol=1e-8)
    start = predict_squared_process((0.5, 0.5), garch11, res, ks, init="unconditional")
    np.testing.assert_allclose(start.squared, 1 / 3, rtol=1e-12)


def test_prediction_checks_dimensions(garch11):
    panel, res = _observed_setup(garch11, T=50, m=4)
    ks = kriging_weights(panel.locations[:3], (0.5, 0.5), EXP)
    with pytest.raises(ValueError):
        predict_squared_process((0.5, 0.5), garch11, res, ks)
    ks = kriging_weights(panel.locations, (0.5, 0.5), EXP)
    with pytest.raises(ValueError):
        predict_squared_process((0.4, 0.5), garch11, res, ks)


def test_negative_predictions_are_floored_and_counted(garch11):
    loc = np.array([[0, 0], [1, 1]])
    zeta = np.full((20, 2), -5.0)
    res = ResidualPanel(zeta, zeta, np.ones((20, 2)), zeta, loc)
    ks = kriging_weights(loc, (0, 0), EXP)
    pred = predict_squared_process((0, 0), garch11, res, ks)
    assert pred.n_floored == 20
    np.testing.assert_allclose(pred.volatility, math.sqrt(EPS_VAR))


def test_predictor_covariance_examples(garch11):
    sites = np.random.default_rng(5).uniform(size=(6, 2))
    ks = kriging_weights(sites, (0.4, 0.6), EXP)
    ma = ma_coefficients(garch11)
    assert predictor_covariance(ma, ks, 2, 2) == pytest.approx(ks.variance, rel=1e-14)
    assert predictor_covariance(ma, ks, 5, 5 + ma.truncation + 1) == 0.0
    with pytest.raises(ValueError):
        predictor_covariance(ma, ks, 1, 3)
    # closed form for the full-overlap case: sum_k psi_k psi_{k+d}
    t, d = 500, 3
    ref = float(np.dot(ma.psi[: ma.truncation - d + 1], ma.psi[d:])) * ks.variance
    assert predictor_covariance(ma, ks, t, t + d) == pytest.approx(ref, rel=1e-13)


def test_predictor_covariance_nonincreasing_in_lag(garch11):
    ks = kriging_weights([[0, 0], [1, 0], [0, 1]], (0.3, 0.3), EXP)
    ma = ma_coefficients(garch11)
    for t in (2, 10, 120):
        vals = [predictor_covariance(ma, ks, t, t + d) for d in range(40)]
        assert np.all(np.diff(vals) <= 1e-15)


def test_predictor_covariance_at_site_is_site_variance(garch11):
    sites = np.random.default_rng(6).uniform(size=(5, 2))
    m = EXP.with_params(sill=2.5)
    ks = kriging_weights(sites, sites[2], m)
    assert predictor_covariance(ma_coefficients(garch11), ks, 2, 2) == pytest.approx(2.5, rel=1e-9)


@given(st.integers(0, 10_000))
def test_predictor_covariance_matrix_is_psd(seed):
    rng = np.random.default_rng(seed)
    pt = _random_point(rng, 1, 1)
    ks = kriging_weights(rng.uniform(size=(5, 2)), rng.uniform(size=2), EXP)
    C = predictor_covariance_matrix(ma_coefficients(pt), ks, range(2, 42))
    np.testing.assert_array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-8 * np.trace(C)


def test_kriged_predictions_shrink_relative_to_plugin(garch11):
    panel, res = _observed_setup(garch11, T=2000, m=15, seed=9)
    target = (0.5, 0.5)
    ks = kriging_weights(panel.locations, target, EXP.with_params(nugget=0.05))
    krig = predict_squared_process(target, garch11, res, ks)
    # plug-in reconstruction from a zeta path with the full site variance
    u = int(np.argmin(np.linalg.norm(panel.locations - target, axis=1)))
    plug = res.zeta[:, u]
    assert np.var(krig.kriged_zeta) <= np.var(plug)
    assert np.sum(np.abs(ks.gamma)) > 0


def test_predict_unconditional_delegates(garch11):
    assert predict_unconditional(garch11) == unconditional_variance(garch11)
    assert predict_unconditional(ParameterPoint(0.3, [0.0], [0.0])) == 0.3
