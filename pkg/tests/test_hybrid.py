import numpy as np
import pytest

from conftest import scheme1_spec
from mpgig_ingarch import hybrid
from mpgig_ingarch.em import EmConfig, fit
from mpgig_ingarch.exceptions import EstimationError
from mpgig_ingarch.hybrid import fit_h_gmcem
from mpgig_ingarch.methods import fit_series
from mpgig_ingarch.model import ModelShape, simulate
from mpgig_ingarch.qmle import QmleResult, d_from_dstar


@pytest.fixture(scope="module")
def hybrid_fit():
    spec = scheme1_spec()
    series = simulate(spec, 600, rng=np.random.default_rng(10))
    return series, *fit_h_gmcem(series, spec.shape)


def test_matrices_frozen_bitwise(hybrid_fit):
    _, res, qres = hybrid_fit
    for got, want in zip(res.theta_hat.a_mats + res.theta_hat.b_mats, qres.a_mats + qres.b_mats):
        assert np.array_equal(got, want)


def test_reports_stages(hybrid_fit):
    _, res, _ = hybrid_fit
    assert res.method == "h-gmcem"
    assert set(res.stage_times) == {"qmle", "gmcem"}
    assert res.wall_time == pytest.approx(sum(res.stage_times.values()))
    assert res.converged


def test_d_block_ascent(hybrid_fit):
    _, res, _ = hybrid_fit
    assert np.all(np.diff(res.loglik_trace) >= -1e-3)


def test_consistent_with_intercept_recovery():
    spec = scheme1_spec().with_params(alpha=-0.5, phi=2.0, d=np.array([0.5, 0.8]))
    for seed in range(3):
        series = simulate(spec, 1000, rng=np.random.default_rng(seed))
        res, qres = fit_h_gmcem(series, spec.shape)
        th = res.theta_hat
        assert np.allclose(th.d, d_from_dstar(qres.d_star, qres.a_mats, th.phi, th.alpha), atol=5e-3)


def test_agrees_with_gmcem_without_dependence():
    shape = ModelShape(2, (), ())
    truth = shape.spec([0.8, 1.2], 1.5, 0.5)
    series = simulate(truth, 2000, rng=np.random.default_rng(11))
    cfg = EmConfig(tol=1e-6, max_iter=3000)
    a = fit_h_gmcem(series, shape, cfg)[0].theta_hat.big_theta
    b = fit(series, shape, cfg).theta_hat.big_theta
    assert np.allclose(a, b, rtol=0.02)


def test_dispatch():
    spec = scheme1_spec()
    series = simulate(spec, 200, rng=np.random.default_rng(12))
    assert fit_series(series, spec.shape, "h_gmcem").method == "h-gmcem"
    assert fit_series(series, spec.shape, "MCEM").method == "mcem"
    with pytest.raises(ValueError):
        fit_series(series, spec.shape, "newton")


def test_stage_failure_is_named(monkeypatch):
    spec = scheme1_spec()
    series = simulate(spec, 100, rng=np.random.default_rng(13))

    def broken(series, shape):
        nan = np.full((2, 2), np.nan)
        return QmleResult(shape, np.full(2, np.nan), (nan,), (nan,), np.nan, False)

    monkeypatch.setattr(hybrid, "fit_qmle", broken)
    with pytest.raises(EstimationError) as info:
        fit_h_gmcem(series, spec.shape)
    assert info.value.stage == "qmle"
