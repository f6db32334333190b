import math

import numpy as np
import pytest
from scipy import integrate, optimize

from conftest import scheme1_spec
from mpgig_ingarch import gig
from mpgig_ingarch.em import (
    EmConfig,
    EStepStats,
    e_step,
    fit,
    gem_update,
    initial_spec,
    maximize_q1,
    posterior_gig,
    q1,
    q2_and_gradient,
)
from mpgig_ingarch.model import CountSeries, ModelShape, ModelSpec, cond_log_lik, filter_means, simulate
from mpgig_ingarch.mpgig import MpgigParams, log_pmf, log_pmf_rows
from mpgig_ingarch.special_fn import log_bessel_k


def iid_case(lam, y, phi, alpha):
    """Lag-free spec with rate ``lam``; row 0 of the series holds ``y``."""
    shape = ModelShape(len(lam), (), ())
    spec = shape.spec(np.log(lam), phi, alpha)
    series = CountSeries(np.vstack([y, y]).astype(int))
    return spec, series


def random_instance(r, p=2, T=25, constraint="full"):
    shape = ModelShape(p, (1,), (1,), constraint)
    theta = r.uniform(-0.3, 0.3, shape.n_theta)
    theta[:p] = r.uniform(0.0, 1.0, p)
    spec = shape.spec(theta, float(r.uniform(0.3, 3)), float(r.uniform(-2, 2)))
    series = CountSeries(r.poisson(3.0, size=(T, p)))
    return spec, series


def test_posterior_gig_example():
    spec, series = iid_case([1.0], [0], 1.0, 0.5)
    post = posterior_gig(spec, series, 0)
    assert (post.a, post.b, post.alpha) == pytest.approx((3.0, 1.0, 0.5), abs=1e-14)
    with pytest.raises(IndexError):
        posterior_gig(spec, series, 2)


def test_posterior_mean_is_zeta(spec1):
    series = simulate(spec1, 30, rng=np.random.default_rng(2))
    stats = e_step(spec1, series)
    for t in (1, 7, 29):
        assert gig.moment(posterior_gig(spec1, series, t), 1) == pytest.approx(stats.zeta[t - 1], rel=1e-12)


@pytest.mark.parametrize("lam,y,phi,alpha", [([1.0, 2.5], [0, 4], 0.5, 1.5), ([0.3], [2], 3.0, -1.2)])
def test_posterior_density_is_bayes_rule(lam, y, phi, alpha):
    spec, series = iid_case(lam, y, phi, alpha)
    post = posterior_gig(spec, series, 0)
    log_marg = log_pmf(MpgigParams(lam, phi, alpha), y)
    prior = gig.GigParams.symmetric(phi, alpha)
    for z in (0.05, 0.4, 1.0, 3.0, 9.0):
        joint = gig.log_pdf(prior, z) + sum(yi * math.log(li * z) - li * z - math.lgamma(yi + 1) for yi, li in zip(y, lam))
        assert math.exp(joint - log_marg) == pytest.approx(math.exp(gig.log_pdf(post, z)), abs=1e-8)
    # and the Bayes-rule density integrates to one by quadrature
    f = lambda z: math.exp(gig.log_pdf(prior, z) + sum(yi * math.log(li * z) - li * z - math.lgamma(yi + 1) for yi, li in zip(y, lam)) - log_marg)  # noqa: E731
    assert integrate.quad(f, 0, np.inf, limit=400)[0] == pytest.approx(1.0, abs=1e-8)


def test_exact_stats_match_posterior_quadrature(oracles):
    cases = oracles["posterior"]
    assert len(cases) == 100
    for c in cases:
        spec, series = iid_case(c["lam"], c["y"], c["phi"], c["alpha"])
        st = e_step(spec, series)
        for key, got in (("zeta", st.zeta[0]), ("kappa", st.kappa[0]), ("xi", st.xi[0])):
            want = float(c[key])
            assert abs(got - want) <= 1e-7 * max(1.0, abs(want)), (key, c)


def test_zero_counts_large_phi(oracles):
    spec, series = iid_case([0.7, 1.3], [0, 0], 20.0, -0.5)
    assert e_step(spec, series).zeta[0] == pytest.approx(float(oracles["examples"]["zeta_y0_phi20"]), rel=1e-10)


def test_cauchy_schwarz(spec1):
    series = simulate(spec1, 300, rng=np.random.default_rng(3))
    st = e_step(spec1, series)
    assert np.all(st.zeta > 0) and np.all(st.kappa > 0)
    assert np.all(st.zeta * st.kappa >= 1.0)


def _mc_fixture():
    spec = scheme1_spec()
    return spec, simulate(spec, 10, rng=np.random.default_rng(44))


def test_full_mc_within_three_se():
    spec, series = _mc_fixture()
    exact = e_step(spec, series)
    cfg = EmConfig(e_step_mode="full_mc", m=10**5)
    mc = e_step(spec, series, cfg, np.random.default_rng(0))
    a = 2 * filter_means(spec, series).lam[1:].sum(axis=1) + spec.phi
    order = series.data[1:].sum(axis=1) + spec.alpha
    for t in range(exact.zeta.size):
        post = gig.GigParams(a[t], spec.phi, order[t])
        sd = math.sqrt(gig.moment(post, 2) - gig.moment(post, 1) ** 2)
        assert abs(mc.zeta[t] - exact.zeta[t]) <= 3 * sd / math.sqrt(1e5)


def test_full_mc_error_shrinks_with_m():
    spec, series = _mc_fixture()
    exact = e_step(spec, series)
    errs = []
    for m in (10**2, 10**3, 10**4, 10**5):
        mc = e_step(spec, series, EmConfig(e_step_mode="full_mc", m=m), np.random.default_rng(1))
        errs.append(np.median(np.abs(np.concatenate([mc.zeta - exact.zeta, mc.kappa - exact.kappa, mc.xi - exact.xi]))))
    assert all(b < a for a, b in zip(errs, errs[1:])), errs


def test_full_mc_is_deterministic_and_needs_rng(spec1):
    series = simulate(spec1, 20, rng=np.random.default_rng(5))
    cfg = EmConfig(e_step_mode="full_mc", m=50)
    a = e_step(spec1, series, cfg, np.random.default_rng(9))
    b = e_step(spec1, series, cfg, np.random.default_rng(9))
    assert np.array_equal(a.zeta, b.zeta) and np.array_equal(a.xi, b.xi)
    with pytest.raises(ValueError):
        e_step(spec1, series, cfg)


def test_q1_example():
    st = EStepStats(np.ones(1), np.ones(1), np.zeros(1))
    assert q1(1.0, 0.0, st, 1) == pytest.approx(-log_bessel_k(0.0, 1.0) - 1.0, rel=1e-14)


@pytest.mark.parametrize("phi,alpha", [(0.5, 1.5), (3.0, -2.0), (0.05, 0.2)])
def test_q1_phi_gradient(phi, alpha):
    from mpgig_ingarch.em import _q1_grad

    r = np.random.default_rng(6)
    st = EStepStats(r.uniform(0.5, 2, 40), r.uniform(0.5, 2, 40), r.normal(0, 0.3, 40))
    g = _q1_grad(phi, alpha, st, 40)
    h = 1e-6 * phi
    fd_phi = (q1(phi + h, alpha, st) - q1(phi - h, alpha, st)) / (2 * h)
    fd_alpha = (q1(phi, alpha + 1e-5, st) - q1(phi, alpha - 1e-5, st)) / 2e-5
    assert g[0] == pytest.approx(fd_phi, rel=1e-6, abs=1e-7)
    assert g[1] == pytest.approx(fd_alpha, rel=1e-6, abs=1e-7)


def test_q1_peaks_near_truth(spec1):
    series = simulate(spec1, 20000, rng=np.random.default_rng(12))
    phi, alpha = maximize_q1(e_step(spec1, series))
    assert phi == pytest.approx(0.5, rel=0.1)
    assert alpha == pytest.approx(1.5, rel=0.1)


def test_maximize_q1_symmetric_stats():
    r = np.random.default_rng(3)
    z = r.uniform(0.5, 2.0, 200)
    st = EStepStats(np.concatenate([z, 1 / z]), np.concatenate([1 / z, z]), np.zeros(400))
    phi, alpha = maximize_q1(st)
    assert abs(alpha) < 1e-6
    assert q1(phi, alpha, st) >= q1(1.0, 0.0, st)


@pytest.mark.parametrize("seed", range(5))
def test_maximize_q1_matches_grid(seed):
    r = np.random.default_rng(seed)
    phi0, alpha0 = 10 ** r.uniform(-0.5, 1), r.uniform(-3, 3)
    z = gig.sample(gig.GigParams.symmetric(phi0, alpha0), 400, r)
    st = EStepStats(z, 1 / z, np.log(z))
    phis = np.geomspace(0.05, 50, 241)
    alphas = np.linspace(-5, 5, 201)
    vals = np.array([[q1(p, a, st) for a in alphas] for p in phis])
    i, j = np.unravel_index(vals.argmax(), vals.shape)
    phi, alpha = maximize_q1(st)
    assert q1(phi, alpha, st) >= vals.max()
    assert abs(math.log(phi / phis[i])) <= math.log(phis[1] / phis[0])
    assert abs(alpha - alphas[j]) <= alphas[1] - alphas[0]
    # stationarity
    from mpgig_ingarch.em import _q1_grad

    g = _q1_grad(phi, alpha, st, 400) / 400
    assert np.all(np.abs(g * [phi, 1.0]) < 1e-7)


def test_maximize_q1_never_worse_than_start():
    st = EStepStats(np.full(5, 2.0), np.full(5, 0.7), np.full(5, 0.3))
    for start in [(0.3, 1.0), (5.0, -2.0), (1.0, 0.0)]:
        phi, alpha = maximize_q1(st, start=start)
        assert q1(phi, alpha, st) >= q1(*start, st)


def _fd_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(x.size):
        up, dn = x.copy(), x.copy()
        up[k] += h
        dn[k] -= h
        g[k] = (f(up) - f(dn)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(20))
def test_q2_gradient_matches_finite_differences(seed):
    r = np.random.default_rng(200 + seed)
    spec, series = random_instance(r, p=2 + seed % 2, constraint=["full", "diagonal"][seed % 2])
    st = e_step(spec, series)
    theta = spec.theta
    val, grad = q2_and_gradient(theta, st, series, spec.shape)
    fd = _fd_grad(lambda th: q2_and_gradient(th, st, series, spec.shape)[0], theta)
    assert np.all(np.abs(grad - fd) <= 1e-6 * np.maximum(np.abs(fd), 1.0))


def test_q2_gradient_vanishes_at_fixed_point():
    r = np.random.default_rng(1)
    spec, series = random_instance(r, p=1, T=30)
    series = CountSeries(np.maximum(series.data, 1))
    lam = filter_means(spec, series).lam[1:, 0]
    st = EStepStats(series.data[1:, 0] / lam, np.ones(29), np.zeros(29))
    _, grad = q2_and_gradient(spec.theta, st, series, spec.shape)
    assert np.allclose(grad, 0.0, atol=1e-10)
    step = gem_update(spec.theta, st, series, spec.shape)
    assert np.allclose(step.theta, spec.theta, atol=1e-7) and not step.stalled


def test_gem_update_exact_zero_gradient():
    # y = 1, zeta = 1, d = 0 makes every residual exactly zero
    shape = ModelShape(2, (), ())
    series = CountSeries(np.ones((10, 2), dtype=int))
    st = EStepStats(np.ones(10), np.ones(10), np.zeros(10))
    out = gem_update(np.zeros(2), st, series, shape)
    assert np.array_equal(out.theta, np.zeros(2)) and not out.stalled and out.halvings == 0


def test_q2_decreases_with_rate_on_zero_series():
    shape = ModelShape(2)
    series = CountSeries(np.zeros((20, 2), dtype=int))
    st = EStepStats(np.ones(19), np.ones(19), np.zeros(19))
    theta = np.zeros(shape.n_theta)
    base = q2_and_gradient(theta, st, series, shape)[0]
    theta[0] = 0.5
    assert q2_and_gradient(theta, st, series, shape)[0] < base


def test_gem_step_solves_score_surrogate():
    # one free coordinate: the step maximizes S*delta - 0.5*sum(s_t^2)*delta^2 exactly
    r = np.random.default_rng(4)
    shape = ModelShape(1, (), ())
    series = CountSeries(r.poisson(4.0, size=(50, 1)))
    st = EStepStats(r.uniform(0.5, 1.5, 50), np.ones(50), np.zeros(50))
    theta = np.array([1.0])
    s = series.data[:, 0] - st.zeta * math.exp(1.0)
    delta = s.sum() / ((s * s).sum() + 1e-8)
    out = gem_update(theta, st, series, shape)
    assert out.halvings == 0
    assert out.theta[0] == pytest.approx(1.0 + delta, rel=1e-12)
    surrogate = lambda x: s.sum() * x - 0.5 * (s * s).sum() * x * x  # noqa: E731
    best = optimize.minimize_scalar(lambda x: -surrogate(x)).x
    assert out.theta[0] - 1.0 == pytest.approx(best, rel=1e-6)


@pytest.mark.parametrize("seed", range(100))
def test_gem_update_never_decreases_q2(seed):
    r = np.random.default_rng(1000 + seed)
    spec, series = random_instance(r, p=2, T=30, constraint=["full", "band:1"][seed % 2])
    st = e_step(spec, series)
    theta = spec.theta + r.normal(0, 0.2, spec.shape.n_theta)
    before = q2_and_gradient(theta, st, series, spec.shape)[0]
    out = gem_update(theta, st, series, spec.shape)
    assert q2_and_gradient(out.theta, st, series, spec.shape)[0] >= before


def test_gem_update_restricted_coordinates():
    r = np.random.default_rng(7)
    spec, series = random_instance(r)
    st = e_step(spec, series)
    theta = spec.theta + 0.1
    out = gem_update(theta, st, series, spec.shape, free=np.arange(2))
    assert np.array_equal(out.theta[2:], theta[2:])


def test_trace_monotone_and_length(spec1):
    series = simulate(spec1, 300, rng=np.random.default_rng(31))
    for accelerate in (True, False):
        res = fit(series, spec1.shape, EmConfig(accelerate=accelerate, max_iter=200))
        assert res.loglik_trace.size == res.iterations
        assert np.all(np.diff(res.loglik_trace) >= -1e-3)
        assert res.converged
        assert res.loglik == pytest.approx(cond_log_lik(res.theta_hat, series), rel=1e-12)


def test_mcem_and_gmcem_reach_same_optimum(spec1):
    series = simulate(spec1, 400, rng=np.random.default_rng(32))
    a = fit(series, spec1.shape, EmConfig(variant="gmcem", tol=1e-5, max_iter=2000))
    b = fit(series, spec1.shape, EmConfig(variant="mcem", tol=1e-5, max_iter=2000))
    assert a.loglik == pytest.approx(b.loglik, abs=0.05)


def test_full_mc_fit_is_reproducible(spec1):
    series = simulate(spec1, 150, rng=np.random.default_rng(33))
    cfg = EmConfig(e_step_mode="full_mc", m=30, max_iter=5, seed=4)
    a = fit(series, spec1.shape, cfg)
    b = fit(series, spec1.shape, cfg)
    assert np.array_equal(a.theta_hat.big_theta, b.theta_hat.big_theta)
    assert np.array_equal(a.loglik_trace, b.loglik_trace)


def test_nonconvergence_is_reported(spec1):
    series = simulate(spec1, 200, rng=np.random.default_rng(34))
    res = fit(series, spec1.shape, EmConfig(max_iter=1, tol=1e-12))
    assert not res.converged and res.iterations == 1


def test_iid_fit_matches_grid_mle():
    shape = ModelShape(1, (), ())
    truth = shape.spec([0.8], 2.0, -1.0)
    series = simulate(truth, 4000, rng=np.random.default_rng(35))
    res = fit(series, shape, EmConfig(tol=1e-6, max_iter=3000))
    vals, counts = np.unique(series.data[:, 0], return_counts=True)

    def loglik(phi, alpha, d):
        lam = np.full((vals.size, 1), math.exp(d))
        return float((counts * log_pmf_rows(lam, vals[:, None], phi, alpha)).sum())

    phis = np.geomspace(0.05, 50, 121)
    alphas = np.linspace(-5, 5, 101)
    best = (-np.inf, None)
    for p in phis:
        for a in alphas:
            r = optimize.minimize_scalar(lambda d: -loglik(p, a, d), bounds=(-3, 4), method="bounded", options={"xatol": 1e-8})
            if -r.fun > best[0]:
                best = (-r.fun, (p, a, r.x))
    ll_fit = loglik(res.theta_hat.phi, res.theta_hat.alpha, res.theta_hat.d[0])
    assert ll_fit >= best[0] - 1e-6
    p, a, _ = best[1]
    assert abs(math.log(res.theta_hat.phi / p)) <= 2 * math.log(phis[1] / phis[0])
    assert abs(res.theta_hat.alpha - a) <= 2 * (alphas[1] - alphas[0])


def test_self_consistency_large_t(spec1):
    est = []
    for rep in range(20):
        series = simulate(spec1, 5000, rng=np.random.default_rng([5000, rep]))
        th = fit(series, spec1.shape, EmConfig(seed=rep)).theta_hat
        est.append((th.phi, th.alpha))
    med = np.median(np.array(est), axis=0)
    assert med[0] == pytest.approx(0.5, rel=0.1)
    assert med[1] == pytest.approx(1.5, rel=0.1)


def test_permutation_equivariance():
    r = np.random.default_rng(40)
    shape = ModelShape(3)
    theta = np.concatenate([[0.5, 0.2, 0.8], np.diag([0.3, 0.1, 0.2]).ravel("F"), np.diag([0.3, 0.4, 0.2]).ravel("F")])
    spec = shape.spec(theta, 1.0, 0.5)
    series = simulate(spec, 500, rng=r)
    perm = [2, 0, 1]
    cfg = EmConfig(tol=1e-6, max_iter=2000)
    a = fit(series, shape, cfg).theta_hat
    b = fit(CountSeries(series.data[:, perm]), shape, cfg).theta_hat
    assert np.allclose(a.permuted(perm).big_theta, b.big_theta, atol=2e-3)


def test_initial_spec(spec1):
    series = simulate(spec1, 100, rng=np.random.default_rng(41))
    init = initial_spec(series, spec1.shape)
    assert (init.phi, init.alpha) == (1.0, 0.0)
    assert np.all(init.theta[2:] == 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        EmConfig(m=0)
    with pytest.raises(ValueError):
        EmConfig(tol=0)
    with pytest.raises(ValueError):
        EmConfig(variant="em")
    with pytest.raises(ValueError):
        EmConfig(e_step_mode="magic")
