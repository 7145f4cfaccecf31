import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from gradkrig import kernels, testfns
from gradkrig.gp import FitError, GPModel, ObservationSet, fit
from gradkrig.interpolation import OutOfGridError
from gradkrig.kernels import KernelSpec


def franke_data(n, seed=0, gradients=True):
    return testfns.sample_dataset(testfns.franke, n, seed=seed, gradients=gradients)


def model_on(data, backend="exact", ell=0.2, s=0.3, noise=1e-2, grad_noise=1e-2, **kw):
    m = GPModel(KernelSpec.se(ell, s), noise, grad_noise, backend=backend, **kw)
    return m.set_data(data)


def dense_posterior(data, ell, s, noise, grad_noise, T, grad=True):
    """Textbook GP equations written out independently of GPModel."""
    k = KernelSpec.se(ell, s)
    n = data.n
    K = kernels.assemble_dense(k, data.X, with_derivatives=grad)
    nd = np.full(K.shape[0], grad_noise**2)
    nd[:n] = noise**2
    K += np.diag(nd)
    mu0 = data.y.mean()
    r = data.y - mu0
    if grad:
        r = np.concatenate([r, data.dY.T.ravel()])
    C = kernels.assemble_dense(k, T, data.X, with_derivatives=True)[:len(T), :K.shape[0]]
    mean = mu0 + C @ np.linalg.solve(K, r)
    var = s**2 - np.einsum("ij,ji->i", C, np.linalg.solve(K, C.T))
    return mean, var, K, r


# -- observations -------------------------------------------------------------------

def test_observation_set_validation():
    with pytest.raises(ValueError):
        ObservationSet(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        ObservationSet(np.zeros((2, 2)), [0.0, np.nan])
    with pytest.raises(ValueError):
        ObservationSet(np.zeros((2, 2)), [0.0, 1.0], np.full((2, 2), np.inf))
    d = ObservationSet(np.eye(2), [1.0, 2.0], np.ones((2, 2)))
    assert d.has_gradients and not d.without_gradients().has_gradients
    P = np.array([[1.0], [0.0]])
    assert d.project(P).dY.shape == (2, 1)


# -- likelihood -----------------------------------------------------------------------

def test_lml_single_point():
    m = GPModel(KernelSpec.se(1.0, 1.0), noise=1.0).set_data(ObservationSet([[0.3]], [2.0]))
    assert m.log_marginal_likelihood() == pytest.approx(-0.5 * (np.log(2) + np.log(2 * np.pi)))


def test_lml_matches_multivariate_normal(rng):
    data = franke_data(30, seed=1)
    m = model_on(data, grad_noise=0.05)
    _, _, K, r = dense_posterior(data, 0.2, 0.3, 1e-2, 0.05, data.X[:1])
    ref = multivariate_normal(np.zeros(r.size), K).logpdf(r)
    assert m.log_marginal_likelihood() == pytest.approx(ref, rel=1e-10)


def test_lml_iterative_backends_agree_with_exact():
    data = franke_data(100, seed=2)
    kw = dict(ell=0.2, s=0.3, noise=0.02, grad_noise=0.1)
    exact = model_on(data, **kw).log_marginal_likelihood()
    # 50 Lanczos steps under-resolve the spectrum at this noise level
    est = dict(tol=1e-8, num_probes=200, lanczos_steps=100, **kw)
    dski = model_on(data, "dski", spacing_factor=8, **est)
    dskip = model_on(data, "dskip", rank=200, **est)
    assert dski.log_marginal_likelihood() == pytest.approx(exact, rel=1e-2)
    assert dskip.log_marginal_likelihood() == pytest.approx(exact, rel=1e-2)


def test_lml_gradient_matches_finite_differences():
    data = franke_data(40, seed=3)
    m = model_on(data, ell=0.25, s=0.4, noise=0.03, grad_noise=0.2)
    g = m.lml_gradient()
    theta = m.theta
    h = 1e-5
    for i in range(4):
        vals = []
        for sgn in (1, -1):
            t = theta.copy()
            t[i] += sgn * h
            vals.append(m.copy_unfitted().set_data(data).set_theta(t).log_marginal_likelihood())
        fd = (vals[0] - vals[1]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_stochastic_gradient_close_to_exact():
    data = franke_data(40, seed=3)
    m = model_on(data, ell=0.25, s=0.4, noise=0.03, grad_noise=0.2)
    g = m.lml_gradient()
    gs, se = m.lml_gradient(stochastic=True, num_probes=200, return_stderr=True)
    assert np.all(np.abs(gs - g) <= 4 * se + 1e-8)


def test_noise_gradient_of_complexity_term_is_negative_contribution():
    # with r = 0 only -1/2 log|K~| remains; its noise derivative is positive
    data = ObservationSet(np.random.default_rng(0).random((15, 2)), np.full(15, 3.0))
    g = GPModel(KernelSpec.se(0.3, 1.0), 0.1).set_data(data).lml_gradient()
    assert g[2] < 0


def test_spline_and_no_gradient_masks():
    data = franke_data(10).without_gradients()
    m = GPModel(KernelSpec.spline([0, 0], [1, 1]), 0.1).set_data(data)
    assert list(m.active_params()) == [False, True, True, False]
    assert np.all(m.lml_gradient()[[0, 3]] == 0)


# -- fitting --------------------------------------------------------------------------

def test_fit_zero_iterations_is_noop():
    m = model_on(franke_data(20))
    theta = m.theta.copy()
    res = fit(m, maxiter=0)
    assert np.array_equal(m.theta, theta) and res.iterations == 0


def test_fit_history_non_decreasing():
    m = model_on(franke_data(30, seed=4), ell=0.5, s=1.0, noise=0.1, grad_noise=0.1)
    res = fit(m, maxiter=30, restarts=1)
    h = np.array(res.history)
    assert np.all(np.diff(h) >= -1e-8 * np.abs(h[:-1]))
    assert res.log_likelihood >= h[0]


def _gp_sample(rng, n, ell, s, noise):
    X = rng.random((n, 2))
    K = kernels.assemble_dense(KernelSpec.se(ell, s), X) + noise**2 * np.eye(3 * n)
    f = np.linalg.cholesky(K) @ rng.standard_normal(3 * n)
    return ObservationSet(X, f[:n], f[n:].reshape(2, n).T)


def test_fit_recovers_lengthscale():
    ell = 0.3
    est = []
    for seed in range(10):
        data = _gp_sample(np.random.default_rng(seed), 150, ell, 1.0, 1e-2)
        m = GPModel(KernelSpec.se(0.6, 0.5), 0.05, 0.05).set_data(data)
        fit(m, maxiter=50, restarts=3, seed=seed)
        est.append(m.kernel.lengthscale)
    assert abs(np.median(est) - ell) <= 0.25 * ell


def test_fit_failure_restores_theta(monkeypatch):
    m = model_on(franke_data(10))
    theta = m.theta.copy()

    def boom(self):
        raise np.linalg.LinAlgError("forced")

    monkeypatch.setattr(GPModel, "log_marginal_likelihood", boom)
    with pytest.raises(FitError) as exc:
        fit(m, maxiter=5, restarts=2)
    assert len(exc.value.diagnostics) == 2
    assert np.allclose(m.theta, theta)


# -- prediction -----------------------------------------------------------------------

def test_exact_predictions_match_textbook(rng):
    data = franke_data(40, seed=5)
    T = rng.random((25, 2))
    m = model_on(data, noise=0.05, grad_noise=0.1)
    mean, var, _, _ = dense_posterior(data, 0.2, 0.3, 0.05, 0.1, T)
    assert np.allclose(m.predict_mean(T), mean, rtol=1e-8, atol=1e-12)
    assert np.allclose(m.predict_variance_exact(T), var, rtol=1e-8, atol=1e-12)


def test_noiseless_interpolation_at_training_points():
    data = franke_data(25, seed=6)
    m = model_on(data, noise=1e-7, grad_noise=1e-7)
    assert np.allclose(m.predict_mean(data.X), data.y, atol=1e-6)
    assert np.all(m.predict_variance_exact(data.X) <= 1e-14 + 1e-6)


def test_prior_variance_far_from_data():
    m = model_on(franke_data(20), s=0.7)
    assert m.predict_variance_exact([[50.0, 50.0]])[0] == pytest.approx(0.49, rel=1e-10)


def test_gradients_reduce_variance(rng):
    data = franke_data(50, seed=7)
    T = rng.random((200, 2))
    with_g = model_on(data).predict_variance_exact(T)
    without = model_on(data.without_gradients()).predict_variance_exact(T)
    assert np.all(with_g < without - 1e-12)


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_adding_a_point_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    data = franke_data(12, seed=seed % 1000)
    T = rng.random((30, 2))
    v_small = model_on(data.subset(np.arange(11))).predict_variance_exact(T)
    v_big = model_on(data).predict_variance_exact(T)
    assert np.all(v_big <= v_small + 1e-12)


def test_predict_mean_gradient_matches_fd(rng):
    for backend in ("exact", "dski", "dskip"):
        m = model_on(franke_data(60, seed=8), backend, tol=1e-10)
        T = rng.uniform(0.2, 0.8, (5, 2))
        _, g = m.predict_mean(T, return_grad=True)
        h = 1e-5
        fd = np.stack([(m.predict_mean(T + h * e) - m.predict_mean(T - h * e)) / (2 * h)
                       for e in np.eye(2)], axis=1)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-6), backend


def test_backends_interchangeable_means(rng):
    data = franke_data(300, seed=9)
    T = rng.uniform(0.05, 0.95, (200, 2))
    ref = model_on(data).predict_mean(T)
    for backend, kw in [("dski", {"spacing_factor": 8}), ("dskip", {"rank": 300})]:
        mu = model_on(data, backend, tol=1e-8, **kw).predict_mean(T)
        assert np.sqrt(np.mean((mu - ref) ** 2)) / np.sqrt(np.mean(ref**2)) < 5e-3, backend


def test_dski_mean_close_to_exact_on_franke(rng):
    data = franke_data(1000, seed=10)
    T = rng.uniform(0.05, 0.95, (500, 2))
    kw = dict(ell=0.15, s=0.3, noise=1e-3, grad_noise=1e-2)
    ref = model_on(data, **kw).predict_mean(T)
    mu = model_on(data, "dski", tol=1e-8, **kw).predict_mean(T)
    assert np.sqrt(np.mean((mu - ref) ** 2)) / np.sqrt(np.mean(ref**2)) <= 5e-3


def test_dski_out_of_grid_prediction():
    m = model_on(franke_data(30), "dski")
    with pytest.raises(OutOfGridError):
        m.predict_mean([[10.0, 10.0]])


# -- variance estimators ---------------------------------------------------------------

def test_pivchol_full_rank_equals_exact(rng):
    m = model_on(franke_data(30, seed=11), precond_rank=1000)
    T = rng.random((40, 2))
    assert np.allclose(m.predict_variance_pivchol(T), m.predict_variance_exact(T), atol=1e-8)


def test_pivchol_variance_never_exceeds_exact(rng):
    # M = D + F F^T is dominated by K~, so the pivoted-Cholesky variance is a lower bound
    m = model_on(franke_data(100, seed=12), precond_rank=20)
    T = rng.random((100, 2))
    assert np.all(m.predict_variance_pivchol(T) <= m.predict_variance_exact(T) + 1e-10)


def test_randomized_variance_zero_probes_is_pivchol(rng):
    m = model_on(franke_data(40, seed=13), precond_rank=10)
    T = rng.random((20, 2))
    assert np.array_equal(m.predict_variance_randomized(T, num_probes=0),
                          m.predict_variance_pivchol(T))


@pytest.mark.parametrize("cv", [True, False])
def test_randomized_variance_is_unbiased(rng, cv):
    m = model_on(franke_data(100, seed=14), precond_rank=30)
    T = rng.random((60, 2))
    exact = m.predict_variance_exact(T)
    est, se = m.predict_variance_randomized(T, num_probes=200, seed=1, control_variate=cv,
                                            return_stderr=True)
    assert np.mean(np.abs(est - exact) <= 3 * se + 1e-12) >= 0.9


def test_control_variate_helps_once_preconditioner_captures_kernel(rng):
    # at low rank M^{-1} overshoots K~^{-1} by up to 1/sigma^2 and the control variate hurts
    T = rng.random((60, 2))
    se = {}
    for r in (30, 100):
        m = model_on(franke_data(100, seed=14), precond_rank=r)
        se[r] = np.median(m.predict_variance_randomized(T, 200, seed=1, return_stderr=True)[1])
    _, plain = m.predict_variance_randomized(T, 200, seed=1, control_variate=False,
                                             return_stderr=True)
    assert se[100] < 1e-3 * np.median(plain) < se[30]


def test_predict_with_gradients_matches_fd(rng):
    m = model_on(franke_data(40, seed=15), precond_rank=200)
    U = rng.uniform(0.2, 0.8, (4, 2))
    mu, dmu, var, dvar = m.predict_with_gradients(U, variance="exact")
    h = 1e-6
    for j, e in enumerate(np.eye(2)):
        up = m.predict_with_gradients(U + h * e, variance="exact")
        dn = m.predict_with_gradients(U - h * e, variance="exact")
        assert np.allclose(dmu[:, j], (up[0] - dn[0]) / (2 * h), rtol=1e-5, atol=1e-7)
        assert np.allclose(dvar[:, j], (up[2] - dn[2]) / (2 * h), rtol=1e-4, atol=1e-7)


# -- serialization --------------------------------------------------------------------

@pytest.mark.parametrize("backend", ["exact", "dski"])
def test_save_load_round_trip(tmp_path, rng, backend):
    data = franke_data(30, seed=16)
    m = model_on(data, backend)
    path = tmp_path / "m.json"
    m.save(path, data_path="train.csv")
    m2 = GPModel.load(path).set_data(data)
    T = rng.uniform(0.2, 0.8, (10, 2))
    assert np.allclose(m.predict_mean(T), m2.predict_mean(T), rtol=1e-12)
    assert m2.grid == m.grid


def test_load_rejects_foreign_json():
    with pytest.raises(ValueError):
        GPModel.from_dict({"format": "other"})
