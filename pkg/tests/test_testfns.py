import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradkrig import subspace, testfns
from gradkrig.testfns import OutOfDomainError

ALL = [testfns.get(n) for n in sorted(testfns.REGISTRY)]


@pytest.mark.parametrize("fn", ALL, ids=lambda f: f.name)
def test_gradients_match_central_differences(fn):
    rng = np.random.default_rng(0)
    X = fn.lower + (0.05 + 0.9 * rng.random((20, fn.dim))) * fn.width
    _, G = fn.evaluate(X)
    h = 1e-6 * fn.width
    fd = np.stack([(fn.value(X + h[j] * e) - fn.value(X - h[j] * e)) / (2 * h[j])
                   for j, e in enumerate(np.eye(fn.dim))], axis=1)
    assert np.allclose(G, fd, rtol=1e-5, atol=1e-5 * np.abs(G).max())


@pytest.mark.parametrize("fn", [f for f in ALL if f.argmin is not None], ids=lambda f: f.name)
def test_known_minima(fn):
    assert fn(fn.argmin) == pytest.approx(fn.fmin, abs=1e-4)


def test_branin_three_global_minima():
    for x in ([-np.pi, 12.275], [np.pi, 2.275], [9.42478, 2.475]):
        assert testfns.branin(x) == pytest.approx(0.397887, abs=1e-5)


def test_point_values():
    # hand-evaluated
    assert testfns.franke([0.0, 0.0]) == pytest.approx(
        0.75 * np.exp(-4 / 4 - 4 / 4) + 0.75 * np.exp(-1 / 49 - 1 / 10)
        + 0.5 * np.exp(-49 / 4 - 9 / 4) - 0.2 * np.exp(-16 - 49))
    assert testfns.friedman([0.5] * 5) == pytest.approx(10 * np.sin(np.pi / 4) + 5 + 2.5)
    assert testfns.welch(np.zeros(20)) == 0.0


def test_domain_checked():
    with pytest.raises(OutOfDomainError):
        testfns.branin([-6.0, 1.0])
    assert np.isfinite(testfns.branin([-6.0, 1.0], check=False))
    with pytest.raises(ValueError):
        testfns.branin(np.zeros(3))


def test_registry_lookup():
    assert testfns.get("Styblinski-Tang", 4).dim == 4
    with pytest.raises(KeyError):
        testfns.get("nope")
    with pytest.raises(ValueError):
        testfns.get("branin", 3)


def test_welch_gradient_covariance_has_six_nonzero_eigenvalues():
    data = testfns.sample_dataset(testfns.welch, 2000, seed=1)
    lam = subspace.estimate(data.dY).eigenvalues
    assert lam[5] > 1e-4 * lam[0]
    assert lam[6] < 1e-12 * lam[0]


@settings(max_examples=20)
@given(st.integers(2, 12), st.integers(0, 10**6))
def test_embedding_is_invariant_off_the_subspace(D, seed):
    fn = testfns.embed(testfns.branin, D, seed=seed, lower=-1, upper=1)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, D)
    v = rng.standard_normal(D)
    v -= fn.Q @ (fn.Q.T @ v)
    assert fn(x, check=False) == pytest.approx(fn(x + 0.1 * v, check=False), rel=1e-10, abs=1e-10)
    g = fn.evaluate(x, check=False)[1]
    assert np.allclose(g, fn.Q @ (fn.Q.T @ g), atol=1e-9 * (1 + np.abs(g).max()))


def test_embed_identity_when_dimensions_match():
    fn = testfns.embed(testfns.sixhump, 2)
    assert np.array_equal(fn.Q, np.eye(2))
    with pytest.raises(ValueError):
        testfns.embed(testfns.welch, 5)


def test_sample_dataset():
    d = testfns.sample_dataset(testfns.branin, 50, seed=3)
    assert d.X.shape == (50, 2) and np.all(d.X >= testfns.branin.lower)
    again = testfns.sample_dataset(testfns.branin, 50, seed=3)
    assert np.array_equal(d.y, again.y)
    g = testfns.sample_dataset(testfns.franke, 9, scheme="grid")
    assert len(np.unique(g.X[:, 0])) == 3
    noisy = testfns.sample_dataset(testfns.franke, 2000, seed=0, noise=0.1, gradients=False)
    clean = testfns.sample_dataset(testfns.franke, 2000, seed=0, gradients=False)
    assert np.std(noisy.y - clean.y) == pytest.approx(0.1, rel=0.1)
    assert noisy.dY is None
