"""Acceptance criteria 1-15, each at its stated tolerance and runtime budget.

Every criterion records one ``PASS``/``FAIL`` line; the lines are printed in
the pytest terminal summary, and ``python tests/test_acceptance.py`` runs
them all outside pytest. Criteria 2, 6 and 9 are known to fail (see README).
"""
import time

import numpy as np
import pytest

from gradkrig import bopt, kernels, studies, subspace, testfns
from gradkrig.dski import DskiOperator
from gradkrig.dskip import build_factor, hadamard_mvm, lanczos_lowrank
from gradkrig.gp import GPModel, default_hyperparameters, fit
from gradkrig.interpolation import auto_grid
from gradkrig.kernels import KernelSpec
from gradkrig.linalg import DenseOperator, lanczos, pivoted_cholesky, slq_logdet

RESULTS = {}


def record(num, name, ok, detail, seconds, budget):
    in_time = seconds < budget
    passed = bool(ok) and in_time
    timing = f"{seconds:.1f}s / {budget:g}s" + ("" if in_time else " OVER BUDGET")
    line = f"[{'PASS' if passed else 'FAIL'}] {num:2d} {name}: {detail} ({timing})"
    RESULTS[num] = line
    print(line)
    assert passed, line


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# 1 ---------------------------------------------------------------------------------

def test_01_derivative_kernel_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    for label, kern, d in [("SE", KernelSpec.se(0.7, 1.3), 2),
                           ("spline d=3", KernelSpec.spline([0, 0, 0], [1, 1, 1]), 3)]:
        h = 1e-5
        errs = []
        for _ in range(1000):
            x, y = rng.random(d), rng.random(d)
            g = kernels.eval_grad(kern, x, y)
            fd_g = np.array([(kernels.eval(kern, x, y + h * e) - kernels.eval(kern, x, y - h * e))
                             / (2 * h) for e in np.eye(d)])
            H = kernels.eval_hess_block(kern, x, y)
            # d/dx_p of the y-gradient
            fd_H = np.array([(kernels.eval_grad(kern, x + h * e, y)
                              - kernels.eval_grad(kern, x - h * e, y)) / (2 * h)
                             for e in np.eye(d)])
            errs.append(max(np.abs(g - fd_g).max() / np.abs(g).max(),
                            np.abs(H - fd_H).max() / np.abs(H).max()))
        worst[label] = max(errs)
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    record(1, "derivative-kernel correctness", max(worst.values()) <= 1e-6, detail,
           time.perf_counter() - t0, 5)


# 2 ---------------------------------------------------------------------------------

def test_02_dski_mvm_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    ell = 0.2
    X = rng.random((500, 2))
    kern = KernelSpec.se(ell, 1.0)
    K = kernels.assemble_dense(kern, X)
    errs = {}
    for factor in (5, 8):
        op = DskiOperator(kern, auto_grid(X.min(0), X.max(0), ell, spacing_factor=factor), X)
        e = []
        for _ in range(10):
            v = rng.standard_normal(K.shape[0])
            y = K @ v
            e.append(np.abs(op.kernel_matvec(v) - y).max() / np.abs(y).max())
        errs[factor] = max(e)
    ok = errs[5] <= 1e-4 and errs[8] <= 2e-5
    record(2, "D-SKI MVM fidelity", ok,
           f"h=l/5 {errs[5]:.2e} (<=1e-4), h=l/8 {errs[8]:.2e} (<=2e-5)",
           time.perf_counter() - t0, 30)


# 3 ---------------------------------------------------------------------------------

def test_03_dskip_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    X = rng.random((40, 3))
    kern = KernelSpec.se(0.5, 1.0)
    factors = [build_factor(kern, X, j) for j in range(3)]
    dense = factors[0].dense() * factors[1].dense() * factors[2].dense()
    N = dense.shape[0]
    err = {}
    for r in (N, 40):
        comp = [lanczos_lowrank(f, r, seed=j) for j, f in enumerate(factors)]
        e = []
        for _ in range(5):
            v = rng.standard_normal(N)
            e.append(rel(hadamard_mvm(comp, v, rank=r), dense @ v))
        err[r] = max(e)
    ok = err[N] <= 1e-8 and err[40] <= 1e-3
    record(3, "D-SKIP fidelity", ok, f"r=N={N} {err[N]:.1e} (<=1e-8), r=40 {err[40]:.1e} (<=1e-3)",
           time.perf_counter() - t0, 30)


# 4 ---------------------------------------------------------------------------------

def test_04_spectrum_match():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    ell = 0.2
    X = rng.random((300, 2))
    kern = KernelSpec.se(ell, 1.0)
    exact = np.linalg.eigvalsh(kernels.assemble_dense(kern, X))[::-1][:20]
    op = DskiOperator(kern, auto_grid(X.min(0), X.max(0), ell), X)
    res = lanczos(op.kernel_matvec, rng.standard_normal(op.shape[0]), 150)
    ritz = np.linalg.eigvalsh(res.T)[::-1][:20]
    err = np.max(np.abs(ritz - exact) / exact)
    record(4, "spectrum match", err <= 0.01, f"top-20 Ritz max rel err {err:.1e} (<=1e-2)",
           time.perf_counter() - t0, 60)


# 5 ---------------------------------------------------------------------------------

@pytest.mark.slow
def test_05_preconditioning_study():
    t0 = time.perf_counter()
    cells = studies.precond_study("franke", n=2000, rank=100, tol=1e-4, maxit=1000)
    never_worse = all(c.pcg_iters <= c.cg_iters for c in cells)
    best = max(c.cg_iters / max(c.pcg_iters, 1) for c in cells)
    stalled = sum(not c.cg_converged for c in cells)
    record(5, "preconditioning study", never_worse and best >= 10,
           f"PCG<=CG in {sum(c.pcg_iters <= c.cg_iters for c in cells)}/25 cells, "
           f"best reduction {best:.0f}x, {stalled} CG cells hit maxit",
           time.perf_counter() - t0, 600)


# 6 ---------------------------------------------------------------------------------

def _franke_model(n, seed, **kw):
    data = testfns.sample_dataset(testfns.franke, n, seed=seed)
    return GPModel(KernelSpec.se(0.15, 0.3), 1e-3, 1e-2, **kw).set_data(data)


def test_06_pivchol_variance_overestimate():
    t0 = time.perf_counter()
    m = _franke_model(1000, 6, precond_rank=100)
    T = np.random.default_rng(6).random((500, 2))
    diff = m.predict_variance_pivchol(T) - m.predict_variance_exact(T)
    record(6, "pivoted-Cholesky variance overestimate", diff.min() >= -1e-8,
           f"min(v_pivchol - v_exact) = {diff.min():.2e} (>= -1e-8), "
           f"{np.mean(diff < -1e-8):.0%} of points below", time.perf_counter() - t0, 300)


# 7 ---------------------------------------------------------------------------------

def test_07_randomized_variance_unbiased():
    t0 = time.perf_counter()
    m = _franke_model(400, 7)
    T = np.random.default_rng(7).random((100, 2))
    exact = m.predict_variance_exact(T)
    est, se = m.predict_variance_randomized(T, num_probes=200, seed=7, return_stderr=True)
    frac = np.mean(np.abs(est - exact) <= 3 * se)
    record(7, "randomized variance unbiasedness", frac >= 0.95,
           f"{frac:.0%} of 100 points within 3 SE (>=95%)", time.perf_counter() - t0, 300)


# 8 ---------------------------------------------------------------------------------

def test_08_gradient_information_reduces_variance():
    t0 = time.perf_counter()
    data = testfns.sample_dataset(testfns.franke, 50, seed=8)
    T = np.random.default_rng(8).random((200, 2))
    kw = dict(kernel=KernelSpec.se(0.2, 1.0), noise=1e-2, grad_noise=1e-2)
    v_grad = GPModel(**kw).set_data(data).predict_variance_exact(T)
    v_val = GPModel(**kw).set_data(data.without_gradients()).predict_variance_exact(T)
    gap = v_val - v_grad
    record(8, "gradient information reduces variance", np.all(gap > 1e-12),
           f"min(v_values - v_gradients) = {gap.min():.2e} (> 1e-12) at 200 points",
           time.perf_counter() - t0, 60)


# 9 ---------------------------------------------------------------------------------

def _fitted(data, restarts=5):
    hp = default_hyperparameters(data)
    m = GPModel(KernelSpec.se(hp["lengthscale"], hp["outputscale"]), hp["noise"],
                hp["grad_noise"]).set_data(data)
    fit(m, maxiter=100, restarts=restarts)
    return m


@pytest.mark.slow
def test_09_gradients_beat_values():
    t0 = time.perf_counter()
    checks, parts, unconverged = [], [], []
    for fn in (testfns.branin, testfns.franke):
        full = testfns.sample_dataset(fn, 1000, seed=9)
        small = full.subset(np.arange(1000 // (fn.dim + 1)))
        test = testfns.sample_dataset(fn, 1000, seed=10, gradients=False)
        err = {}
        # SKI and D-SKI reuse the maximum-likelihood hyperparameters of SE and D-SE
        for exact_name, approx_name, train_exact, train_approx in [
                ("SE", "SKI", full.without_gradients(), full.without_gradients()),
                ("D-SE", "D-SKI", small, full)]:
            m = _fitted(train_exact)
            err[exact_name] = rel(m.predict_mean(test.X), test.y)
            k = m.kernel
            # h = l/8 for both, so interpolation error sits below the errors compared
            a = GPModel(k, max(m.noise, 1e-3 * k.outputscale),
                        max(m.grad_noise, 1e-3 * k.outputscale / k.lengthscale),
                        backend="dski", spacing_factor=8, tol=1e-8,
                        maxit=5000).set_data(train_approx)
            err[approx_name] = rel(a.predict_mean(test.X), test.y)
            if not a.cg_info.converged:
                unconverged.append(f"{fn.name} {approx_name}")
        checks += [err["D-SKI"] < err["SKI"], err["D-SE"] < err["SE"], err["D-SKI"] <= 5e-3]
        parts.append(fn.name + " " + " ".join(f"{k} {v:.1e}" for k, v in err.items()))
    if unconverged:
        parts.append("CG hit maxit: " + ", ".join(unconverged))
    record(9, "gradients beat values at equal budget", all(checks), "; ".join(parts),
           time.perf_counter() - t0, 600)


# 10 --------------------------------------------------------------------------------

def test_10_logdet_accuracy():
    t0 = time.perf_counter()
    X = np.random.default_rng(10).random((200, 2))
    K = kernels.assemble_dense(KernelSpec.se(0.3, 1.0), X)
    op = DenseOperator(K, np.full(K.shape[0], 0.1**2))
    exact = np.linalg.slogdet(op.dense())[1]
    est = np.median([slq_logdet(op, num_probes=10, lanczos_steps=50, seed=s) for s in range(5)])
    err = abs(est - exact) / abs(exact)
    record(10, "log-determinant accuracy", err <= 0.01,
           f"median SLQ {est:.2f} vs dense {exact:.2f}, rel err {err:.1e} (<=1e-2)",
           time.perf_counter() - t0, 30)


# 11 --------------------------------------------------------------------------------

def test_11_likelihood_gradient():
    t0 = time.perf_counter()
    data = testfns.sample_dataset(testfns.franke, 40, seed=11)
    m = GPModel(KernelSpec.se(0.25, 0.4), 0.03, 0.2).set_data(data)
    g = m.lml_gradient()
    theta, h, errs = m.theta, 1e-5, []
    for i in range(4):
        f = []
        for sgn in (1, -1):
            t = theta.copy()
            t[i] += sgn * h
            f.append(m.set_theta(t).log_marginal_likelihood())
        fd = (f[0] - f[1]) / (2 * h)
        errs.append(abs(g[i] - fd) / abs(fd))
    m.set_theta(theta)
    record(11, "likelihood-gradient check", max(errs) <= 1e-4,
           "per-coordinate rel err " + ", ".join(f"{e:.1e}" for e in errs) + " (<=1e-4)",
           time.perf_counter() - t0, 60)


# 12 --------------------------------------------------------------------------------

def test_12_scaling_slope():
    t0 = time.perf_counter()
    rows = studies.benchmark_mvm("dski", ns=(2000, 4000, 8000, 16000), repeats=7)
    slope = studies.loglog_slope([r[0] for r in rows], [r[2] for r in rows])
    record(12, "D-SKI MVM scaling slope", slope <= 1.3,
           f"log-log slope {slope:.2f} (<=1.3)", time.perf_counter() - t0, 300)


# 13 --------------------------------------------------------------------------------

def test_13_active_subspace_recovery():
    t0 = time.perf_counter()
    fn = testfns.embed(testfns.ackley(5), 50, seed=13, lower=-10, upper=15)
    X = fn.lower + np.random.default_rng(13).random((500, 50)) * fn.width
    act = subspace.estimate(fn.evaluate(X, check=False)[1])
    dist = subspace.subspace_distance(act.projection(5), fn.Q)
    record(13, "active-subspace recovery", dist <= 0.05, f"distance {dist:.1e} (<=0.05)",
           time.perf_counter() - t0, 60)


# 14 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_14_bo_beats_random():
    t0 = time.perf_counter()
    fn = testfns.embed(testfns.ackley(5), 50, seed=0, lower=-10, upper=15)

    def objective(x):
        return fn.evaluate(x, check=False)

    bo, rs = [], []
    for seed in range(10):
        bo.append(bopt.bo_run(objective, fn.lower, fn.upper, 100, d=2, seed=seed).final_best)
        rs.append(bopt.baseline_random(objective, fn.lower, fn.upper, 100, seed=seed).final_best)
    record(14, "BO outperforms random search", np.median(bo) < np.median(rs),
           f"median final best BO {np.median(bo):.3f} vs random {np.median(rs):.3f}",
           time.perf_counter() - t0, 1800)


# 15 --------------------------------------------------------------------------------

def test_15_pivoted_cholesky_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(15)
    A = rng.standard_normal((40, 40))
    K = A @ A.T
    F = pivoted_cholesky(np.diag(K).copy(), lambda i: K[i], 40).F
    err_full = np.abs(F @ F.T - K).max() / np.abs(K).max()
    u = rng.standard_normal(40)
    K1 = np.outer(u, u)
    F1 = pivoted_cholesky(np.diag(K1).copy(), lambda i: K1[i], 1).F
    err_one = np.abs(F1 @ F1.T - K1).max() / np.abs(K1).max()
    record(15, "pivoted Cholesky exactness", err_full <= 1e-10 and err_one <= 1e-10,
           f"full-rank err {err_full:.1e}, rank-1 err {err_one:.1e} (<=1e-10)",
           time.perf_counter() - t0, 1)


if __name__ == "__main__":
    import sys

    tests = sorted(k for k in globals() if k.startswith("test_"))
    failed = 0
    for name in tests:
        try:
            globals()[name]()
        except AssertionError:
            failed += 1
    print(f"{len(tests) - failed}/{len(tests)} criteria passed")
    sys.exit(1 if failed else 0)
