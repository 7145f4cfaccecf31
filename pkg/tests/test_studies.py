import numpy as np
import pytest

from gradkrig import studies


def test_pcg_never_needs_more_iterations_than_cg():
    cells = studies.precond_study("franke", n=300, log_ell=[-1, 0], log_sigma=[-2, -1], rank=50)
    assert len(cells) == 4
    for c in cells:
        assert c.pcg_iters <= c.cg_iters
    rows = studies.cells_to_rows(cells)
    assert set(rows[0]) >= {"lengthscale", "noise", "cg_iters", "pcg_iters"}


def test_precond_study_friedman_runs():
    cells = studies.precond_study("friedman", n=60, log_ell=[0], log_sigma=[-1], rank=20,
                                  skip_rank=30)
    assert cells[0].pcg_converged


def test_unknown_problem():
    with pytest.raises(ValueError):
        studies.precond_study("nope")


def test_loglog_slope():
    ns = np.array([100, 200, 400, 800])
    assert studies.loglog_slope(ns, 3e-6 * ns**1.5) == pytest.approx(1.5)


@pytest.mark.parametrize("backend", ["dski", "dskip", "exact"])
def test_benchmark_mvm_shape(backend):
    out = studies.benchmark_mvm(backend, ns=(100, 200), dim=2 if backend != "dskip" else 3,
                                repeats=2, grid_shape=20, rank=10)
    assert [r[0] for r in out] == [100, 200]
    assert all(r[2] > 0 for r in out)
