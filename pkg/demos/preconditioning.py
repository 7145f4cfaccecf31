"""CG vs pivoted-Cholesky PCG on D-SKI systems across (lengthscale, noise).

A reduced version of the full study (n=500 instead of 2000) so it runs in
well under a minute. Starred counts hit the iteration cap.
"""
from gradkrig import studies

cells = studies.precond_study("franke", n=500, log_ell=[-1, -0.5, 0], log_sigma=[-3, -2, -1])
print(f"{'ell':>6s} {'sigma':>7s} {'CG':>6s} {'PCG':>6s}")
for c in cells:
    star = lambda it, ok: f"{it}{'' if ok else '*'}"
    print(f"{c.lengthscale:6.3f} {c.noise:7.3f} {star(c.cg_iters, c.cg_converged):>6s} "
          f"{star(c.pcg_iters, c.pcg_converged):>6s}")
