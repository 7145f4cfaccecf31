"""Bayesian optimization of a 5-D Ackley function hidden in 50 dimensions.

The objective only varies along five directions. Each BO step estimates
them from the gradients seen so far, picks two at random, and maximizes
expected improvement in that 2-D slice. Random search and multi-start
L-BFGS-B get the same budget.
"""
import numpy as np

from gradkrig import bopt, testfns

fn = testfns.embed(testfns.ackley(5), 50, seed=0, lower=-10, upper=15)


def objective(x):
    return fn.evaluate(x, check=False)


budget, seeds = 100, range(3)
for name, run in [("bo", lambda s: bopt.bo_run(objective, fn.lower, fn.upper, budget, d=2,
                                                seed=s)),
                  ("random", lambda s: bopt.baseline_random(objective, fn.lower, fn.upper,
                                                            budget, seed=s)),
                  ("local", lambda s: bopt.baseline_local(objective, fn.lower, fn.upper,
                                                          budget, seed=s))]:
    best = [run(s).final_best for s in seeds]
    print(f"{name:7s} final best over {len(best)} seeds: "
          + ", ".join(f"{b:.3f}" for b in best) + f"  (median {np.median(best):.3f})")
