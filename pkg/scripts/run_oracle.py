"""Constant-kernel oracle: solve for several rho and compare Q with the exact transform.

usage: python scripts/run_oracle.py [x_max] [rho ...]
"""
import sys
import time

import numpy as np

from fattail.kernel import constant
from fattail.laplace import constant_kernel_exact_Q, transform_Q
from fattail.solver import GridConfig, ProfileProblem, solve

if __name__ == "__main__":
    x_max = float(sys.argv[1]) if len(sys.argv) > 1 else 1e5
    rhos = [float(r) for r in sys.argv[2:]] or [0.3, 0.5, 0.7]
    q = np.geomspace(1e-3, 1.0, 31)
    for rho in rhos:
        t0 = time.perf_counter()
        p, rep = solve(ProfileProblem(constant(), rho, grid=GridConfig(1e-5, x_max, 60)))
        err = np.abs(transform_Q(p, q) / constant_kernel_exact_Q(rho, q) - 1)
        print(f"rho={rho}  converged={rep.converged}  iters={rep.iterations}  "
              f"max rel err {err.max():.3e} at q={q[err.argmax()]:.3g}  "
              f"({time.perf_counter() - t0:.1f}s)")
