"""Evolve fat-tailed data 0.5 x^-1.5 (x >= 1) with K = 2 and track the weak distance
to the rho = 0.5 profile in self-similar variables."""
import numpy as np

from fattail import dynamics as dyn
from fattail.kernel import constant
from fattail.profile import grid_per_decade
from fattail.solver import GridConfig, ProfileProblem, solve

if __name__ == "__main__":
    p, _ = solve(ProfileProblem(constant(), 0.5, grid=GridConfig(1e-5, 1e5, 60)))
    times = [4, 16, 64, 256, 1024, 4096]
    r = dyn.scaling_test(constant(), p, 0.5, grid_per_decade(1e-2, 1e12, 15), times,
                         (0.1, 10.0), dyn.DtConfig(safety=0.01))
    for t, d in zip(times, r["weak_distance"]):
        print(f"t={t:6d}  weak distance {d:.5f}")
    print("monotone:", bool(np.all(np.diff(r["weak_distance"]) < 0)))
