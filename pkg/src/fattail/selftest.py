"""Closed-form oracle checks runnable without input files (``fattail selftest``)."""
from __future__ import annotations


import numpy as np
from scipy.special import gamma

from . import dynamics as dyn
from .kernel import brownian, check_homogeneity, check_symmetry, constant, power_sum, sample_pairs
from .laplace import (bilinear_term, constant_kernel_exact_Q, transform_Q, transform_Qprime)
from .moments import check_moment_estimates, check_tail_averaged, check_zero_averaged
from .profile import Profile, grid_per_decade, make_log_grid, partial_mass, residual
from .solver import (GridConfig, ProfileProblem, powerlaw_integral, powerlaw_integral_2d,
                     powerlaw_profile, solve)
from .verify import fit_tail


def power_law(rho: float, x_min=1e-5, x_max=1e5, per_decade=60) -> Profile:
    """(1-rho) x^{-1-rho} on a log grid with matching closures."""
    g = grid_per_decade(x_min, x_max, per_decade)
    return Profile(g, (1 - rho) * g.nodes ** (-1 - rho), 1 + rho, 1 + rho)


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) / np.asarray(b) - 1)))


def run_all(include_solve: bool = True):
    out = []

    def rec(name, err, tol):
        out.append((name, bool(err <= tol), f"error {err:.3e} (tol {tol:.0e})"))

    k = brownian()
    pairs = sample_pairs()
    rec("kernel symmetry", check_symmetry(k, np.geomspace(1e-3, 1e3, 13)), 1e-12)
    rec("kernel homogeneity", check_homogeneity(k, pairs, [0.1, 10.0]), 1e-12)

    rho = 0.5
    p = power_law(rho)
    R = np.geomspace(1e-4, 1e4, 9)
    rec("partial mass of power law", _rel(partial_mass(p, R), R ** (1 - rho)), 1e-12)
    g = grid_per_decade(1e-6, 1e3, 60)
    pe = Profile(g, np.exp(-g.nodes), 0.0, 60.0)
    rec("partial mass of exp(-x)", abs(partial_mass(pe, g.x_max) - 1.0), 1e-3)

    lam = 0.2
    pz = Profile(p.grid, p.x ** (-1 - lam), 1 + lam, 1 + lam)
    want = (2 ** (1 - lam) - 1) / (1 - lam)
    rec("zero-averaged constant", abs(check_zero_averaged(pz, lam).constant - want), 1e-10)
    rec("tail-averaged constant", abs(check_tail_averaged(p, rho).constant - 1.0), 1e-10)
    m1 = [c for c in check_moment_estimates(p, rho, 0.0) if c.name == "moment:1"]
    rec("moment:1 constant", max(abs(c.constant - (1 - rho) / (rho - c.chi)) for c in m1), 1e-8)

    q = np.geomspace(1e-3, 1e2, 11)
    rec("Q of power law", _rel(transform_Q(p, q), gamma(2 - rho) / rho * q**rho), 1e-10)
    rec("Q of exp(-x)", _rel(transform_Q(pe, q), q / (1 + q)), 1e-3)
    rec("Q' of exp(-x)", _rel(transform_Qprime(pe, q), 1 / (1 + q) ** 2), 1e-3)
    h = 1e-5
    fd = (transform_Q(p, 0.1 + h) - transform_Q(p, 0.1 - h)) / (2 * h)
    rec("Q' finite difference", abs(fd / transform_Qprime(p, 0.1) - 1), 1e-6)
    Qe = constant_kernel_exact_Q(rho, q)
    dQ = (constant_kernel_exact_Q(rho, q * (1 + 1e-6)) - constant_kernel_exact_Q(rho, q * (1 - 1e-6))) / 2e-6
    rec("exact Q solves Bernoulli", float(np.max(np.abs(dQ - rho * Qe + Qe**2) / Qe)), 1e-8)
    prob = ProfileProblem(constant(), rho)
    rec("B = Q^2 for K = 2", _rel(bilinear_term(prob, p, q), transform_Q(p, q) ** 2), 1e-12)

    tf = fit_tail(p, (1e2, 1e3), rho)
    rec("tail fit of power law", max(abs(tf.exponent + 1 + rho), abs(tf.amplitude - (1 - rho))), 1e-10)

    kp = power_sum(0.3, 0.3)
    J = powerlaw_integral(kp)
    rec("power-law J, 2D brute force", abs(powerlaw_integral_2d(kp, 400) / J - 1), 1e-6)
    pp = powerlaw_profile(kp, 0.8, grid_per_decade(1e-3, 1e3, 30))
    rec("explicit power-law residual", residual(kp, 0.8, pp)[0], 1e-6)

    grid = make_log_grid(1e-3, 60.0, 200)
    phi0 = dyn.MassDistribution.from_cdf(grid, lambda e: -np.expm1(-e))
    tr = dyn.evolve(constant(), phi0, 1.0, dyn.DtConfig(safety=0.025))
    rec("dynamics exponential oracle", dyn.l1_error(tr.final, dyn.exponential_solution(grid, 1.0)), 1e-2)
    rec("dynamics mass conservation", tr.mass_defect(), 1e-10)

    if include_solve:
        prob = ProfileProblem(constant(), rho, grid=GridConfig(1e-4, 1e4, 30))
        ps, rep = solve(prob)
        qq = np.geomspace(1e-2, 1, 5)
        rec("coarse constant-kernel solve vs exact Q",
            _rel(transform_Q(ps, qq), constant_kernel_exact_Q(rho, qq)), 2e-2)
    return out
