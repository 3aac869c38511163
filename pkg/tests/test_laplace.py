import math

import numpy as np
import pytest
from scipy.special import gamma

from fattail.errors import DomainError
from fattail.kernel import brownian, constant, custom, power_sum
from fattail.laplace import (bilinear_term, check_Q_identity, constant_kernel_exact_Q, default_q,
                             laplace_probe, perturb, small_q_constant, transform_Q,
                             transform_Qprime, write_csv)
from fattail.profile import Profile, grid_per_decade
from fattail.solver import ProfileProblem

Q_EXACT_RHO05_Q1 = 0.3899867647915573   # 0.5 / (1 + 0.5 / sqrt(pi)), evaluated once in high precision


@pytest.fixture(scope="module")
def expo_fine():
    g = grid_per_decade(1e-6, 1e3, 960)
    return Profile(g, np.exp(-g.nodes), 0.0, 60.0)


def test_Q_exponential(expo, expo_fine):
    q = np.geomspace(1e-3, 1e2, 11)
    np.testing.assert_allclose(transform_Q(expo, q), q / (1 + q), rtol=1e-3)
    np.testing.assert_allclose(transform_Q(expo_fine, q), q / (1 + q), rtol=1e-6)


def test_Qprime_exponential(expo_fine):
    q = np.geomspace(1e-3, 1e2, 11)
    np.testing.assert_allclose(transform_Qprime(expo_fine, q), (1 + q) ** -2.0, rtol=1e-6)


def test_Q_power_law(plaw):
    q = np.geomspace(1e-6, 1e3, 19)
    np.testing.assert_allclose(transform_Q(plaw, q), gamma(1.5) / 0.5 * q**0.5, rtol=1e-10)


def test_Q_vanishes_at_zero(coarse_constant):
    _, p, _ = coarse_constant
    q = np.geomspace(1e-12, 1e-6, 4)
    Q = transform_Q(p, q)
    assert np.all(np.diff(Q) > 0) and Q[0] < 1e-5


def test_Qprime_finite_difference_random_profile():
    rng = np.random.default_rng(5)
    g = grid_per_decade(1e-4, 1e4, 20)
    p = Profile(g, g.nodes ** -1.6 * np.exp(0.3 * rng.standard_normal(g.n)), 1.3, 1.6)
    h = 1e-5
    fd = (transform_Q(p, 0.1 + h) - transform_Q(p, 0.1 - h)) / (2 * h)
    assert fd == pytest.approx(transform_Qprime(p, 0.1), rel=1e-6)


def test_Qprime_guarded_at_zero(plaw):
    with pytest.raises(DomainError):
        transform_Qprime(plaw, 0.0)


def test_Q_monotone_concave(coarse_constant):
    _, p, _ = coarse_constant
    q = np.geomspace(1e-4, 1e2, 40)
    Q = transform_Q(p, q)
    assert np.all(np.diff(Q) > 0)
    slopes = np.diff(Q) / np.diff(q)
    assert np.all(np.diff(slopes) < 0)


def test_bilinear_constant_kernel_is_Q_squared(plaw):
    prob = ProfileProblem(constant(), 0.5)
    q = np.geomspace(1e-3, 1e2, 6)
    np.testing.assert_allclose(bilinear_term(prob, plaw, q), transform_Q(plaw, q) ** 2, rtol=1e-12)


def test_bilinear_zero_profile(plaw):
    zero = plaw.with_values(np.zeros(plaw.grid.n))
    assert np.all(bilinear_term(ProfileProblem(brownian(), 0.5), zero, [0.1, 1.0]) == 0)


def test_bilinear_separable_equals_2d():
    g = grid_per_decade(1e-3, 1e3, 12)
    p = Profile(g, g.nodes ** -1.0 * np.exp(-g.nodes / 50), 1.0, 3.0)
    k = power_sum(-0.2, 0.4)
    prob = ProfileProblem(k, 0.6)
    q = np.array([0.01, 0.3, 5.0])
    fast = bilinear_term(prob, p, q)
    slow = bilinear_term(prob, p, q, generic=True)
    np.testing.assert_allclose(slow, fast, rtol=1e-8)
    black_box = custom(lambda x, y: k(x, y), lam=k.lam, alpha=k.alpha, beta=k.beta,
                       c_star=k.c_star, C_star=k.C_star)
    np.testing.assert_allclose(bilinear_term(black_box, p, q), fast, rtol=1e-8)


def test_exact_Q_frozen_value():
    assert constant_kernel_exact_Q(0.5, 1.0) == pytest.approx(Q_EXACT_RHO05_Q1, rel=1e-15)


@pytest.mark.parametrize("rho", [0.3, 0.5, 0.7])
def test_exact_Q_solves_bernoulli(rho):
    q = np.geomspace(1e-4, 1e2, 13)
    Q = constant_kernel_exact_Q(rho, q)
    dQ = (constant_kernel_exact_Q(rho, q * (1 + 1e-5)) - constant_kernel_exact_Q(rho, q * (1 - 1e-5))) / 2e-5
    np.testing.assert_allclose(dQ, rho * Q - Q**2, rtol=1e-8)
    small = constant_kernel_exact_Q(rho, 1e-30)
    # the relative correction is O(q^rho), slow for small rho
    assert small == pytest.approx(gamma(2 - rho) / rho * 1e-30 ** rho, rel=1e-7)


def test_exact_Q_domain():
    with pytest.raises(DomainError):
        constant_kernel_exact_Q(1.0, 0.5)


def test_coarse_profile_matches_exact_Q(coarse_constant):
    prob, p, _ = coarse_constant
    q = np.geomspace(1e-2, 1, 5)
    np.testing.assert_allclose(transform_Q(p, q), constant_kernel_exact_Q(0.5, q), rtol=1e-2)


def test_identity_certificate_and_controls(coarse_constant, expo):
    prob, p, _ = coarse_constant
    q = np.geomspace(1e-3, 1, 7)
    good = check_Q_identity(prob, p, q)
    bad = check_Q_identity(prob, perturb(p, 0.1), q)
    assert good < 1e-3
    assert bad >= 100 * good
    # e^{-x} is no solution: the residual is exactly 1/2 for K = 2, rho = 1/2
    assert check_Q_identity(prob, expo, q) == pytest.approx(0.5, rel=1e-3)


def test_probe_bounds(coarse_constant, tmp_path):
    prob, p, _ = coarse_constant
    probe = laplace_probe(prob, p)
    assert np.all(probe.Q > 0) and np.all(np.diff(probe.Q) > 0)
    # Q' <= rho Q / q for the bounded kernel
    assert np.all(probe.Qprime <= prob.rho * probe.Q / probe.q * (1 + 1e-6))
    assert math.isfinite(small_q_constant(probe, prob.rho))
    path = write_csv(probe, tmp_path / "lap.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "q,Q,Qprime,B,residual" and len(lines) == probe.q.size + 1


def test_default_q_range(plaw):
    q = default_q(plaw)
    assert q[0] == pytest.approx(1e-4) and q[-1] == pytest.approx(1e3)
