import math

import numpy as np
import pytest

from fattail import dynamics as dyn
from fattail.errors import ConfigError, DomainError
from fattail.kernel import brownian, constant, custom, evaluate
from fattail.profile import grid_per_decade, make_log_grid


@pytest.fixture(scope="module")
def small_grid():
    return make_log_grid(1e-2, 1e2, 20)


def test_section_edges(small_grid):
    e = dyn.section_edges(small_grid)
    x = small_grid.nodes
    assert e[0] == 0 and np.all((e[:-1] < x) & (x < e[1:]))


def test_from_cdf_counts():
    grid = make_log_grid(1e-3, 60.0, 200)
    phi = dyn.MassDistribution.from_cdf(grid, lambda e: -np.expm1(-e))
    assert phi.number() == pytest.approx(1 - math.exp(-60 * math.sqrt(grid.ratio)), rel=1e-14)


def test_zero_kernel_is_stationary(small_grid):
    zero = custom(lambda x, y: 0.0 * x * y, lam=0.0, alpha=0.0, beta=0.0, c_star=1.0, C_star=1.0)
    phi0 = dyn.MassDistribution.from_cdf(small_grid, lambda e: -np.expm1(-e))
    tr = dyn.evolve(zero, phi0, 5.0, dyn.DtConfig(dt_max=0.5))
    np.testing.assert_array_equal(tr.final.values, phi0.values)
    assert tr.final.t == 5.0


def test_rates_match_pair_ledger(small_grid):
    k = brownian()
    x = small_grid.nodes
    n = small_grid.n
    rng = np.random.default_rng(2)
    N = rng.random(n)
    gain = np.zeros(n)
    loss = np.zeros(n)
    out_m = 0.0
    for i in range(n):
        for j in range(n):
            r = 0.5 * evaluate(k, x[i], x[j]) * N[i] * N[j]   # ordered pairs, half each
            loss[i] += r
            loss[j] += r
            v = x[i] + x[j]
            if v > x[-1]:
                out_m += r * v
                continue
            m = np.searchsorted(x, v, side="right") - 1
            eta = (v - x[m]) / (x[m + 1] - x[m])
            gain[m] += (1 - eta) * r
            gain[m + 1] += eta * r
    g, l, _, om = dyn._PairTable(k, small_grid).rates(N)
    np.testing.assert_allclose(g, gain, rtol=1e-12)
    np.testing.assert_allclose(l, loss, rtol=1e-12)
    assert om == pytest.approx(out_m, rel=1e-12)
    # fixed pivots conserve number and mass of every binary event
    assert math.fsum(x * (g - l)) + om == pytest.approx(0.0, abs=1e-12 * math.fsum(x * l))


def test_mass_conservation():
    grid = make_log_grid(1e-3, 60.0, 200)
    phi0 = dyn.MassDistribution.from_cdf(grid, lambda e: -np.expm1(-e))
    tr = dyn.evolve(constant(), phi0, 1.0, dyn.DtConfig(safety=0.1))
    assert tr.mass_defect() <= 1e-10
    assert tr.final.number() < phi0.number()


def test_exponential_oracle_coarse():
    grid = make_log_grid(1e-3, 60.0, 200)
    phi0 = dyn.MassDistribution.from_cdf(grid, lambda e: -np.expm1(-e))
    errs = []
    for s in (0.1, 0.05):
        tr = dyn.evolve(constant(), phi0, 1.0, dyn.DtConfig(safety=s))
        errs.append(dyn.l1_error(tr.final, dyn.exponential_solution(grid, 1.0)))
    assert errs[1] < errs[0]
    assert errs[0] / errs[1] >= 1.8


def test_snapshots_at_requested_times(small_grid):
    phi0 = dyn.MassDistribution.from_cdf(small_grid, lambda e: -np.expm1(-e))
    tr = dyn.evolve(constant(), phi0, 1.0, snapshots=[0.25, 0.5, 2.0])
    assert [s.t for s in tr.snapshots] == [0.25, 0.5, 1.0]


def test_bad_inputs(small_grid):
    phi0 = dyn.MassDistribution.from_cdf(small_grid, lambda e: -np.expm1(-e), t=1.0)
    with pytest.raises(DomainError):
        dyn.evolve(constant(), phi0, 0.5)
    with pytest.raises(ConfigError):
        dyn.DtConfig(safety=0.0)
    with pytest.raises(DomainError):
        dyn.MassDistribution(small_grid, -np.ones(small_grid.n))
    with pytest.raises(ConfigError):
        dyn.ScalingConfig(theta=1.0, lam=0.0)


def test_scaling_function():
    cfg = dyn.ScalingConfig(1.5, 0.0)
    assert cfg.s(4.0) == pytest.approx(4.0, rel=1e-15)   # (0.5 t)^2
    assert cfg.s(1.0) == pytest.approx(0.25)


def test_weak_distance_amplitude(plaw):
    b = plaw
    a = plaw.with_values(1.1 * plaw.values)
    assert dyn.weak_distance(a, b, (0.1, 10)) == pytest.approx(0.1, rel=1e-12)
    assert dyn.weak_distance(b, b, (0.1, 10)) == 0.0
    with pytest.raises(DomainError):
        dyn.weak_distance(a, b, (10, 1))


def test_rescaled_snapshot_of_self_similar_data():
    # a power law evolving with the right s(t) is fixed by the rescaling
    grid = grid_per_decade(1e-2, 1e4, 20)
    cfg = dyn.ScalingConfig(1.5, 0.0)
    phi = dyn.MassDistribution(grid, cfg.s(4.0) ** -1.5 * 0.5 * (grid.nodes / cfg.s(4.0)) ** -1.5, 4.0)
    f = dyn.rescale_snapshot(phi, cfg)
    np.testing.assert_allclose(f.values, 0.5 * f.x ** -1.5, rtol=1e-12)
    with pytest.raises(DomainError):
        dyn.rescale_snapshot(dyn.MassDistribution(grid, phi.values, 0.0), cfg)


def test_fat_tail_initial_mass_growth():
    grid = grid_per_decade(1e-2, 1e6, 15)
    phi = dyn.fat_tail_initial(grid, 0.5)
    assert np.all(phi.values[grid.nodes < 0.9] == 0)
    # number (1-rho)/rho above the unit cutoff, minus what lies past the grid
    assert phi.number() == pytest.approx(1.0, rel=2e-3)


def test_evolution_deterministic_across_workers():
    grid = make_log_grid(1e-3, 60.0, 300)     # several pair chunks
    phi0 = dyn.MassDistribution.from_cdf(grid, lambda e: -np.expm1(-e))
    a = dyn.evolve(brownian(), phi0, 0.05, workers=1).final.values
    b = dyn.evolve(brownian(), phi0, 0.05, workers=4).final.values
    assert a.tobytes() == b.tobytes()
