import numpy as np
import pytest

from fattail.errors import ConfigError, DomainError
from fattail.kernel import (additive, brownian, check_bounds, check_homogeneity,
                            check_symmetry, constant, custom, evaluate, make_kernel,
                            multiplicative, power_sum, sample_pairs)


def test_brownian_values():
    k = brownian()
    assert evaluate(k, 1.0, 1.0) == pytest.approx(4.0, rel=1e-15)
    assert evaluate(k, 8.0, 1.0) == pytest.approx(4.5, rel=1e-15)


def test_constant_value():
    assert evaluate(constant(), 17.3, 0.2) == 2.0


def test_nonpositive_argument_rejected():
    with pytest.raises(DomainError):
        evaluate(brownian(), 0.0, 1.0)
    with pytest.raises(DomainError):
        evaluate(constant(), 1.0, -2.0)


@pytest.mark.parametrize("k", [constant(), brownian(), power_sum(-0.2, 0.5), power_sum(0.3, 0.3),
                               power_sum(0.1, 0.4, scale=3.0)])
def test_symmetry_and_homogeneity(k):
    xs = np.geomspace(1e-3, 1e3, 25)
    assert check_symmetry(k, xs) == 0.0
    dev = check_homogeneity(k, sample_pairs(1e-3, 1e3, 13), [1e-3, 1.0, 1e3])
    assert dev <= 1e-12


def test_power_sum_homogeneity_example():
    assert check_homogeneity(power_sum(-0.2, 0.5), [(1.0, 1.0)], [10.0]) <= 1e-15


def test_out_of_range_lambda_rejected():
    with pytest.raises(ConfigError):
        additive()
    with pytest.raises(ConfigError):
        multiplicative()


def test_exponent_order_and_sum():
    # power_sum orders its exponents itself
    assert power_sum(0.5, 0.2).alpha == 0.2
    with pytest.raises(ConfigError):
        custom(lambda x, y: x + y, lam=0.5, alpha=0.4, beta=0.1, c_star=1, C_star=1)
    with pytest.raises(ConfigError):
        custom(lambda x, y: x + y, lam=0.5, alpha=0.1, beta=0.3, c_star=1, C_star=1)


def test_bounds_brownian():
    k = brownian(b=1.0, B=2.0)
    lo, ratio = check_bounds(k, np.geomspace(1e-3, 1e3, 61))
    assert lo >= 2.0
    assert ratio <= 3.0


def test_bounds_constant_and_power_sum():
    assert check_bounds(constant(), np.geomspace(1e-2, 1e2, 21))[1] == pytest.approx(1.0, abs=1e-15)
    assert check_bounds(power_sum(0.1, 0.4), np.geomspace(1e-2, 1e2, 21))[1] == pytest.approx(1.0, abs=1e-14)


def test_make_kernel_by_name():
    k = make_kernel("power_sum", alpha=0.2, beta=0.3)
    assert k.lam == pytest.approx(0.5)
    assert make_kernel("brownian").alpha == pytest.approx(-1 / 3)
    with pytest.raises(ConfigError):
        make_kernel("no_such_family")


def test_custom_kernel_vectorized():
    k = custom(lambda x, y: 2 * np.ones(np.broadcast(x, y).shape), lam=0.0, alpha=0.0,
               beta=0.0, c_star=2.0, C_star=1.0)
    out = evaluate(k, np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    np.testing.assert_array_equal(out, [2.0, 2.0])
