"""Homogeneous symmetric coagulation kernels.

Built-in families are finite sums of separable power terms
``c * x**a * y**b``; the solver exploits this to evaluate the inner
z-integrals of the gain operator in closed form.  Custom kernels are a
callable plus declared exponent/bound metadata and go through a slower
generic quadrature path.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

FAMILIES = ("constant", "additive", "multiplicative", "brownian", "power_sum", "custom")

Term = tuple[float, float, float]


@dataclass(frozen=True)
class KernelSpec:
    """A kernel K(x, y) with homogeneity ``lam`` and growth exponents
    ``alpha <= beta`` (``alpha + beta == lam``).

    ``c_star`` is a lower bound of K on ``[b, B]**2``; ``C_star`` bounds K
    from above by ``C_star * (x**alpha y**beta + x**beta y**alpha)``.
    """

    form: str
    lam: float
    alpha: float
    beta: float
    c_star: float
    C_star: float
    b: float = 1.0
    B: float = 2.0
    params: dict = field(default_factory=dict, compare=False)
    terms: Optional[tuple[Term, ...]] = None
    func: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.form not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.form!r}")
        if not -1.0 < self.lam < 1.0:
            raise ConfigError(
                f"homogeneity lambda={self.lam} must lie in (-1, 1)")
        if not (-1.0 < self.alpha <= self.beta < 1.0):
            raise ConfigError(
                f"need -1 < alpha <= beta < 1, got alpha={self.alpha}, beta={self.beta}")
        if self.alpha + self.beta != self.lam:
            raise ConfigError(
                f"alpha + beta = {self.alpha + self.beta} != lambda = {self.lam}")
        if not (self.c_star > 0 and self.C_star > 0):
            raise ConfigError("c_star and C_star must be positive")
        if not 0 < self.b < self.B:
            raise ConfigError(f"need 0 < b < B, got b={self.b}, B={self.B}")
        if self.terms is None and self.func is None:
            raise ConfigError("kernel needs separable terms or a callable")

    @property
    def separable(self) -> bool:
        return self.terms is not None

    def __call__(self, x, y):
        return evaluate(self, x, y)


def evaluate(kernel: KernelSpec, x, y):
    """K(x, y) for positive (broadcastable) arguments."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("kernel arguments must be positive")
    if kernel.terms is not None:
        out = np.zeros(np.broadcast(x, y).shape)
        for c, a, b, mirrored in _term_groups(kernel.terms):
            # mirrored pairs are summed as one commutative group so that
            # K(x, y) == K(y, x) holds bit for bit
            v = x**a * y**b + x**b * y**a if mirrored else x**a * y**b
            out = out + c * v
    else:
        out = np.asarray(kernel.func(x, y), dtype=float)
    return out if out.ndim else float(out)


def _term_groups(terms):
    left = list(terms)
    out = []
    while left:
        c, a, b = left.pop(0)
        if a != b and (c, b, a) in left:
            left.remove((c, b, a))
            out.append((c, a, b, True))
        else:
            out.append((c, a, b, False))
    return out


# ---------------------------------------------------------------- families

def constant(value: float = 2.0, b: float = 1.0, B: float = 2.0) -> KernelSpec:
    return KernelSpec("constant", 0.0, 0.0, 0.0, c_star=value, C_star=value / 2,
                      b=b, B=B, params={"value": value}, terms=((value, 0.0, 0.0),))


def brownian(b: float = 1.0, B: float = 2.0, c_star: float = 2.0,
             C_star: float = 3.0) -> KernelSpec:
    """(x^{1/3} + y^{1/3})(x^{-1/3} + y^{-1/3})."""
    third = 1.0 / 3.0
    terms = ((2.0, 0.0, 0.0), (1.0, third, -third), (1.0, -third, third))
    return KernelSpec("brownian", 0.0, -third, third, c_star=c_star, C_star=C_star,
                      b=b, B=B, terms=terms)


def power_sum(alpha: float, beta: float, scale: float = 1.0, b: float = 1.0,
              B: float = 2.0, c_star: Optional[float] = None) -> KernelSpec:
    """scale * (x^alpha y^beta + x^beta y^alpha)."""
    alpha, beta = min(alpha, beta), max(alpha, beta)
    if c_star is None:
        # x^a y^b + x^b y^a is monotone along rays, minimum on the window corners
        corners = [(b, b), (b, B), (B, B)]
        c_star = min(scale * (x**alpha * y**beta + x**beta * y**alpha) for x, y in corners)
    return KernelSpec("power_sum", alpha + beta, alpha, beta, c_star=c_star,
                      C_star=scale, b=b, B=B,
                      params={"alpha": alpha, "beta": beta, "scale": scale},
                      terms=((scale, alpha, beta), (scale, beta, alpha)))


def additive(b: float = 1.0, B: float = 2.0) -> KernelSpec:
    # homogeneity 1 lies outside (-1, 1); construction raises
    return KernelSpec("additive", 1.0, 0.0, 1.0, c_star=2 * b, C_star=1.0, b=b, B=B,
                      terms=((1.0, 1.0, 0.0), (1.0, 0.0, 1.0)))


def multiplicative(b: float = 1.0, B: float = 2.0) -> KernelSpec:
    return KernelSpec("multiplicative", 2.0, 1.0, 1.0, c_star=b * b, C_star=0.5,
                      b=b, B=B, terms=((1.0, 1.0, 1.0),))


def custom(func: Callable, lam: float, alpha: float, beta: float, c_star: float,
           C_star: float, b: float = 1.0, B: float = 2.0) -> KernelSpec:
    return KernelSpec("custom", lam, alpha, beta, c_star=c_star, C_star=C_star,
                      b=b, B=B, func=func)


def make_kernel(family: str, **params) -> KernelSpec:
    """Build a kernel from a family name and keyword parameters."""
    builders = {
        "constant": constant,
        "brownian": brownian,
        "power_sum": power_sum,
        "additive": additive,
        "multiplicative": multiplicative,
    }
    if family not in builders:
        raise ConfigError(f"unknown kernel family {family!r}; "
                          f"choose from {sorted(builders)}")
    try:
        return builders[family](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for kernel {family!r}: {exc}") from None


# ------------------------------------------------------------------ checks

def check_symmetry(kernel: KernelSpec, samples: Sequence[float]) -> float:
    """Max |K(x,y) - K(y,x)| over all sample pairs."""
    s = np.asarray(samples, dtype=float)
    X, Y = np.meshgrid(s, s, indexing="ij")
    return float(np.max(np.abs(evaluate(kernel, X, Y) - evaluate(kernel, Y, X))))


def check_homogeneity(kernel: KernelSpec, sample_pairs, scale_factors) -> float:
    """Max over samples and r of |K(rx, ry) / (r^lam K(x, y)) - 1|."""
    pairs = np.asarray(sample_pairs, dtype=float).reshape(-1, 2)
    x, y = pairs[:, 0], pairs[:, 1]
    base = evaluate(kernel, x, y)
    dev = 0.0
    for r in scale_factors:
        scaled = evaluate(kernel, r * x, r * y)
        expected = r**kernel.lam * base
        mask = expected > 0
        if np.any(mask):
            dev = max(dev, float(np.max(np.abs(scaled[mask] / expected[mask] - 1.0))))
        if np.any(~mask):
            dev = max(dev, float(np.max(np.abs(scaled[~mask]))))
    return dev


def check_bounds(kernel: KernelSpec, grid) -> tuple[float, float]:
    """(min of K over grid points in [b, B]^2, max of K / (x^a y^b + x^b y^a)).

    The certificate is only as good as the sampling: use a grid with
    several points inside the window and spanning the decades of interest.
    """
    g = np.asarray(grid, dtype=float)
    X, Y = np.meshgrid(g, g, indexing="ij")
    K = evaluate(kernel, X, Y)
    inside = (X >= kernel.b) & (X <= kernel.B) & (Y >= kernel.b) & (Y <= kernel.B)
    if not np.any(inside):
        w = np.linspace(kernel.b, kernel.B, 9)
        Wx, Wy = np.meshgrid(w, w, indexing="ij")
        lower = float(np.min(evaluate(kernel, Wx, Wy)))
    else:
        lower = float(np.min(K[inside]))
    a, b = kernel.alpha, kernel.beta
    shape = X**a * Y**b + X**b * Y**a
    return lower, float(np.max(K / shape))


def sample_pairs(lo: float = 1e-3, hi: float = 1e3, n: int = 13):
    s = np.geomspace(lo, hi, n)
    return list(itertools.product(s, s))
