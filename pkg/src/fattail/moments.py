"""Averaged and moment inequalities measured on a tabulated profile.

Every estimate of the form  Q(x) <= C * x^e  is scored by its measured
constant  sup_probes Q(x) / x^e.  The constants are existence-only in the
theory, so a check passes when the constant is finite (and, for the
normalized mass bound, not above one).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError
from .profile import Profile, partial_mass, tail_moment, weighted_moment

__all__ = [
    "InequalityCheck", "partial_mass", "default_probes", "check_zero_averaged",
    "check_tail_averaged", "check_moment_estimates", "run_suite",
]


@dataclass
class InequalityCheck:
    name: str
    chi: Optional[float]
    probes: tuple
    constant: float
    passed: bool
    ratios: np.ndarray = field(default=None, repr=False)
    note: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "chi": self.chi,
                "probes": [float(self.probes[0]), float(self.probes[-1])],
                "constant": float(self.constant), "pass": bool(self.passed),
                "note": self.note}


def default_probes(p: Profile) -> np.ndarray:
    """One probe per half-decade of the grid plus one probe in each closure."""
    lo, hi = math.log10(p.grid.x_min), math.log10(p.grid.x_max)
    k = np.arange(math.ceil(2 * lo), math.floor(2 * hi) + 1)
    inner = 10.0 ** (k / 2)
    return np.concatenate(([p.grid.x_min / 10], inner, [p.grid.x_max * 10]))


def _probes(p, probes):
    r = default_probes(p) if probes is None else np.asarray(probes, dtype=float)
    if r.size == 0 or np.any(r <= 0):
        raise DomainError("probes must be a nonempty list of positive sizes")
    return r


def _score(name, chi, probes, values, shape, extra_ok=True, note=""):
    ratios = np.asarray(values, dtype=float) / shape
    c = float(np.max(ratios))
    ok = bool(np.isfinite(c) and np.all(np.isfinite(ratios)) and extra_ok)
    return InequalityCheck(name, chi, tuple(float(r) for r in probes), c, ok, ratios, note)


def check_zero_averaged(p: Profile, lam: float, probes: Sequence[float] = None) -> InequalityCheck:
    """sup_R R^{lam-1} int_R^{2R} x f(x) dx."""
    R = _probes(p, probes)
    band = partial_mass(p, 2 * R) - partial_mass(p, R)
    return _score("zero_averaged", None, R, band, R ** (1 - lam))


def check_tail_averaged(p: Profile, rho: float, probes: Sequence[float] = None,
                        normalized: bool = True, tol: float = 1e-6) -> InequalityCheck:
    """sup_R R^{rho-1} M(R); a normalized profile must stay below 1 + tol."""
    R = _probes(p, probes)
    chk = _score("tail_averaged", None, R, partial_mass(p, R), R ** (1 - rho))
    if normalized and chk.constant > 1 + tol:
        chk.passed = False
        chk.note = f"normalized bound exceeded by {chk.constant - 1:.3e}"
    return chk


def _chi_grid(lo, hi, n=4):
    """n exponents strictly inside (lo, hi); infinite ends get a unit span."""
    if math.isinf(lo):
        lo = hi - 1.0
    if math.isinf(hi):
        hi = lo + 1.5
    return [float(lo + (hi - lo) * f) for f in np.linspace(0.1, 0.9, n)]


def check_moment_estimates(p: Profile, rho: float, lam: float,
                           probes: Sequence[float] = None, nu: float = 0.1,
                           n_chi: int = 4) -> list[InequalityCheck]:
    """The six moment estimates, one check per (estimate, chi)."""
    R = _probes(p, probes)
    big = R[R >= 1]
    p0 = p.zero_exponent
    out = []
    for chi in _chi_grid(-math.inf, rho, n_chi):
        out.append(_score("moment:1", chi, R, tail_moment(p, chi, R), R ** (chi - rho)))
    for chi in _chi_grid(-math.inf, lam, n_chi):
        out.append(_score("moment:1.5", chi, R, tail_moment(p, chi, R), R ** (chi - lam)))
    # head moments need chi + 1 > p0
    lo = max(lam, p0 - 1)
    for chi in _chi_grid(lo, math.inf, n_chi):
        head = np.array([weighted_moment(p, chi, 0.0, r) for r in R])
        out.append(_score("moment:2", chi, R, head, R ** (chi - lam)))
    for chi in _chi_grid(lo, math.inf, n_chi):
        head = np.array([weighted_moment(p, chi, 0.0, r) for r in big])
        out.append(_score("moment:2.5", chi, big, head,
                          big ** max(chi - rho, 1 - rho)))
    for chi in _chi_grid(lo, math.inf, n_chi):
        head = np.array([weighted_moment(p, chi, 0.0, r) for r in big])
        out.append(_score("moment:3", chi, big, head, big ** max(chi - rho + nu, 0.0),
                          note=f"nu={nu}"))
    # an empty interval means the zero closure is too singular for any chi
    # in (lambda, rho); the estimate is then vacuous for this profile
    if lo < rho:
        for chi in _chi_grid(lo, rho, n_chi):
            total = weighted_moment(p, chi, 0.0, math.inf)
            out.append(_score("moment:4", chi, R[:1], [total], 1.0))
    if lo > lam:
        for c in out:
            if c.name in ("moment:2", "moment:2.5", "moment:3", "moment:4"):
                c.note = f"chi sampled above p0 - 1 = {lo:.6g} > lambda"
    return out


def run_suite(p: Profile, rho: float, lam: float, probes=None, normalized: bool = True,
              workers: int = 1) -> list[InequalityCheck]:
    """All checks, evaluated concurrently and returned in name order."""
    jobs = [lambda: [check_zero_averaged(p, lam, probes)],
            lambda: [check_tail_averaged(p, rho, probes, normalized)],
            lambda: check_moment_estimates(p, rho, lam, probes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda f: f(), jobs))
    else:
        parts = [f() for f in jobs]
    checks = [c for part in parts for c in part]
    return sorted(checks, key=lambda c: (c.name, -math.inf if c.chi is None else c.chi))
