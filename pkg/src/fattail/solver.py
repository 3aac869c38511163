"""Self-similar profiles of the fat-tailed coagulation equation.

The profile equation

    x^2 f(x) = (1 - rho) M(x) + I[f](x),      M(x) = int_0^x y f(y) dy,

is solved by an outer fixed-point loop.  In each outer step the inner
z-integral F(y, w) = int_w^inf K(y, z) f(z) dz is frozen at the current
iterate, which makes the equation a linear Volterra equation in f: the
value at node i only depends on f below x_i.  It is then solved by
marching up the grid, one scalar Newton solve per node (the unknown is the
log slope of the last cell).  The near-zero closure exponent comes from the
indicial equation at x_0, and the amplitude is fixed by the normalisation
R^{rho-1} M(R) -> 1 as R -> inf, estimated with the flux-consistent tail
closure described in ``_tail_closure``.

``iterate`` is the plain damped map f <- (1-w) f + w G[f]; it is kept as a
reference operator (tests, diagnostics) but it does not converge on its own
for the fat-tailed problem, see the README.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import beta as beta_fn
from scipy.special import roots_jacobi

from .errors import ConfigError, DomainError, NumericalError
from .kernel import KernelSpec, evaluate
from .profile import (EPS_FLOOR, TINY, Grid, Profile, QuadConfig, _seg, gain_operator,
                      gain_weights, grid_per_decade, interp_eval, partial_mass, rescale,
                      trust_window)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridConfig:
    x_min: float = 1e-5
    x_max: float = 1e5
    per_decade: int = 60

    def build(self) -> Grid:
        return grid_per_decade(self.x_min, self.x_max, self.per_decade)


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings.

    ``R_ref=None`` normalises at infinity (the default, see ``normalize``);
    a finite value pins R_ref^{rho-1} M(R_ref) = 1 instead.  At infinity the
    pure power-law closure is used until the residual drops below
    ``closure_switch``; after that the flux-consistent closure takes over
    (its decay-rate estimate is meaningless on far-off iterates).  If the
    closure needs a correction weight |w| above ``max_tail_correction`` the
    grid does not reach the asymptotic tail and the pure closure is kept.  Grids
    wider than ``continuation_decades`` are solved on that many decades
    first and then extended through the closure.
    """

    damping: float = 0.5
    damping_floor: float = 0.05
    max_iter: int = 200
    tol: float = 1e-8
    trust_fraction: float = 0.6
    R_ref: Optional[float] = None
    tail_fit_decades: float = 0.5
    tail_delta: Optional[float] = None
    max_tail_correction: float = 0.25
    closure_switch: float = 1e-2
    continuation_decades: float = 10.0
    workers: int = 1


@dataclass(frozen=True)
class ProfileProblem:
    kernel: KernelSpec
    rho: float
    gamma: Optional[float] = None
    grid: GridConfig = field(default_factory=GridConfig)
    quad: QuadConfig = field(default_factory=QuadConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        k = self.kernel
        lo = max(k.lam, k.beta)
        if not lo < self.rho < 1:
            raise ConfigError(
                f"rho={self.rho} not admissible: a profile needs rho in "
                f"(max(lambda, beta), 1) = ({lo}, 1)")
        if self.gamma is None:
            object.__setattr__(self, "gamma", max(k.beta, 0.5 * (k.lam + self.rho)))
        g = self.gamma
        if not (g >= k.beta and g > k.lam):
            raise ConfigError(f"gamma={g} must satisfy gamma >= beta and gamma > lambda")
        if not g < self.rho:
            raise ConfigError(f"gamma={g} >= rho={self.rho}: tail moment would diverge")
        s = self.solver
        if not 0 < s.damping <= 1 or not 0 < s.damping_floor <= s.damping:
            raise ConfigError("damping must lie in (0, 1] and floor in (0, damping]")

    @property
    def lam(self) -> float:
        return self.kernel.lam


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    scale_a: float = 1.0
    converged: bool = False
    zero_exponent: float = float("nan")
    tail_correction: tuple = (0.0, 0.0)
    damping_history: list = field(default_factory=list)
    tail_warning: bool = False

    @property
    def contracting(self) -> bool:
        """Residual history nonincreasing after the first five iterations."""
        h = np.asarray(self.residual_history[5:])
        return bool(np.all(np.diff(h) <= 0)) if len(h) > 1 else True

    def to_dict(self) -> dict:
        return {"iterations": self.iterations,
                "residual_history": [float(r) for r in self.residual_history],
                "scale_a": float(self.scale_a), "converged": bool(self.converged),
                "contracting": self.contracting,
                "zero_exponent": float(self.zero_exponent),
                "tail_correction": [float(c) for c in self.tail_correction],
                "tail_warning": bool(self.tail_warning)}


# ------------------------------------------------------------ basic pieces

def initial_guess(prob: ProfileProblem) -> Profile:
    """(1-rho) x^{-1-rho} for x >= 1, (1-rho) x^{-1-lam} below (continuous at 1)."""
    g = prob.grid.build()
    x, rho, lam = g.nodes, prob.rho, prob.lam
    vals = np.where(x >= 1, (1 - rho) * x ** (-1 - rho), (1 - rho) * x ** (-1 - lam))
    return Profile(g, vals, 1 + lam, 1 + rho)


def iterate(prob: ProfileProblem, p: Profile, omega: Optional[float] = None) -> Profile:
    """Damped map f <- (1-omega) f + omega G[f], G[f] = ((1-rho) M + I[f]) / x^2."""
    omega = prob.solver.damping if omega is None else omega
    x = p.x
    G = ((1 - prob.rho) * partial_mass(p, x)
         + gain_operator(prob.kernel, p, x, prob.quad, workers=prob.solver.workers)) / x**2
    new = (1 - omega) * p.values + omega * G
    if not np.all(np.isfinite(new)):
        raise NumericalError("iterate produced non-finite values")
    return p.with_values(new)


def normalized_mass_limit(p: Profile, rho: float) -> float:
    """lim R^{rho-1} M(R) as R -> inf, read off the upper closure."""
    if abs(p.tail_exponent - (1 + rho)) > 1e-12:
        raise DomainError(
            f"tail exponent {p.tail_exponent} != 1 + rho: R^(rho-1) M(R) has no finite "
            "nonzero limit")
    w = p.tail_correction[0]
    return p.grid.x_max ** (1 + rho) * p.values[-1] * (1 - w) / (1 - rho)


def normalize(p: Profile, rho: float, lam: float, R_ref: float = math.inf):
    """Rescale f~(x) = a^{1+lam} f(a x) so that R_ref^{rho-1} M_f~(R_ref) = 1.

    Because R^{rho-1} M_f~(R) = a^{lam-rho} (aR)^{rho-1} M_f(aR), the scale a
    solves a scalar equation; for R_ref = inf it is explicit,
    a = L^{1/(rho-lam)} with L the limit of R^{rho-1} M_f(R).
    Returns (profile, a).
    """
    if rho == lam:
        raise DomainError("rho == lambda: normalisation is degenerate")
    if math.isinf(R_ref):
        L = normalized_mass_limit(p, rho)
        if not L > 0:
            raise DomainError("normalisation needs a positive mass limit")
        a = L ** (1 / (rho - lam))
        q = rescale(p, a, lam) if a != 1 else p
        if a < 1:
            # the rescaled closure is re-anchored on the new last node
            f_n = q.values[-1] * q.grid.x_max ** (1 + rho)
            sigma = p.tail_correction[1] or rho - lam
            q = q.with_values(q.values, tail_correction=(1 - (1 - rho) / f_n, sigma))
        return q, a

    def g(R):
        return R ** (rho - 1) * partial_mass(p, R)

    L = g(R_ref)
    if not L > 0:
        raise DomainError(f"M({R_ref}) must be positive to normalise")
    la0 = math.log(L) / (rho - lam)

    def phi(la):
        return (lam - rho) * la + math.log(g(math.exp(la) * R_ref))

    # phi -> -inf for large a; the wanted root is the one on that branch.  For
    # small a the rescaled mass probes the zero closure, where phi may turn
    # down again, so the search stops at the bottom of the grid.
    lo, hi = la0 - 0.5, la0 + 0.5
    while phi(lo) < 0:
        lo -= 1.0
        if math.exp(lo) * R_ref < p.grid.x_min:
            raise DomainError(
                f"R_ref={R_ref} too small: no rescaling reaches R_ref^(rho-1) M(R_ref) = 1 "
                "inside the grid")
    while phi(hi) > 0:
        hi += 1.0
        if hi > 600:
            raise DomainError(f"no rescaling reaches R_ref^(rho-1) M(R_ref) = 1 at R_ref={R_ref}")
    la = la0 if phi(la0) == 0 else brentq(phi, lo, hi, xtol=1e-15, rtol=1e-15)
    # retabulation on the same grid is not exact for curved data; polish a
    # against the profile that is actually returned
    def resid(la):
        q = rescale(p, math.exp(la), lam)
        return math.log(R_ref ** (rho - 1) * partial_mass(q, R_ref))

    r0 = resid(la)
    if r0 != 0:
        step = r0 / (rho - lam)
        lo, hi = sorted((la, la + 2 * step))
        while resid(lo) * resid(hi) > 0:
            lo, hi = lo - abs(step), hi + abs(step)
        la = brentq(resid, lo, hi, xtol=1e-15, rtol=1e-15)
    a = math.exp(la)
    return rescale(p, a, lam), a


# ------------------------------------------------------------ the marcher

def _indicial(rho, wF0, u):
    """Near-zero exponent p0 from 1 = (1-rho)/(2-p0) + sum wF u^{-p0}."""
    def phi(p0):
        return (1 - rho) / (2 - p0) + np.dot(wF0, u ** (-p0)) - 1

    lo = -200.0
    return brentq(phi, lo, 2 - 1e-9, xtol=1e-14) if phi(lo) < 0 else lo


def _node_slope(rho, h, e2h, Mrel, S, wl, tl, z, i):
    """Root of e^z = (1-rho) e^{-2h} (Mrel + seg(2 + z/h, h)) + S + sum wl e^{tl z}.

    Newton from the previous slope; the left side wins as z -> +inf and the
    right side as z -> -inf, so a bracketing search backs it up.
    """
    def parts(z):
        sg = _seg(2 + z / h, h)
        k = 2 * h + z
        # d/dz seg(2 + z/h, h) = int_0^h (t/h) e^{(2+z/h) t} dt
        dsg = (h * math.exp(k) - sg) / k if abs(k) > 1e-8 else 0.5 * h
        el = np.exp(tl * z)
        rhs = (1 - rho) * e2h * (Mrel + sg) + S + np.dot(wl, el)
        drhs = (1 - rho) * e2h * dsg + np.dot(wl * tl, el)
        return math.exp(z) - rhs, math.exp(z) - drhs

    z0 = z
    with np.errstate(all="ignore"):
        for _ in range(60):
            phi, dphi = parts(z)
            dz = phi / dphi if dphi != 0 else math.nan
            if not math.isfinite(dz) or abs(dz) > 50:
                break
            z -= dz
            if abs(dz) < 1e-14:
                return z
    lo, hi = z0 - 1.0, z0 + 1.0
    while parts(lo)[0] > 0:
        lo -= 2 * (hi - lo)
        if lo < -700:
            raise NumericalError(f"node {i}: no bracket for the slope equation")
    while parts(hi)[0] < 0:
        hi += 2 * (hi - lo)
        if hi > 700:
            raise NumericalError(f"node {i}: no bracket for the slope equation")
    return brentq(lambda t: parts(t)[0], lo, hi, xtol=1e-15, rtol=1e-15)


def _march(rho, p: Profile, rule, wF, h):
    """Solve the frozen-F Volterra problem; returns log f (unnormalised),
    p0, log I at the nodes and M / (x^2 f) at the last node."""
    n = p.grid.n
    # ln u from v near u = 1: u itself rounds to 1.0 once v < 1e-16
    lnu = np.where(rule.u > 0.5, np.log1p(-np.minimum(rule.v, 0.5)), np.log(rule.u))
    lu = lnu / h
    d = np.floor(lu).astype(np.int64)
    th = lu - d
    last = d == -1
    inner_cells = ~last
    tl = th[last]
    e2h = math.exp(-2 * h)

    p0 = _indicial(rho, wF[0], rule.u)
    lg = np.zeros(n)
    logI = np.empty(n)
    logI[0] = math.log(max(np.dot(wF[0], rule.u ** (-p0)), TINY))
    Mrel = 1 / (2 - p0)
    z = 0.0
    for i in range(1, n):
        idx = i + d
        inside = (idx >= 0) & inner_cells
        ia = np.clip(idx, 0, n - 1)
        ib = np.clip(idx + 1, 0, n - 1)
        ly = np.where(inside, lg[ia] * (1 - th) + lg[ib] * th, lg[0] - p0 * (lnu + i * h))
        known = np.where(last, 0.0, np.exp(np.minimum(ly - lg[i - 1], 700.0)))
        S = np.dot(np.where(last, 0.0, wF[i]), known)
        wl = wF[i][last]
        z = _node_slope(rho, h, e2h, Mrel, S, wl, tl, z, i)
        lg[i] = lg[i - 1] + z
        logI[i] = lg[i - 1] + math.log(max(S + np.dot(wl, np.exp(tl * z)), TINY))
        Mrel = e2h * (Mrel + _seg(2 + z / h, h)) * math.exp(-z)
    logI += 2 * np.log(p.x)
    return lg, p0, logI, Mrel


def _tail_closure(rho, x, lg, logI, Mrel_last, fit_decades, delta=None):
    """Normalise at infinity with a flux-consistent two-term closure.

    Above the grid I[f](x) ~ c x^{1-rho-delta} decays relative to the mass
    term, so integrating x^{rho-1} M' = x^{rho+1} f gives
        L = x_n^{rho-1} (M_n + I_n / delta),
    and the closure f = x^{-1-rho} [(1-rho) L + B (x/x_n)^{-delta}] is the
    one consistent with the equation to first order.  delta comes from a
    log-log fit of I over the top ``fit_decades``.
    Returns (log-amplitude shift, w, delta).
    """
    lx = np.log(x)
    if delta is None:
        sel = lx >= lx[-1] - fit_decades * math.log(10)
        slope = np.polyfit(lx[sel], logI[sel], 1)[0]
        delta = float(np.clip(1 - rho - slope, 0.05, 2.0))
    lxn = lx[-1]
    # log L = (rho-1) ln x_n + lg_n + ln(x_n^2 Mrel + (I_n / f_n) / delta)
    logL = (rho - 1) * lxn + lg[-1] + math.log(
        math.exp(2 * lxn) * Mrel_last + math.exp(logI[-1] - lg[-1]) / delta)
    shift = -logL
    fn = math.exp((1 + rho) * lxn + lg[-1] + shift)
    w = 1 - (1 - rho) / fn
    return shift, w, delta


def _node_residual(rho, p: Profile, rule, wF):
    """Residual of the profile equation at the nodes, reusing frozen F."""
    x = p.x
    f_u = interp_eval(p, x[:, None] * rule.u)
    I = x**2 * np.einsum("ik,ik->i", wF, f_u)
    lhs = x**2 * p.values
    r = np.abs(lhs - (1 - rho) * partial_mass(p, x) - I) / (lhs + EPS_FLOOR)
    return r


def _continuation_guess(prob: ProfileProblem) -> Profile:
    """Initial guess, or for wide grids the extension of a narrower solve."""
    g = prob.grid.build()
    span = math.log10(g.x_max / g.x_min)
    if span <= prob.solver.continuation_decades + 1e-9:
        return initial_guess(prob)
    m = int(round(prob.solver.continuation_decades * math.log(10) / g.h)) + 1
    sub = Grid(g.nodes[:m].copy())
    sub_prob = replace(prob, grid=_FixedGrid(sub))
    p_sub, rep = solve(sub_prob)
    log.info("continuation: %d-node stage converged=%s", m, rep.converged)
    vals = interp_eval(p_sub, g.nodes)
    return Profile(g, vals, p_sub.zero_exponent, p_sub.tail_exponent, p_sub.tail_correction)


@dataclass(frozen=True)
class _FixedGrid:
    """Grid config wrapping a prebuilt grid (continuation stages)."""
    grid: Grid

    def build(self) -> Grid:
        return self.grid


def solve(prob: ProfileProblem, p_init: Optional[Profile] = None):
    """Outer fixed-point loop around the Volterra marcher.

    Each step: freeze F at the current iterate, measure its residual, march
    a new profile, normalise it, blend in log space with the current damping
    (halved when the residual grows, floored at ``damping_floor``).
    """
    cfg = prob.solver
    k, rho = prob.kernel, prob.rho
    if p_init is None:
        p_init = _continuation_guess(prob)
    p = p_init
    if p.trivial:
        raise DomainError("the trivial profile is a fixed point; start from a nontrivial one")
    window = trust_window(p.grid, cfg.trust_fraction)
    h = p.grid.h
    report = SolveReport()
    omega = cfg.damping
    prev = math.inf
    for it in range(cfg.max_iter):
        rule, wF = gain_weights(k, p, p.x, prob.quad, workers=cfg.workers)
        res = float(np.max(_node_residual(rho, p, rule, wF)[window]))
        if not math.isfinite(res):
            raise NumericalError(f"iteration {it}: residual is not finite")
        report.residual_history.append(res)
        report.iterations = it
        log.debug("iter %d residual %.3e damping %.3g", it, res, omega)
        if res < cfg.tol:
            report.converged = True
            break
        if res > prev and it > 0:
            omega = max(0.5 * omega, cfg.damping_floor)
        prev = res
        report.damping_history.append(omega)
        lg, p0, logI, Mrel = _march(rho, p, rule, wF, h)
        flux = None
        if cfg.R_ref is None and res < cfg.closure_switch:
            flux = _tail_closure(rho, p.x, lg, logI, Mrel, cfg.tail_fit_decades, cfg.tail_delta)
            if abs(flux[1]) > cfg.max_tail_correction:
                if not report.tail_warning:
                    log.warning("solve: tail correction %.3g exceeds %.3g; grid top is not "
                                "asymptotic, keeping the pure closure", flux[1],
                                cfg.max_tail_correction)
                report.tail_warning = True
                flux = None
        if flux is not None:
            shift, w_new, delta = flux
        elif cfg.R_ref is None:
            shift = (math.log(1 - rho) - (1 + rho) * math.log(p.grid.x_max)) - lg[-1]
            w_new, delta = 0.0, 0.0
        else:
            trial = p.with_values(np.exp(lg - lg.max()), zero_exponent=p0)
            R = cfg.R_ref
            shift = -math.log(R ** (rho - 1) * partial_mass(trial, R)) - lg.max()
            w_new, delta = 0.0, 0.0
        lg = lg + shift
        old = np.log(np.maximum(p.values, TINY))
        blend = (1 - omega) * old + omega * lg
        w_old, d_old = p.tail_correction
        w = (1 - omega) * w_old + omega * w_new
        delta = delta or d_old
        p0 = (1 - omega) * p.zero_exponent + omega * p0
        p = p.with_values(np.exp(blend), zero_exponent=p0,
                          tail_correction=(w, delta) if w != 0 else (0.0, 0.0))
    else:
        report.iterations = cfg.max_iter
    report.zero_exponent = p.zero_exponent
    report.tail_correction = p.tail_correction
    if cfg.R_ref is None:
        report.scale_a = normalized_mass_limit(p, rho) ** (1 / (rho - prob.lam))
    else:
        _, report.scale_a = normalize(p, rho, prob.lam, cfg.R_ref)
    if not report.converged:
        log.warning("solve: not converged after %d iterations (residual %.3e)",
                    cfg.max_iter, report.residual_history[-1])
    return p, report


# --------------------------------------------------- explicit power law

def powerlaw_integral(kernel: KernelSpec, lam: Optional[float] = None) -> float:
    """J = int_0^1 u^{-lam} int_{1-u}^inf K(u, v) v^{-1-lam} dv du.

    Separable kernels give a sum of Beta functions.  Otherwise, with
    v = (1-u)/s the inner range is s in (0, 1] and the integrand behaves like
    s^{alpha-1} + s^{beta-1}; s = t^{1/alpha} leaves a bounded integrand.  The
    outer endpoints behave like u^{-beta} and (1-u)^{-beta}, removed the same
    way with u = t^{1/(1-beta)} from each end.
    """
    lam = kernel.lam if lam is None else lam
    if kernel.alpha <= 0:
        raise DomainError(
            f"alpha={kernel.alpha} <= 0: the power-law integral diverges at v -> 0")
    a, b = kernel.alpha, kernel.beta
    if kernel.separable:
        return float(sum(c * beta_fn(1 + aa - lam, 1 + bb - lam) / (lam - bb)
                         for c, aa, bb in kernel.terms))

    def inner(u):
        # (1-u)^{lam} int_{1-u}^inf K(u, v) v^{-1-lam} dv
        def g(t):
            s = max(t, 1e-300) ** (1 / a)
            return evaluate(kernel, u, (1 - u) / s) * s ** (lam - a) / a
        return integrate.quad(g, 0, 1, epsabs=0, epsrel=1e-11, limit=200)[0]

    m = 1 / (1 - b)

    def outer(t, left):
        t = max(t, 1e-300)
        d = 0.5 * t**m
        u = d if left else 1 - d
        return (u * (1 - u)) ** -lam * inner(u) * 0.5 * m * t ** (m - 1)

    return float(sum(integrate.quad(outer, 0, 1, args=(side,), epsabs=0, epsrel=1e-10,
                                    limit=200)[0] for side in (True, False)))


def powerlaw_amplitude(kernel: KernelSpec, rho: float, lam: Optional[float] = None) -> float:
    """A with f = A x^{-1-lam} solving the profile equation: A J = (rho-lam)/(1-lam)."""
    lam = kernel.lam if lam is None else lam
    J = powerlaw_integral(kernel, lam)
    return (1 - (1 - rho) / (1 - lam)) / J


def powerlaw_profile(kernel: KernelSpec, rho: float, grid: Grid) -> Profile:
    A = powerlaw_amplitude(kernel, rho)
    lam = kernel.lam
    return Profile(grid, A * grid.nodes ** (-1 - lam), 1 + lam, 1 + lam)


def powerlaw_integral_2d(kernel: KernelSpec, n: int = 200, lam: Optional[float] = None) -> float:
    """Brute-force tensor Gauss-Jacobi evaluation of J, kernel used as a black box.

    With v = (1-u)/s the inner range becomes s in (0, 1].  The endpoint
    singularities u^{-beta}, (1-u)^{-beta} and s^{alpha-1} implied by the
    kernel bounds go into the Jacobi weights; everything else is sampled.
    """
    lam = kernel.lam if lam is None else lam
    a, b = kernel.alpha, kernel.beta
    if a <= 0:
        raise DomainError(f"alpha={a} <= 0: the power-law integral diverges")
    tu, wu = roots_jacobi(n, -b, -b)           # weight (1-t)^-b (1+t)^-b on [-1, 1]
    u = 0.5 * (tu + 1)
    wu = wu * 0.5 ** (1 - 2 * b)
    ts, ws = roots_jacobi(n, 0.0, a - 1)       # weight (1+t)^{a-1}
    s = 0.5 * (ts + 1)
    ws = ws * 0.5 ** a
    U, S = np.meshgrid(u, s, indexing="ij")
    V = (1 - U) / S
    F = U ** (-lam) * evaluate(kernel, U, V) * V ** (-1 - lam) * (1 - U) / S**2
    F = F / (U ** (-b) * (1 - U) ** (-b) * S ** (a - 1))
    return float(wu @ F @ ws)
