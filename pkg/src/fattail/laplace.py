"""Desingularized Laplace transform and the integrated identity it satisfies.

For a profile f solving the self-similar equation,

    -q Q'(q) = -rho Q(q) + 1/2 iint K(y,z) f(y) f(z) (1-e^{-qy})(1-e^{-qz}) dy dz

with Q(q) = int (1 - e^{-qx}) f(x) dx.  The identity is a global check
that is independent of the marching solver.  For K = 2 it reduces to the
Bernoulli equation q Q' = rho Q - Q^2, whose solution is used as an exact
oracle.

Transforms are computed by Gauss-Legendre on every grid cell in ln x
(f is an exact power law there) and in closed form on both closures.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import exp1, gamma, gammainc, gammaincc

from .errors import DomainError
from .kernel import KernelSpec, evaluate
from .profile import Profile, interp_eval, map_chunks, weighted_moment

GL_ORDER = 8
_SERIES_MAX_B = 2.0


@dataclass
class LaplaceProbe:
    q: np.ndarray
    Q: np.ndarray
    Qprime: np.ndarray
    B: np.ndarray
    rho: float

    @property
    def residual(self) -> np.ndarray:
        return np.abs(-self.q * self.Qprime + self.rho * self.Q - self.B) / self.Q

    def to_rows(self):
        r = self.residual
        return [(float(a), float(b), float(c), float(d), float(e))
                for a, b, c, d, e in zip(self.q, self.Q, self.Qprime, self.B, r)]


def default_q(p: Profile, per_decade: int = 4) -> np.ndarray:
    """Log-spaced probes on [10/x_max, 10/x_min] clipped to [1e-6, 1e3]."""
    lo = max(10.0 / p.grid.x_max, 1e-6)
    hi = min(10.0 / p.grid.x_min, 1e3)
    n = max(2, int(round(math.log10(hi / lo) * per_decade)) + 1)
    return np.geomspace(lo, hi, n)


# ------------------------------------------------------ special functions

def _expint(s: float, b):
    """Generalized exponential integral E_s(b) = int_1^inf e^{-bt} t^{-s} dt, s > 0."""
    b = np.asarray(b, dtype=float)
    if s < 1:
        return b ** (s - 1) * gamma(1 - s) * gammaincc(1 - s, b)
    if s == 1:
        return exp1(b)
    # upward recurrence; it loses digits only where E_s is below e^{-b}/b anyway
    return (np.exp(-b) - b * _expint(s - 1, b)) / (s - 1)


def _series(b, c, damped: bool):
    """int_0^1 t^{c-1} (1 - e^{-bt}) dt (damped) or int_0^1 t^{c-1} e^{-bt} dt."""
    b = np.asarray(b, dtype=float)
    out = np.zeros(b.shape)
    term = np.ones(b.shape)
    k0 = 1 if damped else 0
    for k in range(0, 60):
        if k > 0:
            term = term * (-b) / k
        if k < k0:
            continue
        out = out + term / (k + c) * (-1.0 if damped else 1.0)
        if np.all(np.abs(term) < 1e-18 * np.abs(out) + 1e-300):
            break
    return out


def _lower_Q(b, c):
    """int_0^1 t^{c-1} (1 - e^{-bt}) dt, needs c > -1."""
    b = np.asarray(b, dtype=float)
    out = np.empty(b.shape)
    small = b <= _SERIES_MAX_B
    out[small] = _series(b[small], c, True)
    big = ~small
    if np.any(big):
        if c > 0:
            out[big] = 1.0 / c - b[big] ** (-c) * gamma(c) * gammainc(c, b[big])
        else:
            out[big] = _numeric_unit(lambda t, bb: t ** (c - 1) * -np.expm1(-bb * t), b[big])
    return out


def _lower_Qprime(b, c):
    """int_0^1 t^{c-1} e^{-bt} dt, needs c > 0."""
    b = np.asarray(b, dtype=float)
    out = np.empty(b.shape)
    small = b <= _SERIES_MAX_B
    out[small] = _series(b[small], c, False)
    big = ~small
    out[big] = b[big] ** (-c) * gamma(c) * gammainc(c, b[big])
    return out


def _numeric_unit(func, b, decades: int = 40):
    """int_0^1 func(t, b) dt by Gauss-Legendre on decade panels in ln t."""
    z, w = leggauss(GL_ORDER)
    edges = np.log(10.0) * np.arange(-decades, 1)
    a, c = edges[:-1], edges[1:]
    t = np.exp((0.5 * (c - a))[:, None] * z + (0.5 * (c + a))[:, None]).ravel()
    wt = (np.outer(0.5 * (c - a), w)).ravel() * t
    return np.array([np.sum(wt * func(t, bb)) for bb in np.atleast_1d(b)])


def _upper_Q(s: float, b):
    """int_1^inf t^{-s} (1 - e^{-bt}) dt, needs s > 1."""
    b = np.asarray(b, dtype=float)
    out = 1.0 / (s - 1) - _expint(s, b)
    small = b < 1.0
    if np.any(small) and s < 2:
        # the direct form cancels as b -> 0: use b^{s-1} (int_0^inf - int_0^b) instead
        bs = b[small]
        head = bs ** (1 - s) * _series(bs, 1 - s, True)
        out[small] = bs ** (s - 1) * (gamma(2 - s) / (s - 1) - head)
    return out


# ------------------------------------------------------------- transforms

def _cell_nodes(p: Profile):
    cache = p.__dict__.get("_laplace_nodes")
    if cache is None:
        z, w = leggauss(GL_ORDER)
        lf, s = p._cells()
        h = p.grid.h
        tau = 0.5 * h * (z + 1)
        x = (p.x[:-1, None] * np.exp(tau)).ravel()
        f = np.exp(lf[:-1, None] + s[:, None] * tau).ravel()
        f[np.repeat((p.values[:-1] == 0) & (p.values[1:] == 0), GL_ORDER)] = 0.0
        wt = np.tile(0.5 * h * w, p.grid.n - 1) * x   # dx = x dtau
        cache = (x, f, wt)
        p.__dict__["_laplace_nodes"] = cache
    return cache


def _check_q(q):
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(~(q > 0)) or np.any(~np.isfinite(q)):
        raise DomainError("Laplace variable q must be positive and finite")
    return q


def power_transform(p: Profile, q, a: float = 0.0, chunk: int = 32, workers: int = 1):
    """Q_a(q) = int x^a (1 - e^{-qx}) f(x) dx."""
    qa = _check_q(q)
    if a + 2 - p.zero_exponent <= 0:
        raise DomainError(f"x^{a} (1-e^(-qx)) f not integrable at 0 (p0={p.zero_exponent})")
    if p.tail_exponent - a <= 1:
        raise DomainError(f"x^{a} f not integrable at infinity (pinf={p.tail_exponent})")
    x, f, wt = _cell_nodes(p)
    g = wt * x**a * f
    x0, xn = p.grid.x_min, p.grid.x_max
    f0, fn = p.values[0], p.values[-1]

    def block(sl):
        qq = qa[sl]
        inner = (-np.expm1(-np.outer(qq, x))) @ g
        low = f0 * x0 ** (1 + a) * _lower_Q(qq * x0, 1 + a - p.zero_exponent)
        high = fn * xn ** (1 + a) * sum(c * _upper_Q(e - a, qq * xn) for c, e in p.tail_terms)
        return inner + low + high

    out = np.concatenate(map_chunks(block, qa.size, chunk, workers)) if qa.size else qa
    return out if np.ndim(q) else float(out[0])


def transform_Q(p: Profile, q, workers: int = 1):
    """Q(q) = int (1 - e^{-qx}) f(x) dx."""
    return power_transform(p, q, 0.0, workers=workers)


def transform_Qprime(p: Profile, q, workers: int = 1):
    """Q'(q) = int x f(x) e^{-qx} dx; q = 0 only for profiles with finite mass."""
    qa = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any(qa < 0) or np.any(~np.isfinite(qa)):
        raise DomainError("Laplace variable q must be nonnegative and finite")
    if np.any(qa == 0):
        if p.tail_exponent <= 2:
            raise DomainError("Q'(0) is the total mass, which diverges for this tail")
    x, f, wt = _cell_nodes(p)
    g = wt * x * f
    x0, xn = p.grid.x_min, p.grid.x_max
    f0, fn = p.values[0], p.values[-1]
    total = weighted_moment(p, 1.0, 0.0, math.inf) if np.any(qa == 0) else None

    def block(sl):
        qq = qa[sl]
        res = np.empty(qq.size)
        zero = qq == 0
        res[zero] = total if total is not None else 0.0
        qp = qq[~zero]
        inner = np.exp(-np.outer(qp, x)) @ g
        low = f0 * x0**2 * _lower_Qprime(qp * x0, 2 - p.zero_exponent)
        high = fn * xn**2 * sum(c * _expint(e - 1, qp * xn) for c, e in p.tail_terms)
        res[~zero] = inner + low + high
        return res

    out = np.concatenate(map_chunks(block, qa.size, 32, workers))
    return out if np.ndim(q) else float(out[0])


def _extended_nodes(p: Profile, decades: int = 24, panels_per_decade: int = 2):
    """Cell nodes plus Gauss panels covering the closures (for generic kernels)."""
    x, f, wt = _cell_nodes(p)
    z, w = leggauss(GL_ORDER)
    m = decades * panels_per_decade
    step = math.log(10.0) / panels_per_decade
    out_x, out_w = [x], [wt]
    for sign, anchor in ((-1, p.grid.x_min), (1, p.grid.x_max)):
        edges = math.log(anchor) + sign * step * np.arange(m + 1)
        lo, hi = np.minimum(edges[:-1], edges[1:]), np.maximum(edges[:-1], edges[1:])
        t = (0.5 * (hi - lo))[:, None] * z + (0.5 * (hi + lo))[:, None]
        xe = np.exp(t).ravel()
        out_x.append(xe)
        out_w.append(np.outer(0.5 * (hi - lo), w).ravel() * xe)
    xs = np.concatenate(out_x)
    ws = np.concatenate(out_w)
    fs = np.concatenate([f, interp_eval(p, xs[x.size:])])
    return xs, fs, ws


def bilinear_term(prob, p: Profile, q, generic: bool = False, workers: int = 1,
                  row_chunk: int = 512):
    """B(q) = 1/2 iint K(y,z) f(y) f(z) (1-e^{-qy})(1-e^{-qz}) dy dz.

    Separable kernels reduce to products of one-dimensional transforms;
    ``generic=True`` forces the tensor-product quadrature used for
    callable kernels.
    """
    kernel: KernelSpec = prob.kernel if hasattr(prob, "kernel") else prob
    qa = _check_q(q)
    if p.trivial:
        out = np.zeros(qa.size)
        return out if np.ndim(q) else 0.0
    if kernel.separable and not generic:
        cache = {}

        def Qa(a):
            if a not in cache:
                cache[a] = power_transform(p, qa, a, workers=workers)
            return cache[a]
        out = sum(0.5 * c * Qa(a) * Qa(b) for c, a, b in kernel.terms)
    else:
        xs, fs, ws = _extended_nodes(p)
        out = np.empty(qa.size)
        for j, qq in enumerate(qa):
            g = ws * fs * -np.expm1(-qq * xs)
            keep = g > 0
            xk, gk = xs[keep], g[keep]

            def rows(sl):
                K = evaluate(kernel, xk[sl, None], xk[None, :])
                return np.array([gk[sl] @ (K @ gk)])
            parts = map_chunks(rows, xk.size, row_chunk, workers)
            out[j] = 0.5 * math.fsum(float(v[0]) for v in parts)
    return out if np.ndim(q) else float(out[0])


def laplace_probe(prob, p: Profile, q=None, workers: int = 1) -> LaplaceProbe:
    qa = default_q(p) if q is None else _check_q(q)
    probe = LaplaceProbe(qa, transform_Q(p, qa, workers), transform_Qprime(p, qa, workers),
                         bilinear_term(prob, p, qa, workers=workers), prob.rho)
    return probe


def check_Q_identity(prob, p: Profile, q_list=None, workers: int = 1) -> float:
    """max_q |-q Q' + rho Q - B| / Q."""
    return float(np.max(laplace_probe(prob, p, q_list, workers).residual))


def perturb(p: Profile, eps: float = 0.1) -> Profile:
    """Negative control: amplitude scaled by 1 + eps (dilations are exact symmetries)."""
    return p.with_values(p.values * (1 + eps))


def constant_kernel_exact_Q(rho: float, q):
    """Exact Q for K = 2, normalized so that f ~ (1-rho) x^{-1-rho}.

    Q = rho q^rho / (q^rho + c rho), c = rho / Gamma(2-rho).
    """
    if not 0 < rho < 1:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    qa = np.asarray(q, dtype=float)
    c = rho / gamma(2 - rho)
    qr = qa**rho
    out = rho * qr / (qr + c * rho)
    return out if out.ndim else float(out)


def small_q_constant(probe: LaplaceProbe, rho: float, n: int = 3) -> float:
    """Measured C_hat in Q(q) <= C_hat q^rho over the n smallest probes."""
    return float(np.max(probe.Q[:n] / probe.q[:n] ** rho))


def write_csv(probe: LaplaceProbe, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "Q", "Qprime", "B", "residual"])
        for row in probe.to_rows():
            w.writerow([f"{v:.17e}" for v in row])
    return path
