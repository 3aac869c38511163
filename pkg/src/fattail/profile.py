"""Tabulated profiles on logarithmic grids.

A profile is piecewise power law: log f is linear in log x on every grid
cell, and beyond the grid ends it continues as power laws with the closure
exponents ``zero_exponent`` (f ~ x^{-p0} below x_0) and ``tail_exponent``
(f ~ x^{-pinf} above x_{n-1}).  The upper closure may carry one faster
decaying correction term, ``tail_correction = (w, sigma)``:

    f(x) = f_{n-1} [(1 - w) (x/x_{n-1})^{-pinf} + w (x/x_{n-1})^{-pinf-sigma}]

with w = 0 giving the pure power law.  Because of that every power moment
of a profile has a closed form, which the rest of the package uses for
partial masses, tail moments and the inner integral of the gain operator.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import exprel

from . import jsonio
from .errors import ConfigError, DomainError, NumericalError
from .kernel import KernelSpec, evaluate

TINY = 1e-300          # floor used for log f; keeps zero cells finite
EPS_FLOOR = 1e-300     # residual denominator floor


def _seg(k, tau):
    """int_0^tau exp(k t) dt, stable for k*tau -> 0 and vectorised."""
    return tau * exprel(k * tau)


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class Grid:
    nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 16:
            raise ConfigError(f"grid needs at least 16 nodes, got {x.size}")
        if not (x[0] > 0 and np.all(np.diff(x) > 0)):
            raise ConfigError("grid nodes must be positive and strictly increasing")
        r = x[1:] / x[:-1]
        if np.max(np.abs(r / r[0] - 1)) > 1e-12:
            raise ConfigError("grid nodes are not log-uniform")
        object.__setattr__(self, "nodes", x)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def h(self) -> float:
        """Log spacing ln(x_{i+1} / x_i)."""
        return math.log(self.x_max / self.x_min) / (self.n - 1)

    @property
    def ratio(self) -> float:
        return math.exp(self.h)

    def __eq__(self, other):
        return isinstance(other, Grid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash((self.n, self.x_min, self.x_max))


def make_log_grid(x_min: float, x_max: float, n: int) -> Grid:
    """Log-uniform grid with exactly ``n`` nodes from x_min to x_max."""
    if not (x_min > 0 and x_max > x_min):
        raise ConfigError(f"need 0 < x_min < x_max, got ({x_min}, {x_max})")
    if n < 16:
        raise ConfigError(f"grid needs at least 16 nodes, got {n}")
    h = math.log(x_max / x_min) / (n - 1)
    nodes = x_min * np.exp(h * np.arange(n))
    nodes[-1] = x_max
    return Grid(nodes)


def grid_per_decade(x_min: float, x_max: float, per_decade: int) -> Grid:
    decades = math.log10(x_max / x_min)
    return make_log_grid(x_min, x_max, int(round(decades * per_decade)) + 1)


# --------------------------------------------------------------- profiles

@dataclass(frozen=True, eq=False)
class Profile:
    grid: Grid
    values: np.ndarray = field(repr=False)
    zero_exponent: float
    tail_exponent: float
    tail_correction: tuple = (0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ConfigError("profile values must match grid size")
        if not np.all(np.isfinite(v)):
            raise NumericalError("profile contains non-finite values")
        if np.any(v < 0):
            raise DomainError("profile values must be nonnegative")
        if not self.zero_exponent < 2:
            raise DomainError(
                f"zero exponent {self.zero_exponent} >= 2: x f(x) not integrable at 0")
        w, sigma = self.tail_correction
        if w != 0 and not (sigma > 0 and w < 1):
            raise DomainError(f"tail correction {self.tail_correction} needs sigma > 0, w < 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "tail_correction", (float(w), float(sigma)))

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def trivial(self) -> bool:
        return not np.any(self.values > 0)

    @property
    def tail_terms(self) -> tuple:
        """Upper closure as ((weight, exponent), ...) relative to f_{n-1}."""
        w, sigma = self.tail_correction
        if w == 0:
            return ((1.0, self.tail_exponent),)
        return ((1.0 - w, self.tail_exponent), (w, self.tail_exponent + sigma))

    def with_values(self, values, zero_exponent=None, tail_exponent=None,
                    tail_correction=None) -> "Profile":
        return Profile(self.grid, values,
                       self.zero_exponent if zero_exponent is None else zero_exponent,
                       self.tail_exponent if tail_exponent is None else tail_exponent,
                       self.tail_correction if tail_correction is None else tail_correction)

    # -- cell data (cached lazily; dataclass is frozen so go through __dict__)
    def _cells(self):
        cache = self.__dict__.get("_cell_cache")
        if cache is None:
            lf = np.log(np.maximum(self.values, TINY))
            slopes = np.diff(lf) / self.grid.h
            cache = (lf, slopes)
            self.__dict__["_cell_cache"] = cache
        return cache

    def _moment_tables(self, chi: float):
        """Per-cell integrals of y^chi f and their reverse cumulative sums."""
        tables = self.__dict__.setdefault("_moment_cache", {})
        if chi not in tables:
            lf, s = self._cells()
            x, h = self.x, self.grid.h
            cell = x[:-1] ** (chi + 1) * self.values[:-1] * _seg(chi + 1 + s, h)
            cell[(self.values[:-1] == 0) & (self.values[1:] == 0)] = 0.0
            rev = np.zeros(self.grid.n)
            rev[:-1] = np.cumsum(cell[::-1])[::-1]
            fwd = np.zeros(self.grid.n)
            fwd[1:] = np.cumsum(cell)
            tables[chi] = (cell, rev, fwd)
        return tables[chi]


def _locate(grid: Grid, x):
    """Cell index i (x_i <= x < x_{i+1}) and offset tau = ln(x / x_i)."""
    t = np.log(x / grid.x_min) / grid.h
    i = np.clip(np.floor(t).astype(np.int64), 0, grid.n - 2)
    tau = np.log(x) - np.log(grid.nodes[i])
    return i, tau


def interp_eval(p: Profile, x):
    """Evaluate the profile: log-log linear inside, power-law closures outside."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise DomainError("profile argument must be positive")
    lf, s = p._cells()
    g = p.grid
    i, tau = _locate(g, xa)
    logv = lf[i] + s[i] * tau
    below = xa < g.x_min
    above = xa > g.x_max
    logv = np.where(below, lf[0] - p.zero_exponent * np.log(xa / g.x_min), logv)
    if np.any(above):
        la = np.log(np.where(above, xa, g.x_max) / g.x_max)
        shape = sum(c * np.exp(-e * la) for c, e in p.tail_terms)
        logv = np.where(above, lf[-1] + np.log(shape), logv)
    out = np.exp(logv)
    # exact at nodes, and zeros stay zeros instead of the TINY floor
    out = np.where(logv <= math.log(TINY) + 1e-9, 0.0, out)
    return out if out.ndim else float(out)


def _head(p: Profile, chi: float, w):
    """int_0^w y^chi f(y) dy (requires chi + 1 - p0 > 0)."""
    k0 = chi + 1 - p.zero_exponent
    if k0 <= 0:
        raise DomainError(
            f"moment of order {chi} diverges at 0: need chi > zero_exponent - 1 = "
            f"{p.zero_exponent - 1}")
    g = p.grid
    lf, s = p._cells()
    cell, rev, fwd = p._moment_tables(chi)
    w = np.asarray(w, dtype=float)
    x0 = g.x_min
    base = x0 ** (chi + 1) * p.values[0] / k0
    out = np.empty(w.shape)
    lo = w <= x0
    if np.any(lo):
        wl = w[lo]
        # base * (w/x0)^{k0}, in logs so that tiny w cannot overflow f
        with np.errstate(divide="ignore"):
            out[lo] = base * np.exp(k0 * np.log(wl / x0))
    inside = (~lo) & (w <= g.x_max)
    if np.any(inside):
        i, tau = _locate(g, w[inside])
        part = g.nodes[i] ** (chi + 1) * p.values[i] * _seg(chi + 1 + s[i], tau)
        out[inside] = base + fwd[i] + part
    hi = w > g.x_max
    if np.any(hi):
        L = np.log(w[hi] / g.x_max)
        seg = sum(c * _seg(chi + 1 - e, L) for c, e in p.tail_terms)
        out[hi] = base + fwd[-1] + g.x_max ** (chi + 1) * p.values[-1] * seg
    return out


def _tail(p: Profile, chi: float, w):
    """int_w^inf y^chi f(y) dy (requires chi + 1 - pinf < 0)."""
    kt = chi + 1 - p.tail_exponent
    if kt >= 0:
        raise DomainError(
            f"moment of order {chi} diverges at infinity: need chi < tail_exponent - 1 = "
            f"{p.tail_exponent - 1}")
    g = p.grid
    lf, s = p._cells()
    cell, rev, fwd = p._moment_tables(chi)
    w = np.asarray(w, dtype=float)
    xn = g.x_max
    terms = p.tail_terms
    top = xn ** (chi + 1) * p.values[-1] * sum(c / (e - chi - 1) for c, e in terms)
    out = np.empty(w.shape)
    hi = w >= xn
    if np.any(hi):
        la = np.log(w[hi] / xn)
        out[hi] = xn ** (chi + 1) * p.values[-1] * sum(
            c * np.exp((chi + 1 - e) * la) / (e - chi - 1) for c, e in terms)
    inside = (~hi) & (w >= g.x_min)
    if np.any(inside):
        i, tau = _locate(g, w[inside])
        # integral from w to x_{i+1} = cell_i - (x_i -> w)
        part = g.nodes[i] ** (chi + 1) * p.values[i] * _seg(chi + 1 + s[i], tau)
        full = cell[i] - part
        out[inside] = top + rev[i + 1] + np.maximum(full, 0.0)
    lo = w < g.x_min
    if np.any(lo):
        k0 = chi + 1 - p.zero_exponent
        L = np.log(g.x_min / w[lo])
        # int_w^{x0} = x0^{chi+1} f0 int_{-L}^0 e^{k0 t} dt
        seg = g.x_min ** (chi + 1) * p.values[0] * _seg(-k0, L)
        out[lo] = top + rev[0] + seg
    return out


def weighted_moment(p: Profile, chi: float, lower: float, upper: float):
    """int_lower^upper y^chi f(y) dy, exact for the piecewise power-law profile."""
    if not lower < upper:
        raise DomainError(f"need lower < upper, got ({lower}, {upper})")
    if lower < 0:
        raise DomainError("lower limit must be nonnegative")
    if math.isinf(upper):
        return float(_tail(p, chi, np.array([max(lower, 0.0)]))[0]) if lower > 0 else \
            _total_moment(p, chi)
    if lower == 0:
        return float(_head(p, chi, np.array([upper]))[0])
    if chi + 1 - p.zero_exponent > 0:
        h = _head(p, chi, np.array([lower, upper]))
        return float(h[1] - h[0])
    if chi + 1 - p.tail_exponent < 0:
        t = _tail(p, chi, np.array([lower, upper]))
        return float(t[0] - t[1])
    # neither end converges: integrate cell by cell between the limits
    return _bounded_moment(p, chi, lower, upper)


def _total_moment(p: Profile, chi: float) -> float:
    h = _head(p, chi, np.array([p.grid.x_min]))[0]
    t = _tail(p, chi, np.array([p.grid.x_min]))[0]
    return float(h + t)


def _bounded_moment(p: Profile, chi, lower, upper) -> float:
    g = p.grid
    pts = np.concatenate(([lower], g.nodes[(g.nodes > lower) & (g.nodes < upper)], [upper]))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        fa = interp_eval(p, a)
        if fa == 0:
            continue
        if a >= g.x_max:
            L0, L1 = math.log(a / g.x_max), math.log(b / g.x_max)
            total += g.x_max ** (chi + 1) * p.values[-1] * sum(
                c * math.exp((chi + 1 - e) * L0) * float(_seg(chi + 1 - e, L1 - L0))
                for c, e in p.tail_terms)
            continue
        if b <= g.x_min:
            k = chi + 1 - p.zero_exponent
        else:
            i, _ = _locate(g, np.array([a]))
            k = chi + 1 + p._cells()[1][i[0]]
        total += a ** (chi + 1) * fa * float(_seg(k, math.log(b / a)))
    return total


def partial_mass(p: Profile, R):
    """M(R) = int_0^R y f(y) dy (vectorised over R)."""
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise DomainError("partial mass needs R > 0")
    out = _head(p, 1.0, np.atleast_1d(R))
    return out.reshape(R.shape) if R.ndim else float(out[0])


def tail_moment(p: Profile, chi: float, w):
    """T_chi(w) = int_w^inf y^chi f(y) dy (vectorised over w > 0)."""
    w = np.asarray(w, dtype=float)
    return _tail(p, chi, w.ravel()).reshape(w.shape)


# ----------------------------------------------------- incomplete integrals

def incomplete_power_integral(y, z, rho):
    """int_y^{y+z} x^{rho-2} dx, stable when z << y."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    k = rho - 1.0
    out = y ** k * _seg(k, np.log1p(z / y))
    return out if out.ndim else float(out)


# ------------------------------------------------------------- u-quadrature

@dataclass(frozen=True)
class QuadConfig:
    """Rule for the relative variable u = y / x of the gain operator.

    Panel breakpoints follow the grid ratio r on (u_fine, 1 - u_fine):
    both r^{-k} and 1 - r^{-k} are included so that every kink of the
    piecewise profile lands on a panel edge when x is a grid node.  Beyond
    that, geometric panels (``coarse_per_decade``) reach u_tiny at both
    ends to capture the integrable endpoint singularities.
    """

    order: int = 4
    coarse_order: int = 6
    fine_decades: float = 1.0
    coarse_per_decade: int = 2
    tiny: float = 1e-40


@dataclass(frozen=True, eq=False)
class URule:
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)       # 1 - u, accurate near u = 1
    w: np.ndarray = field(repr=False)


def make_u_rule(h: float, cfg: QuadConfig = QuadConfig()) -> URule:
    u_fine = 10.0 ** (-cfg.fine_decades)
    kmax = int(math.floor(cfg.fine_decades * math.log(10) / h))
    k = np.arange(1, kmax + 1)
    lower_pts = []   # breakpoints stored as (u, v) pairs
    for kk in k:
        a = math.exp(-kk * h)
        b = -math.expm1(-kk * h)
        lower_pts.append((a, b))
        lower_pts.append((b, a))
    ncoarse = int(math.ceil(cfg.coarse_per_decade * math.log10(u_fine / cfg.tiny)))
    coarse = u_fine * np.geomspace(1.0, cfg.tiny / u_fine, ncoarse + 1)[1:]
    for c in coarse:
        lower_pts.append((c, 1.0 - c))
        lower_pts.append((1.0 - c, c))
    lower_pts.append((u_fine, 1 - u_fine))
    lower_pts.append((1 - u_fine, u_fine))
    lower_pts.append((0.5, 0.5))
    lower_pts.append((0.0, 1.0))
    lower_pts.append((1.0, 0.0))
    pts = sorted(set(lower_pts))
    # keep the representation (u or v) with full relative precision
    us, vs, ws = [], [], []
    xg, wg = leggauss(cfg.order)
    xc, wc = leggauss(cfg.coarse_order)
    for (ua, va), (ub, vb) in zip(pts[:-1], pts[1:]):
        if ub - ua <= 0:
            continue
        coarse_panel = ub <= u_fine or ua >= 1 - u_fine
        xs, wts = (xc, wc) if coarse_panel else (xg, wg)
        t = 0.5 * (xs + 1.0)
        width = ub - ua
        if ub <= 0.5:
            uu = ua + width * t
            vv = 1.0 - uu
        else:
            vv = va - (va - vb) * t
            uu = 1.0 - vv
            width = va - vb
        us.append(uu)
        vs.append(vv)
        ws.append(0.5 * width * wts)
    return URule(np.concatenate(us), np.concatenate(vs), np.concatenate(ws))


# ----------------------------------------------------------- gain operator

def inner_integral(kernel: KernelSpec, p: Profile, y, w):
    """F(y, w) = int_w^inf K(y, z) f(z) dz."""
    if kernel.separable:
        out = 0.0
        for c, a, b in kernel.terms:
            out = out + c * y**a * tail_moment(p, b, w)
        return out
    return _inner_generic(kernel, p, np.asarray(y, float), np.asarray(w, float))


_GEN_X, _GEN_W = leggauss(8)


def _inner_generic(kernel, p, y, w, decades=40, per_decade=2):
    """Numerical inner integral for non-separable kernels: z = w * 10^s."""
    y, w = np.broadcast_arrays(y, w)
    edges = np.linspace(0.0, decades, decades * per_decade + 1)
    out = np.zeros(y.shape)
    for a, b in zip(edges[:-1], edges[1:]):
        s = a + (b - a) * 0.5 * (_GEN_X + 1.0)
        z = w[..., None] * 10.0 ** s
        val = evaluate(kernel, y[..., None], z) * interp_eval(p, z) * z * math.log(10)
        out += 0.5 * (b - a) * np.sum(val * _GEN_W, axis=-1)
    return out


def _rule_for(p: Profile, quad: QuadConfig) -> URule:
    cache = p.grid.__dict__.setdefault("_urule_cache", {})
    if quad not in cache:
        cache[quad] = make_u_rule(p.grid.h, quad)
    return cache[quad]


def map_chunks(func, n: int, chunk: int = 64, workers: int = 1):
    """Apply ``func(slice)`` over consecutive chunks of range(n).

    Results come back in chunk order, so reductions done by the caller are
    independent of the worker count.
    """
    slices = [slice(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if workers <= 1 or len(slices) == 1:
        return [func(sl) for sl in slices]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, slices))


def gain_weights(kernel: KernelSpec, p: Profile, x, quad: QuadConfig = QuadConfig(),
                 workers: int = 1, chunk: int = 64):
    """Matrix W with I[f](x_i) = x_i^2 sum_k W[i, k] f(x_i u_k).

    W[i, k] = w_k u_k F(x_i u_k, x_i v_k); the solver reuses it because it
    is linear in the profile once F has been frozen.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    rule = _rule_for(p, quad)

    def block(sl):
        xs = xa[sl, None]
        return rule.w * rule.u * inner_integral(kernel, p, xs * rule.u, xs * rule.v)

    return rule, np.vstack(map_chunks(block, len(xa), chunk, workers))


def gain_operator(kernel: KernelSpec, p: Profile, x, quad: QuadConfig = QuadConfig(),
                  chunk: int = 64, workers: int = 1, other: Optional[Profile] = None):
    """I[f](x) = int_0^x int_{x-y}^inf y K(y,z) f(y) f(z) dz dy.

    With ``other`` = g the bilinear form I[f, g] (g in the z slot) is returned.
    """
    g = p if other is None else other
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= 0):
        raise DomainError("gain operator needs x > 0")
    if g.tail_exponent <= 1 + kernel.beta:
        raise DomainError(
            f"tail exponent {g.tail_exponent} <= 1 + beta = {1 + kernel.beta}: "
            "inner z-integral diverges")
    if p.trivial or g.trivial:
        out = np.zeros(xa.shape)
        return out if np.ndim(x) else 0.0
    rule = _rule_for(p, quad)

    def block(sl):
        xs = xa[sl, None]
        Y = xs * rule.u
        W = xs * rule.v
        integrand = Y * interp_eval(p, Y) * inner_integral(kernel, g, Y, W)
        return xs[:, 0] * (integrand @ rule.w)

    out = np.concatenate(map_chunks(block, len(xa), chunk, workers))
    if not np.all(np.isfinite(out)):
        raise NumericalError("gain operator produced non-finite values")
    return out if np.ndim(x) else float(out[0])


# ---------------------------------------------------------------- residual

def trust_window(grid: Grid, fraction: float = 0.6) -> np.ndarray:
    """Boolean mask of the central ``fraction`` of nodes in log scale."""
    lx = np.log(grid.nodes)
    lo, hi = lx[0], lx[-1]
    margin = 0.5 * (1 - fraction) * (hi - lo)
    return (lx >= lo + margin - 1e-12) & (lx <= hi - margin + 1e-12)


def residual(kernel: KernelSpec, rho: float, p: Profile, quad: QuadConfig = QuadConfig(),
             window: Optional[np.ndarray] = None, fraction: float = 0.6, workers: int = 1):
    """Relative residual of x^2 f = (1-rho) M(x) + I[f](x) at every node.

    Returns (sup over the trust window, per-node vector).  A trivial
    profile returns zeros; callers should reject it via ``Profile.trivial``.
    """
    x = p.x
    if p.trivial:
        return 0.0, np.zeros(p.grid.n)
    lhs = x**2 * p.values
    rhs = (1 - rho) * partial_mass(p, x) + gain_operator(kernel, p, x, quad, workers=workers)
    r = np.abs(lhs - rhs) / (lhs + EPS_FLOOR)
    if window is None:
        window = trust_window(p.grid, fraction)
    return float(np.max(r[window])), r


def rescale(p: Profile, a: float, lam: float) -> Profile:
    """f~(x) = a^{1+lam} f(a x), retabulated on the same grid.

    The upper closure weights are carried over exactly when a >= 1 (the
    rescaled closure region lies inside the old one).
    """
    vals = a ** (1 + lam) * interp_eval(p, a * p.x)
    w, sigma = p.tail_correction
    if w != 0 and a >= 1:
        shift = (1 - w) * a ** (-p.tail_exponent), w * a ** (-p.tail_exponent - sigma)
        w = shift[1] / (shift[0] + shift[1])
    return p.with_values(vals, tail_correction=(w, sigma))


# ---------------------------------------------------------------------- io

def write_profile(p: Profile, path, meta: Optional[dict] = None) -> tuple[Path, Path]:
    """CSV ``x,f`` in full precision plus a JSON sidecar with the closures."""
    path = Path(path)
    lines = ["x,f"] + [f"{a:.17e},{b:.17e}" for a, b in zip(p.x.tolist(), p.values.tolist())]
    path.write_text("\n".join(lines) + "\n")
    side = {"zero_exponent": p.zero_exponent, "tail_exponent": p.tail_exponent,
            "tail_correction": list(p.tail_correction)}
    side.update(meta or {})
    sidecar = path.with_suffix(".json")
    sidecar.write_text(jsonio.dumps(side))
    return path, sidecar


def read_profile(path) -> tuple[Profile, dict]:
    path = Path(path)
    rows = path.read_text().strip().splitlines()
    if rows[0].strip() != "x,f":
        raise ConfigError(f"{path}: expected header 'x,f'")
    data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]])
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(data[:, 0].copy())
    corr = tuple(meta.get("tail_correction", (0.0, 0.0)))
    return Profile(grid, data[:, 1].copy(), meta["zero_exponent"], meta["tail_exponent"],
                   corr), meta
