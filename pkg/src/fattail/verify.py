"""Asymptotics extraction and the consolidated verification report.

Upper-bound statements (pointwise decay, decay of the gain term) are fitted
to running maxima rather than by plain least squares, since only one-sided
bounds are claimed.  Tolerances live in ``VerifyConfig``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import jsonio
from .errors import DomainError
from .kernel import KernelSpec
from .laplace import check_Q_identity
from .moments import run_suite
from .profile import (Profile, QuadConfig, gain_operator, interp_eval, partial_mass,
                      trust_window)


@dataclass(frozen=True)
class VerifyConfig:
    trust_fraction: float = 0.6
    tail_decades: float = 1.0       # width of the tail window at the top of the trust window
    exponent_tol: float = 0.02
    amplitude_tol: float = 0.02
    fit_residual_tol: float = 1e-2
    delta_tol: float = 0.25
    stabilize_tol: float = 0.10
    min_stable_probes: int = 3
    laplace_threshold: float = 1e-3


@dataclass
class TailFit:
    exponent: float
    amplitude: float
    window: tuple
    residual: float
    valid: bool = True
    note: str = ""


@dataclass
class DecayCheck:
    C: float
    r_star: Optional[float]
    constants: list
    probes: list
    passed: bool


@dataclass
class GainDecay:
    delta: float
    predicted: float
    regime: str
    residual: float
    window: tuple
    passed: bool
    source: str = "gain"


@dataclass
class VerifyReport:
    tail_fit: TailFit
    amplitude_error: float
    zero_fit: float
    delta_estimate: GainDecay
    pointwise: DecayCheck
    linear_term: tuple
    gain_term: tuple
    inequality_suite: list
    laplace_residual: Optional[float]
    overall: bool
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "tail_fit": asdict(self.tail_fit),
            "amplitude_error": self.amplitude_error,
            "zero_fit": self.zero_fit,
            "delta_estimate": asdict(self.delta_estimate),
            "r_star": self.pointwise.r_star,
            "pointwise_decay": asdict(self.pointwise),
            "linear_term": list(self.linear_term),
            "gain_term": list(self.gain_term),
            "inequality_suite": [c.to_dict() for c in self.inequality_suite],
            "laplace_residual": self.laplace_residual,
            "overall": self.overall,
            "config": self.config,
        }
        return _clean(d)


def _clean(obj):
    """JSON-safe copy: numpy scalars to floats, tuples to lists, nan to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ------------------------------------------------------------------ windows

def tail_window(p: Profile, cfg: VerifyConfig = VerifyConfig()) -> tuple:
    """Top ``tail_decades`` of the trust window."""
    x = p.x[trust_window(p.grid, cfg.trust_fraction)]
    hi = float(x[-1])
    return hi / 10 ** cfg.tail_decades, hi


def _window_nodes(p: Profile, window):
    lo, hi = window
    m = (p.x >= lo * (1 - 1e-12)) & (p.x <= hi * (1 + 1e-12))
    return p.x[m], p.values[m]


def _linfit(lx, ly):
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res**2)))


# --------------------------------------------------------------------- fits

def fit_tail(p: Profile, window=None, rho: Optional[float] = None) -> TailFit:
    """Log-log least squares over the grid nodes in ``window``.

    The amplitude is x^{1+rho} f at the window midpoint when rho is given,
    else the prefactor of the fitted power law.  Windows reaching into the
    upper closure are flagged invalid: the closure is a power law by
    construction.
    """
    if window is None:
        window = tail_window(p)
    lo, hi = window
    if hi > p.grid.x_max * (1 + 1e-12) or lo < p.grid.x_min * (1 - 1e-12):
        return TailFit(float("nan"), float("nan"), tuple(window), float("inf"), False,
                       "window leaves the grid; closure would pass trivially")
    x, f = _window_nodes(p, window)
    if x.size < 3 or np.any(f <= 0):
        return TailFit(float("nan"), float("nan"), tuple(window), float("inf"), False,
                       "too few positive nodes in window")
    slope, icpt, res = _linfit(np.log(x), np.log(f))
    mid = math.sqrt(lo * hi)
    amp = mid ** (1 + rho) * interp_eval(p, mid) if rho is not None else math.exp(icpt)
    return TailFit(slope, float(amp), (float(lo), float(hi)), res)


def fit_zero(p: Profile, window=None) -> float:
    """Log-log slope over the lowest decade of the grid (informational unless
    both kernel exponents are positive)."""
    if window is None:
        window = (p.grid.x_min, 10 * p.grid.x_min)
    x, f = _window_nodes(p, window)
    pos = f > 0
    if pos.sum() < 3:
        return float("nan")
    return _linfit(np.log(x[pos]), np.log(f[pos]))[0]


def amplitude_error(p: Profile, rho: float, window) -> float:
    """sup over window nodes of |x^{1+rho} f / (1-rho) - 1|."""
    x, f = _window_nodes(p, window)
    return float(np.max(np.abs(x ** (1 + rho) * f / (1 - rho) - 1)))


# ------------------------------------------------------------ decay checks

def default_decay_probes(p: Profile, R_min: float = 1.0) -> np.ndarray:
    lo = math.ceil(2 * math.log10(max(R_min, p.grid.x_min)))
    hi = math.floor(2 * math.log10(p.grid.x_max / 2))
    return 10.0 ** (np.arange(lo, hi + 1) / 2)


def check_pointwise_decay(prob, p: Profile, probes=None, R_min: float = 1.0,
                          cfg: VerifyConfig = VerifyConfig()) -> DecayCheck:
    """C_R = sup_{x in [R, 2R]} R^{1+rho} f(x); r_star is the first probe after
    which C_R stays within ``stabilize_tol`` of the last value."""
    rho = prob.rho
    R = default_decay_probes(p, R_min) if probes is None else np.asarray(probes, float)
    if R.size == 0:
        raise DomainError("no decay probes inside the grid")
    consts = []
    for r in R:
        xs = np.concatenate(([r, 2 * r], p.x[(p.x > r) & (p.x < 2 * r)]))
        consts.append(float(r ** (1 + rho) * np.max(interp_eval(p, xs))))
    c = np.array(consts)
    stable = np.abs(c / c[-1] - 1) <= cfg.stabilize_tol
    # first index from which every later probe is stable
    k = len(c)
    while k > 0 and stable[k - 1]:
        k -= 1
    r_star = float(R[k]) if k < len(c) else None
    n_stable = len(c) - k
    ok = bool(np.all(np.isfinite(c)) and n_stable >= cfg.min_stable_probes)
    return DecayCheck(float(np.max(c)), r_star, consts, [float(r) for r in R], ok)


def _regime(kernel: KernelSpec, rho: float):
    a, b, lam = kernel.alpha, kernel.beta, kernel.lam
    if b < 0:
        return "negative", -b
    if a > 0:
        return "positive", rho - lam
    return "mixed", rho - b


def envelope_fit(x, y):
    """Fit ln y ~ c - delta ln x to the running maximum taken from the right."""
    env = np.maximum.accumulate(y[::-1])[::-1]
    slope, icpt, res = _linfit(np.log(x), np.log(env))
    return -slope, res


def check_gain_decay(prob, p: Profile, window=None, n_probe: int = 21,
                     linear_control: bool = False, cfg: VerifyConfig = VerifyConfig(),
                     workers: int = 1) -> GainDecay:
    """Fit x^{rho-1} I[f](x) ~ c x^{-delta} over the tail window.

    ``linear_control=True`` fits the linear term x^{rho-1} (1-rho) M(x)
    instead; it tends to a constant, so delta ~ 0 and the check fails.
    """
    rho = prob.rho
    lo, hi = tail_window(p, cfg) if window is None else window
    x = np.geomspace(lo, hi, n_probe)
    if linear_control:
        y = (1 - rho) * partial_mass(p, x)
    else:
        y = gain_operator(prob.kernel, p, x, getattr(prob, "quad", QuadConfig()),
                          workers=workers)
    y = x ** (rho - 1) * y
    regime, pred = _regime(prob.kernel, rho)
    if np.any(y <= 0):
        return GainDecay(float("nan"), pred, regime, float("inf"), (lo, hi), False,
                         "linear" if linear_control else "gain")
    delta, res = envelope_fit(x, y)
    ok = bool(delta > 0 and res <= cfg.fit_residual_tol
              and delta >= (1 - cfg.delta_tol) * pred)
    return GainDecay(delta, pred, regime, res, (float(lo), float(hi)), ok,
                     "linear" if linear_control else "gain")


# ------------------------------------------------------------------ report

def assemble_report(prob, p: Profile, cfg: VerifyConfig = VerifyConfig(),
                    laplace: bool = True, workers: int = 1,
                    config_echo: Optional[dict] = None) -> VerifyReport:
    rho, lam = prob.rho, prob.kernel.lam
    win = tail_window(p, cfg)
    tf = fit_tail(p, win, rho)
    tf_ok = tf.valid and abs(tf.exponent + 1 + rho) <= cfg.exponent_tol \
        and tf.residual <= cfg.fit_residual_tol
    amp = amplitude_error(p, rho, win)
    x, _ = _window_nodes(p, win)
    lin = x ** (rho - 1) * partial_mass(p, x)
    gain = x ** (rho - 1) * gain_operator(prob.kernel, p, x, getattr(prob, "quad", QuadConfig()),
                                          workers=workers)
    suite = run_suite(p, rho, lam, workers=workers)
    lap = check_Q_identity(prob, p, workers=workers) if laplace else None
    overall = bool(tf_ok and amp <= cfg.amplitude_tol and all(c.passed for c in suite))
    return VerifyReport(
        tail_fit=tf, amplitude_error=amp, zero_fit=fit_zero(p),
        delta_estimate=check_gain_decay(prob, p, win, cfg=cfg, workers=workers),
        pointwise=check_pointwise_decay(prob, p, cfg=cfg),
        linear_term=(float(lin[0]), float(lin[-1])),
        gain_term=(float(gain[0]), float(gain[-1])),
        inequality_suite=suite, laplace_residual=lap, overall=overall,
        config=dict(config_echo or {}, **{"verify": asdict(cfg)}))


def write_report(report: VerifyReport, path) -> Path:
    path = Path(path)
    path.write_text(jsonio.dumps(report.to_dict()))
    return path


def write_asymptotics_csv(prob, p: Profile, path, workers: int = 1) -> Path:
    """Columns x, x^{1+rho} f(x), x^{rho-1} I[f](x) for plotting."""
    rho = prob.rho
    x = p.x
    I = gain_operator(prob.kernel, p, x, getattr(prob, "quad", QuadConfig()), workers=workers)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "x^(1+rho)f", "x^(rho-1)I"])
        for a, b, c in zip(x, x ** (1 + rho) * p.values, x ** (rho - 1) * I):
            w.writerow([f"{a:.17e}", f"{b:.17e}", f"{c:.17e}"])
    return Path(path)
