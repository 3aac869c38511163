"""Command line front-end: ``fattail {solve,verify,laplace,evolve,selftest}``.

Configuration is an INI file (sections ``kernel``, ``problem``, ``grid``,
``solver``, ``verify``, ``laplace``, ``dynamics``).  The parsed config is
echoed into every report.  Exit codes: 0 success, 1 check failed,
2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import jsonio
from .errors import ConfigError, DomainError, NumericalError
from .kernel import KernelSpec, make_kernel
from .profile import QuadConfig, make_log_grid, read_profile, write_profile
from .solver import GridConfig, ProfileProblem, SolverConfig, solve

log = logging.getLogger("fattail")

WORKERS_ENV = "FATTAIL_WORKERS"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_KERNEL_KEYS = {"value", "alpha", "beta", "scale", "b", "B", "c_star", "C_star"}


class LocatedConfigError(ConfigError):
    pass


@dataclass
class RunConfig:
    source: str
    sections: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)     # (section, key) -> line number

    def get(self, section: str, key: str, default=None, kind=float):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            if kind is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            if kind is list:
                return [float(v) for v in raw.replace(",", " ").split()]
            return kind(raw)
        except ValueError:
            raise self.error(section, key, f"cannot parse {raw!r} as {kind.__name__}")

    def error(self, section, key, msg) -> LocatedConfigError:
        line = self.lines.get((section, key))
        where = f"{self.source}:{line}" if line else self.source
        return LocatedConfigError(f"{where}: [{section}] {key}: {msg}")

    def echo(self) -> dict:
        return {s: dict(v) for s, v in sorted(self.sections.items())}


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig("<defaults>")
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and "=" in s and not s.startswith(("#", ";")):
            lines[(section, s.split("=", 1)[0].strip())] = n
    return RunConfig(str(path), {s: dict(cp[s]) for s in cp.sections()}, lines)


def config_from_dict(d: dict, source: str = "<sidecar>") -> RunConfig:
    return RunConfig(source, {s: {k: str(v) for k, v in kv.items()} for s, kv in d.items()})


# --------------------------------------------------------------- builders

def build_kernel(cfg: RunConfig) -> KernelSpec:
    fam = cfg.get("kernel", "family", "constant", str)
    params = {}
    for k in cfg.sections.get("kernel", {}):
        if k == "family":
            continue
        if k not in _KERNEL_KEYS:
            raise cfg.error("kernel", k, "unknown kernel parameter")
        params[k] = cfg.get("kernel", k)
    try:
        return make_kernel(fam, **params)
    except ConfigError as exc:
        raise cfg.error("kernel", "family", str(exc)) from None


def build_problem(cfg: RunConfig, workers: int = 1) -> ProfileProblem:
    kernel = build_kernel(cfg)
    if cfg.get("problem", "rho") is None:
        raise cfg.error("problem", "rho", "missing (required)")
    grid = GridConfig(cfg.get("grid", "x_min", 1e-5), cfg.get("grid", "x_max", 1e5),
                      cfg.get("grid", "per_decade", 60, int))
    d = SolverConfig()
    R_ref = cfg.get("solver", "R_ref", None, str)
    solver = SolverConfig(
        damping=cfg.get("solver", "damping", d.damping),
        damping_floor=cfg.get("solver", "damping_floor", d.damping_floor),
        max_iter=cfg.get("solver", "max_iter", d.max_iter, int),
        tol=cfg.get("solver", "tol", d.tol),
        trust_fraction=cfg.get("solver", "trust_fraction", d.trust_fraction),
        R_ref=None if R_ref in (None, "inf") else float(R_ref),
        tail_fit_decades=cfg.get("solver", "tail_fit_decades", d.tail_fit_decades),
        max_tail_correction=cfg.get("solver", "max_tail_correction", d.max_tail_correction),
        closure_switch=cfg.get("solver", "closure_switch", d.closure_switch),
        continuation_decades=cfg.get("solver", "continuation_decades",
                                     d.continuation_decades),
        workers=workers)
    try:
        return ProfileProblem(kernel, cfg.get("problem", "rho"),
                              cfg.get("problem", "gamma", None), grid, QuadConfig(), solver)
    except ConfigError as exc:
        raise cfg.error("problem", "rho", str(exc)) from None


def _workers(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return 1


def dump_json(obj, path: Path) -> Path:
    path.write_text(jsonio.dumps(obj))
    return path


# --------------------------------------------------------------- commands

def cmd_solve(cfg: RunConfig, out: Path, workers: int) -> int:
    prob = build_problem(cfg, workers)
    p, rep = solve(prob)
    meta = {"config": cfg.echo(), "solve": rep.to_dict()}
    write_profile(p, out / "profile.csv", meta)
    dump_json(meta, out / "solve_report.json")
    print(f"solve: converged={rep.converged} iterations={rep.iterations} "
          f"residual={rep.residual_history[-1]:.17e}")
    return EXIT_OK if rep.converged else EXIT_FAIL


def _profile_and_config(cfg: Optional[RunConfig], path: str):
    p, meta = read_profile(path)
    if cfg is None or not cfg.sections:
        if "config" not in meta:
            raise ConfigError(f"{path}: no --config given and sidecar has no config echo")
        cfg = config_from_dict(meta["config"], str(Path(path).with_suffix(".json")))
    return p, cfg


def cmd_verify(cfg: RunConfig, out: Path, workers: int, profile: str) -> int:
    from .verify import VerifyConfig, assemble_report, write_asymptotics_csv, write_report
    p, cfg = _profile_and_config(cfg, profile)
    prob = build_problem(cfg, workers)
    d = VerifyConfig()
    vcfg = VerifyConfig(
        trust_fraction=cfg.get("verify", "trust_fraction", d.trust_fraction),
        tail_decades=cfg.get("verify", "tail_decades", d.tail_decades),
        exponent_tol=cfg.get("verify", "exponent_tol", d.exponent_tol),
        amplitude_tol=cfg.get("verify", "amplitude_tol", d.amplitude_tol),
        delta_tol=cfg.get("verify", "delta_tol", d.delta_tol))
    rep = assemble_report(prob, p, vcfg, laplace=cfg.get("verify", "laplace", True, bool),
                          workers=workers, config_echo=cfg.echo())
    write_report(rep, out / "verify_report.json")
    if cfg.get("verify", "csv", False, bool):
        write_asymptotics_csv(prob, p, out / "asymptotics.csv", workers)
    print(f"verify: overall={rep.overall} exponent={rep.tail_fit.exponent:.17e} "
          f"amplitude_error={rep.amplitude_error:.17e}")
    return EXIT_OK if rep.overall else EXIT_FAIL


def cmd_laplace(cfg: RunConfig, out: Path, workers: int, profile: str) -> int:
    from .laplace import default_q, laplace_probe, write_csv
    p, cfg = _profile_and_config(cfg, profile)
    prob = build_problem(cfg, workers)
    q = default_q(p, cfg.get("laplace", "per_decade", 4, int))
    if cfg.get("laplace", "q_min") is not None or cfg.get("laplace", "q_max") is not None:
        q = np.geomspace(cfg.get("laplace", "q_min", q[0]), cfg.get("laplace", "q_max", q[-1]),
                         cfg.get("laplace", "n_q", 17, int))
    probe = laplace_probe(prob, p, q, workers)
    write_csv(probe, out / "laplace.csv")
    res = float(np.max(probe.residual))
    thr = cfg.get("laplace", "threshold", 1e-3)
    dump_json({"residual": res, "threshold": thr, "pass": res <= thr,
               "config": cfg.echo()}, out / "laplace_report.json")
    print(f"laplace: residual={res:.17e} threshold={thr:.17e}")
    return EXIT_OK if res <= thr else EXIT_FAIL


def cmd_evolve(cfg: RunConfig, out: Path, workers: int, profile: Optional[str]) -> int:
    from . import dynamics as dyn
    kernel = build_kernel(cfg)
    mode = cfg.get("dynamics", "mode", "oracle", str)
    nodes = cfg.get("dynamics", "nodes", 200, int)
    dt = dyn.DtConfig(safety=cfg.get("dynamics", "safety", 0.5))
    times = cfg.get("dynamics", "snapshots", [1.0], list)
    if mode == "oracle":
        grid = make_log_grid(cfg.get("dynamics", "x_min", 1e-3),
                             cfg.get("dynamics", "x_max", 60.0), nodes)
        phi0 = dyn.MassDistribution.from_cdf(grid, lambda e: -np.expm1(-e))
        traj = dyn.evolve(kernel, phi0, max(times), dt, times, workers)
        errs = [dyn.l1_error(s, dyn.exponential_solution(grid, s.t)) for s in traj.snapshots]
        report = {"mode": mode, "times": [s.t for s in traj.snapshots], "l1_error": errs,
                  "mass_defect": traj.mass_defect(), "out_mass": traj.out_mass,
                  "steps": traj.steps}
    elif mode == "scaling":
        if profile is None:
            raise ConfigError("evolve in scaling mode needs --profile")
        p, _ = read_profile(profile)
        rho = cfg.get("problem", "rho")
        grid = make_log_grid(cfg.get("dynamics", "x_min", 1e-2),
                             cfg.get("dynamics", "x_max", 1e12), nodes)
        window = tuple(cfg.get("dynamics", "window", [0.1, 10.0], list))
        report = dyn.scaling_test(kernel, p, rho, grid, times, window, dt, workers)
        report["mode"] = mode
        traj = None
    else:
        raise cfg.error("dynamics", "mode", f"unknown mode {mode!r} (oracle|scaling)")
    report["config"] = cfg.echo()
    if traj is not None:
        for k, s in enumerate(traj.snapshots):
            rows = ["x,phi"] + [f"{a:.17e},{b:.17e}" for a, b in zip(s.grid.nodes, s.values)]
            (out / f"snapshot_{k:03d}.csv").write_text("\n".join(rows) + "\n")
    dump_json(_plain(report), out / "evolve_report.json")
    print(f"evolve: mode={mode} report={out / 'evolve_report.json'}")
    return EXIT_OK


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_selftest() -> int:
    from .selftest import run_all
    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fattail", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["solve", "verify", "laplace", "evolve", "selftest"])
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--workers", type=int, default=None,
                    help=f"worker threads (default ${WORKERS_ENV} or 1)")
    ap.add_argument("--profile", help="profile CSV (verify, laplace, evolve scaling)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return cmd_selftest()
        workers = _workers(args.workers)
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out, workers)
        if args.command in ("verify", "laplace"):
            if not args.profile:
                raise ConfigError(f"{args.command} needs --profile")
            fn = cmd_verify if args.command == "verify" else cmd_laplace
            return fn(cfg, out, workers, args.profile)
        return cmd_evolve(cfg, out, workers, args.profile)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DomainError, FloatingPointError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
