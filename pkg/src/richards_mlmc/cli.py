"""Command-line entry point.

Every run writes its artifacts into ``--out`` under names that embed the
subcommand and a hash of the effective configuration, together with a
manifest recording the configuration, seed, library versions and wall
time.  Telemetry JSON never contains wall-clock measurements, so reruns
with the same configuration and seed reproduce it byte for byte.
"""

from __future__ import annotations

import argparse
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bench, uq
from .config import ENV_PREFIX, SCHEMA, CampaignConfig, ConfigError, env_overrides, parse_config
from .io import write_field_csv, write_json
from .randfield import EmbeddingError, cached_sampler, draw_noise, soil_from_noise
from .solver import SolverError, infiltration_initial, solve_richards

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_EMBEDDING = 4

STREAM_SINGLE = 4
SUBCOMMANDS = ("solve", "fields", "costmap", "converge", "mc", "mlmc", "pcmlmc", "compare")


class Run:
    """Artifact bookkeeping for one subcommand invocation."""

    def __init__(self, name: str, cfg: CampaignConfig, out: Path):
        self.name = name
        self.cfg = cfg
        self.out = out
        self.tag = f"{name}-{cfg.digest()}"
        self.artifacts = []
        self.timing = {}

    def path(self, suffix: str) -> Path:
        p = self.out / f"{self.tag}{suffix}"
        self.artifacts.append(p.name)
        return p

    def header(self) -> dict:
        return {"subcommand": self.name, "config_hash": self.cfg.digest(),
                "seed": self.cfg["run"]["seed"], "config": self.cfg.canonical()}


def _single_soil(cfg: CampaignConfig):
    M = cfg["problem"]["cells"]
    sampler = cached_sampler(M, cfg.matern(), cfg["field"]["padding"])
    noise = draw_noise(cfg["run"]["seed"], (STREAM_SINGLE,), sampler.padded_shape)
    return sampler, soil_from_noise(sampler, noise, cfg.soil())


def cmd_solve(run: Run) -> int:
    cfg = run.cfg
    _, soil = _single_soil(cfg)
    grid = soil.grid
    dt = cfg["problem"]["dt_scale"] * grid.h
    p, stats = solve_richards(infiltration_initial(grid), soil, dt, cfg["problem"]["t_final"],
                              cfg.boundary(), cfg.solver_options())
    write_field_csv(run.path("-pressure.csv"), p.values)
    write_json(run.path("-stats.json"),
               {**run.header(), "M": grid.M, "dt": dt, "t": p.t, **stats.to_dict()})
    return EXIT_SOLVER if stats.failed else EXIT_OK


def cmd_fields(run: Run) -> int:
    sampler, soil = _single_soil(run.cfg)
    summary = {}
    for name, values in soil.fields().items():
        write_field_csv(run.path(f"-{name}.csv"), values)
        summary[name] = {"min": values.min(), "max": values.max(), "mean": values.mean()}
    write_json(run.path("-fields.json"),
               {**run.header(), "M": soil.grid.M, "clamped_cells": soil.clamped,
                "clipped_spectral_mass": sampler.clipped_mass, "fields": summary})
    return EXIT_OK


def cmd_costmap(run: Run) -> int:
    cfg = run.cfg
    c = cfg["costmap"]
    cells = bench.cost_map(c["alphas"], c["ns"], c["reps"], c["cells"], c["dt"],
                           cfg.matern(), cfg["run"]["seed"], c["t_final"],
                           cfg.solver_options(), cfg.threads, cfg["field"]["padding"])
    bench.write_cost_map_csv(run.path(".csv"), cells)
    write_json(run.path(".json"), {**run.header(), "cells": [vars(x) for x in cells]})
    return EXIT_OK


def cmd_converge(run: Run) -> int:
    cfg = run.cfg
    c = cfg["converge"]
    res = bench.convergence_study(c["coarsest"], c["levels"], cfg["soil"]["alpha"],
                                  cfg["soil"]["n"], c["samples"], cfg["run"]["seed"],
                                  cfg.setup(), cfg.threads, cfg["problem"]["dt_scale"])
    bench.write_convergence_csv(run.path(".csv"), res)
    write_json(run.path(".json"),
               {**run.header(), "h": res.h, "diff_norms": res.diff_norms,
                "rate": res.rate, "samples": res.samples, "failures": res.failures})
    return EXIT_OK


def _estimate(cfg: CampaignConfig, specs):
    m = cfg["mlmc"]
    return uq.pc_mlmc(specs, m["eps"], cfg["run"]["seed"], cfg.setup(), threads=cfg.threads,
                      cost_model=m["cost_model"], max_rounds=m["max_rounds"],
                      max_attempts=m["max_attempts"])


def _write_estimate(run: Run, res: uq.MlmcResult, prefix: str = "") -> dict:
    write_field_csv(run.path(f"{prefix}-mean.csv"), res.mean)
    write_field_csv(run.path(f"{prefix}-variance.csv"), res.variance)
    return res.to_dict()


def _cmd_estimator(run: Run, specs) -> int:
    res = _estimate(run.cfg, specs)
    tele = _write_estimate(run, res)
    write_json(run.path(".json"), {**run.header(), "matern": run.cfg.matern().as_tuple(),
                                   **tele})
    run.timing = {"total_wall": res.total_wall}
    return EXIT_OK


def cmd_mc(run: Run) -> int:
    return _cmd_estimator(run, [run.cfg.mc_level()])


def cmd_mlmc(run: Run) -> int:
    return _cmd_estimator(run, run.cfg.std_levels())


def cmd_pcmlmc(run: Run) -> int:
    return _cmd_estimator(run, run.cfg.pc_levels())


def cmd_compare(run: Run) -> int:
    cfg = run.cfg
    t0 = time.perf_counter()
    pc = _estimate(cfg, cfg.pc_levels())
    t1 = time.perf_counter()
    std = _estimate(cfg, cfg.std_levels())
    t2 = time.perf_counter()
    cmp = bench.EstimatorComparison(pc, std, t1 - t0, t2 - t1)
    _write_estimate(run, pc, "-pc")
    _write_estimate(run, std, "-std")
    write_json(run.path(".json"), {**run.header(), **cmp.to_dict()})
    run.timing = {"pc_wall": cmp.pc_wall, "std_wall": cmp.std_wall, "speedup": cmp.speedup}
    return EXIT_OK


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _versions() -> dict:
    import numba
    import scipy
    return {"richards_mlmc": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="richards-mlmc",
        description="Random soil fields, Richards solves and multilevel estimators.",
        epilog=f"Flags may also be set through {ENV_PREFIX}CONFIG, {ENV_PREFIX}SEED, "
               f"{ENV_PREFIX}OUT and {ENV_PREFIX}THREADS; flags win over the "
               "environment, which wins over the config file.")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="INI campaign file (defaults apply when omitted)")
    ap.add_argument("--seed", type=int, help="campaign seed (non-negative integer)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one config entry; may be repeated")
    return ap


def load(args, environ=None) -> CampaignConfig:
    command = getattr(args, "command", None)
    env = env_overrides(environ)
    path = args.config or env.get("config")
    cfg = parse_config(path, command) if path else CampaignConfig()
    for item in args.set:
        try:
            lhs, value = item.split("=", 1)
            section, key = lhs.strip().lower().split(".", 1)
            SCHEMA[section][key]
        except (ValueError, KeyError):
            raise ConfigError(f"bad override {item!r}; expected SECTION.KEY=VALUE") from None
        try:
            cfg.override(section, key, value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
    for flag in ("seed", "out", "threads"):
        value = getattr(args, flag)
        if value is None:
            value = env.get(flag)
        if value is not None:
            try:
                cfg.override("run", flag, str(value))
            except ValueError as exc:
                raise ConfigError(f"{flag}: {exc}") from None
    try:
        return cfg.validate(command)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None, environ=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args, environ)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    run = Run(args.command, cfg, out)
    start = time.perf_counter()
    error = None
    try:
        status = COMMANDS[args.command](run)
    except EmbeddingError as exc:
        status, error = EXIT_EMBEDDING, str(exc)
    except (SolverError, uq.MlmcError) as exc:
        status, error = EXIT_SOLVER, str(exc)
    wall = time.perf_counter() - start
    manifest = {**run.header(), "config": cfg.canonical(exclude=()), "threads": cfg.threads, "out": str(out),
                "versions": _versions(), "wall_time": wall, "exit_status": status,
                "error": error, "artifacts": list(run.artifacts), **run.timing}
    write_json(out / f"{run.tag}-manifest.json", manifest)
    if error:
        print(f"{args.command} failed: {error}", file=sys.stderr)
    for name in run.artifacts:
        print(out / name)
    return status


if __name__ == "__main__":
    sys.exit(main())
