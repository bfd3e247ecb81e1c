"""Command-line front end.

    liquidex validate --config run.json
    liquidex solve    --config run.json [--out DIR] [--seed N] [--threads N]
    liquidex value    --config run.json --boundary boundary.csv
    liquidex simulate --config run.json --boundary boundary.csv
    liquidex sweep    --config run.json --parameter mu1 --values 0.005 0.007 0.01

Exit codes: 0 ok, 1 input error, 2 assumption violation, 3 no convergence,
4 missing or invalid dependency artifact.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .boundary_solver import (BoundarySolution, MonotoneBoundary, SolverConfig,
                              boundary_transforms, solve)
from .execution import default_horizon, simulate_policy
from .model_core import (AssumptionViolationError, InvalidInputError, ModelParams, derive,
                         validate_params)
from .value import ConfigurationError, QuadratureConfig, value_surface

log = logging.getLogger("liquidex")

EXIT_OK, EXIT_INPUT, EXIT_ASSUMPTION, EXIT_NOCONV, EXIT_ARTIFACT = 0, 1, 2, 3, 4

BOUNDARY_COLUMNS = ["x", "b_inv", "b_phi_grid", "b_value", "pi_grid", "a_value", "z_grid", "c_value"]
VALUE_COLUMNS = ["x", "pi", "y", "v", "V", "VA", "gap"]
SIM_COLUMNS = ["seed_stream", "true_drift", "payoff", "depletion_time", "initial_jump"]
SWEEP_PARAMETERS = ("mu1", "r", "sigma")
TOP_LEVEL = {"params", "solver", "quadrature", "value", "simulation", "sweep",
             "average_drift", "output_dir", "seed"}


class ArtifactError(Exception):
    pass


# --------------------------------------------------------------------------
# config

def _grid(spec, name):
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad grid spec for {name}: {exc}") from exc
    if isinstance(spec, (int, float)):
        return np.array([float(spec)])
    if isinstance(spec, list) and spec:
        return np.array([float(v) for v in spec])
    raise InvalidInputError(f"grid {name} must be a number, list or start/stop/num")


class RunConfig:
    """Parsed configuration; ``resolved`` echoes every value actually used."""

    def __init__(self, raw: dict, seed=None, out=None):
        if not isinstance(raw, dict):
            raise InvalidInputError("config must be a JSON object")
        extra = set(raw) - TOP_LEVEL
        if extra:
            raise InvalidInputError(f"unknown config section(s): {sorted(extra)}")
        if "params" not in raw:
            raise InvalidInputError("config needs a 'params' section")
        self.params = ModelParams.from_dict(raw["params"])
        self.seed = int(seed if seed is not None else raw.get("seed", 0))
        solver = dict(raw.get("solver", {}))
        solver["seed"] = self.seed
        try:
            self.solver = SolverConfig.from_dict(solver)
            self.quadrature = QuadratureConfig.from_dict(raw.get("quadrature", {}))
        except (TypeError, ConfigurationError) as exc:
            raise InvalidInputError(str(exc)) from exc
        mode = raw.get("average_drift", "prior_mean")
        if mode not in ("prior_mean", "literal"):
            raise InvalidInputError("average_drift must be 'prior_mean' or 'literal'")
        self.literal = mode == "literal"
        self.value = dict(raw.get("value", {}))
        self.simulation = dict(raw.get("simulation", {}))
        self.sweep = dict(raw.get("sweep", {}))
        self.output_dir = Path(out if out is not None else raw.get("output_dir", "."))
        self.raw = raw

    def resolved(self) -> dict:
        out = {
            "params": self.params.to_dict(),
            "solver": self.solver.to_dict(),
            "quadrature": self.quadrature.to_dict(),
            "average_drift": "literal" if self.literal else "prior_mean",
            "output_dir": str(self.output_dir),
            "seed": self.seed,
        }
        for key in ("value", "simulation", "sweep"):
            if getattr(self, key):
                out[key] = getattr(self, key)
        return out


def load_config(path, seed=None, out=None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise InvalidInputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed JSON in {path}: {exc}") from exc
    return RunConfig(raw, seed, out)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(type(v))


def write_manifest(cfg: RunConfig, command: str, outputs, threads: int, extra=None) -> None:
    man = {
        "command": command,
        "version": __version__,
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "threads": threads,
        "outputs": sorted(str(o) for o in outputs),
    }
    if extra:
        man.update(extra)
    write_json(cfg.output_dir / f"manifest_{command}.json", man)


# --------------------------------------------------------------------------
# csv

def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def read_table(path, columns):
    try:
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            rows = list(rd)
    except FileNotFoundError as exc:
        raise ArtifactError(f"missing artifact: {path}") from exc
    except StopIteration as exc:
        raise ArtifactError(f"empty artifact: {path}") from exc
    if header != list(columns):
        raise ArtifactError(f"{path}: expected columns {columns}, found {header}")
    out = {c: [] for c in columns}
    for row in rows:
        if len(row) != len(columns):
            raise ArtifactError(f"{path}: ragged row {row}")
        for c, v in zip(columns, row):
            try:
                out[c].append(float(v) if v != "" else np.nan)
            except ValueError as exc:
                raise ArtifactError(f"{path}: non-numeric cell {v!r}") from exc
    return {c: np.array(v) for c, v in out.items()}


def boundary_rows(sol: BoundarySolution):
    tr = sol.transforms()
    cols = [sol.b_inv.grid, sol.b_inv.values, tr["b"].grid, tr["b"].values,
            tr["a"].grid, tr["a"].values, sol.c.grid, sol.c.values]
    n = max(len(c) for c in cols)
    for i in range(n):
        yield [c[i] if i < len(c) else None for c in cols]


def write_boundary_csv(path: Path, sol: BoundarySolution) -> None:
    write_table(path, BOUNDARY_COLUMNS, boundary_rows(sol))


def read_boundary_csv(path, p: ModelParams):
    """Return (b_inv, c) boundaries from a boundary table."""
    t = read_table(path, BOUNDARY_COLUMNS)
    d = derive(p)
    try:
        m = ~np.isnan(t["x"])
        b_inv = MonotoneBoundary(t["x"][m], t["b_inv"][m], "b_inv")
        m = ~np.isnan(t["z_grid"])
        c = MonotoneBoundary(t["z_grid"][m], t["c_value"][m], "c",
                             left=d.x0_star, right=d.x1_star)
    except InvalidInputError as exc:
        raise ArtifactError(f"{path}: {exc}") from exc
    return b_inv, c


# --------------------------------------------------------------------------
# commands

def cmd_validate(cfg: RunConfig, threads: int) -> int:
    rep = validate_params(cfg.params)
    print(rep)
    if rep.ok:
        d = derive(cfg.params)
        print(f"gamma={d.gamma:.6g} n0={d.n0:.6g} n1={d.n1:.6g} "
              f"x0*={d.x0_star:.6g} x1*={d.x1_star:.6g}")
    return EXIT_OK if rep.ok else EXIT_ASSUMPTION


def cmd_solve(cfg: RunConfig, threads: int) -> int:
    sol = solve(cfg.params, cfg.solver, threads)
    out = cfg.output_dir
    write_boundary_csv(out / "boundary.csv", sol)
    conv = sol.log.to_dict()
    conv["c_std_error"] = sol.c_std_error
    write_json(out / "convergence.json", conv)
    write_manifest(cfg, "solve", ["boundary.csv", "convergence.json"], threads)
    for w in sol.log.warnings:
        log.warning(w)
    print(f"{'converged' if sol.log.converged else 'NOT converged'} after "
          f"{sol.log.iterations} sweeps; last sup change {sol.log.sup_change[-1]:.3g}")
    return EXIT_OK if sol.log.converged else EXIT_NOCONV


def _boundary_arg(args, cfg):
    if not args.boundary:
        raise ArtifactError("this command needs --boundary")
    return read_boundary_csv(args.boundary, cfg.params)


def cmd_value(cfg: RunConfig, threads: int, args) -> int:
    _, c = _boundary_arg(args, cfg)
    v = cfg.value
    d = derive(cfg.params)
    xg = _grid(v.get("x", {"start": d.x0_star - 0.5, "stop": d.x1_star + 0.5, "num": 11}), "x")
    pg = _grid(v.get("pi", cfg.params.pi0), "pi")
    yg = _grid(v.get("y", 1.0), "y")
    cfg.value = {"x": xg.tolist(), "pi": pg.tolist(), "y": yg.tolist()}
    surf = value_surface(xg, pg, yg, c, cfg.quadrature, cfg.params, cfg.literal)
    write_table(cfg.output_dir / "value.csv", VALUE_COLUMNS, surf.rows())
    write_manifest(cfg, "value", ["value.csv"], threads)
    return EXIT_OK


def _sim_settings(cfg: RunConfig):
    s = cfg.simulation
    d = derive(cfg.params)
    out = {
        "x": float(s.get("x", d.x0_star)),
        "y": float(s.get("y", 1.0)),
        "pi0": float(s.get("pi0", cfg.params.pi0)),
        "n_paths": int(s.get("n_paths", 1000)),
        "dt": float(s.get("dt", 0.01)),
        "policy": s.get("policy", "optimal"),
        "block": int(s.get("block", 256)),
    }
    out["horizon"] = float(s.get("horizon", default_horizon(cfg.params)))
    if out["policy"] not in ("optimal", "precommitted", "both"):
        raise InvalidInputError("simulation.policy must be optimal, precommitted or both")
    cfg.simulation = out
    return out


def _sim_rows(est):
    for k in range(est.n_paths):
        dep = est.depletion_time[k]
        yield [int(est.stream[k]), float(est.true_drift[k]), est.payoffs[k],
               None if np.isnan(dep) else dep, est.initial_jump[k]]


def cmd_simulate(cfg: RunConfig, threads: int, args) -> int:
    b_inv, _ = _boundary_arg(args, cfg)
    b = boundary_transforms(b_inv, cfg.params)["b"]
    s = _sim_settings(cfg)
    policies = ["optimal", "precommitted"] if s["policy"] == "both" else [s["policy"]]
    summary, outputs, ests = {}, [], {}
    for pol in policies:
        est = simulate_policy(s["x"], s["y"], s["pi0"], pol, b, s["n_paths"], s["horizon"],
                              s["dt"], cfg.seed, cfg.params, block=s["block"], threads=threads,
                              literal=cfg.literal)
        name = "simulation.csv" if pol == policies[0] else f"simulation_{pol}.csv"
        write_table(cfg.output_dir / name, SIM_COLUMNS, _sim_rows(est))
        outputs.append(name)
        summary[pol] = {"mean": est.mean, "std_error": est.std_error, "n_paths": est.n_paths}
        ests[pol] = est
    if len(policies) == 2:
        diff = ests["optimal"].payoffs - ests["precommitted"].payoffs
        write_table(cfg.output_dir / "paired.csv",
                    ["seed_stream", "payoff_optimal", "payoff_precommitted", "difference"],
                    zip(ests["optimal"].stream.astype(int), ests["optimal"].payoffs,
                        ests["precommitted"].payoffs, diff))
        outputs.append("paired.csv")
        summary["paired_difference"] = {
            "mean": float(diff.mean()),
            "std_error": float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0,
            "n_paths": int(diff.size),
        }
    first = summary[policies[0]]
    write_json(cfg.output_dir / "summary.json", {**first, "policies": summary})
    outputs.append("summary.json")
    write_manifest(cfg, "simulate", outputs, threads)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, threads: int, args) -> int:
    if args.parameter not in SWEEP_PARAMETERS:
        raise InvalidInputError(f"--parameter must be one of {SWEEP_PARAMETERS}")
    if not args.values:
        raise InvalidInputError("sweep needs at least one value")
    probes = [float(v) for v in cfg.sweep.get("pi_probes", [0.2, 0.4, 0.6, 0.8])]
    cfg.sweep = {"parameter": args.parameter, "values": list(args.values), "pi_probes": probes}
    rows, outputs = [], []
    for val in args.values:
        p = cfg.params.replace(**{args.parameter: float(val)})
        rep = validate_params(p)
        if not rep.ok:
            log.warning("skipping %s=%g: %s", args.parameter, val, ", ".join(rep.failed()))
            continue
        sol = solve(p, cfg.solver, threads)
        name = f"boundary_{args.parameter}_{val!r}.csv"
        write_boundary_csv(cfg.output_dir / name, sol)
        outputs.append(name)
        rows.append([args.parameter, val, int(sol.log.converged)]
                    + list(sol.a(probes)) + list(sol.a_std_error(probes)))
    if not rows:
        log.error("no sweep value passed validation")
        return EXIT_ASSUMPTION
    cols = (["parameter", "value", "converged"] + [f"a_{p!r}" for p in probes]
            + [f"a_se_{p!r}" for p in probes])
    write_table(cfg.output_dir / "sweep_summary.csv", cols,
                ([r[0]] + [float(v) for v in r[1:]] for r in rows))
    outputs.append("sweep_summary.csv")
    write_manifest(cfg, "sweep", outputs, threads)
    return EXIT_OK


def _threads(arg) -> int:
    if arg is not None:
        n = int(arg)
    else:
        env = os.environ.get("LIQUIDEX_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise InvalidInputError(f"LIQUIDEX_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise InvalidInputError("thread count must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liquidex", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("validate", "solve", "value", "simulate", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("value", "simulate"):
            sp.add_argument("--boundary")
        if name == "sweep":
            sp.add_argument("--parameter", required=True)
            sp.add_argument("--values", nargs="*", type=float, default=[])
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise InvalidInputError("--seed must be non-negative")
        threads = _threads(args.threads)
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "validate":
            return cmd_validate(cfg, threads)
        rep = validate_params(cfg.params)
        if not rep.ok:
            print(rep)
            return EXIT_ASSUMPTION
        if args.command == "solve":
            return cmd_solve(cfg, threads)
        if args.command == "value":
            return cmd_value(cfg, threads, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, threads, args)
        return cmd_sweep(cfg, threads, args)
    except ArtifactError as exc:
        log.error("%s", exc)
        return EXIT_ARTIFACT
    except AssumptionViolationError as exc:
        log.error("%s", exc)
        return EXIT_ASSUMPTION
    except (InvalidInputError, ConfigurationError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
