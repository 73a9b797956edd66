"""Command-line surface: synthesize, simulate, benchmark, and sweep.

Configuration comes from a key = value file plus command-line overrides
(--key value); unknown keys are rejected by name.  Exit codes: 0 success,
2 infeasible problem, 1 internal error.  One summary line goes to stdout;
diagnostics go to stderr.
"""

import argparse
import os
import sys

import numpy as np

from . import benchmarks, io, locality, numerics, of, robust, sf, sim
from .errors import Infeasible, ParseError, SlsError, ValidationError
from .fh import FhCost, UncertaintyBounds, fh_hinf, fh_l1, fh_lqr_noise, fh_robust_lqr

KNOWN_KEYS = {
    "command": str, "plant": str, "kind": str, "out": str,
    "d": int, "T": int, "ka": int, "kc": int, "ks": int, "tc": float,
    "eps_a": float, "eps_b": float,
    "mu": float, "lam": float, "l1_cap": float,
    "gamma_grid": str, "rho": float, "eps_abs": float, "eps_rel": float,
    "max_iters": int, "jobs": int, "seed": int,
    "benchmark": str, "rows": int, "cols": int,
    "horizon": int, "impulse_index": int, "impulse_time": int,
    "noise_seed": int, "response_dir": str, "lambda_hinf": float,
}

SYNTH_KINDS = ("fh-lqr", "fh-hinf", "fh-l1", "fh-robust", "llqr",
               "sf-fir-approx", "robust-lqr", "of-h2", "of-h2-sa", "of-mixed")


def parse_config(path=None, overrides=()):
    """Read key = value pairs, apply overrides, validate names and types."""
    cfg = {}

    def assign(key, value, where):
        if key not in KNOWN_KEYS:
            raise ValidationError(f"{where}: unknown key {key!r}")
        try:
            cfg[key] = KNOWN_KEYS[key](value)
        except ValueError as exc:
            raise ValidationError(f"{where}: bad value for {key!r}: {exc}") from exc

    if path is not None:
        with open(path) as fh:
            for ln, raw in enumerate(fh):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError(f"{path}:{ln + 1}: expected key = value")
                key, value = (tok.strip() for tok in line.split("=", 1))
                assign(key, value, f"{path}:{ln + 1}")
    for key, value in overrides:
        assign(key, value, "command line")
    return cfg


def _jobs(cfg):
    if "jobs" in cfg:
        return cfg["jobs"]
    return int(os.environ.get("SLSKIT_JOBS", "1"))


def _locality_cfg(cfg):
    kw = {"d": cfg.get("d", 0), "T": cfg.get("T", 10)}
    for key in ("ka", "kc", "ks", "tc"):
        if key in cfg:
            kw[key] = cfg[key]
    return locality.LocalityConfig(**kw)


def _admm_cfg(cfg):
    return numerics.AdmmConfig(
        rho=cfg.get("rho", 1.0), eps_abs=cfg.get("eps_abs", 1e-6),
        eps_rel=cfg.get("eps_rel", 1e-4), max_iters=cfg.get("max_iters", 10000))


def _write_blt_csv(M, path, name):
    with open(path, "w") as fh:
        fh.write(f"# block={name} row_dim={M.row_dim} col_dim={M.col_dim} T={M.T}\n")
        fh.write("t,s,row,col,value\n")
        for t in range(M.T + 1):
            for s in range(t + 1):
                blk = M.block(t, s)
                for r, c in zip(*np.nonzero(blk)):
                    fh.write(f"{t},{s},{r},{c},{io.FMT % blk[r, c]}\n")


def cmd_synth(cfg):
    plant = io.read_plant(cfg["plant"])
    kind = cfg.get("kind", "llqr")
    if kind not in SYNTH_KINDS:
        raise ValidationError(f"unknown synthesis kind {kind!r}")
    outdir = cfg.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    jobs = _jobs(cfg)
    T = cfg.get("T", 10)

    if kind.startswith("fh"):
        cost = FhCost(plant.C1.T @ plant.C1, plant.D12.T @ plant.D12, T=T)
        if kind == "fh-lqr":
            resp, obj = fh_lqr_noise(plant, cost)
        elif kind == "fh-hinf":
            resp, obj = fh_hinf(plant, cost)
        elif kind == "fh-l1":
            resp, obj = fh_l1(plant, cost)
        else:
            bounds = UncertaintyBounds(cfg.get("eps_a", 0.0), cfg.get("eps_b", 0.0))
            resp, obj = fh_robust_lqr(plant, cost, bounds)
        _write_blt_csv(resp.phi_x, os.path.join(outdir, "phi_x_blt.csv"), "phi_x")
        _write_blt_csv(resp.phi_u, os.path.join(outdir, "phi_u_blt.csv"), "phi_u")
        print(f"{kind}: objective={obj:.9g} T={T}")
        return 0

    if kind in ("llqr", "sf-fir-approx", "robust-lqr"):
        if kind == "llqr":
            masks = locality.build_masks(plant.graph, _locality_cfg(cfg))
            resp, obj = sf.synthesize_llqr(plant, masks, jobs=jobs)
            residual = sf.sf_achievability_residual(plant, resp)
            summary = f"llqr: objective={obj:.9g} residual={residual:.3g}"
        elif kind == "sf-fir-approx":
            resp, va, gamma, obj = sf.sf_fir_approx(
                plant, T, lam=cfg.get("lambda_hinf", 0.0))
            np.savetxt(os.path.join(outdir, "virtual_actuation.csv"), va.V,
                       delimiter=",", fmt=io.FMT)
            summary = f"sf-fir-approx: bound={obj:.9g} gamma={gamma:.6g}"
        else:
            bounds = UncertaintyBounds(cfg.get("eps_a", 0.0), cfg.get("eps_b", 0.0))
            resp, gamma, obj = robust.robust_lqr(plant, bounds, T)
            summary = f"robust-lqr: certified={obj:.9g} gamma={gamma:.6g}"
        io.write_sf_response(resp, outdir)
        print(summary)
        return 0

    masks = locality.build_of_masks(plant.graph, _locality_cfg(cfg))
    weights = None
    if kind == "of-h2-sa":
        weights = of.RegularizationWeights(
            mu=np.full(plant.nu, cfg.get("mu", 0.0)),
            lam=np.full(plant.ny, cfg.get("lam", 0.0)))
    if kind == "of-mixed":
        grid = [float(tok) for tok in cfg.get("gamma_grid", "").split(",") if tok]
        if not grid:
            raise ValidationError("of-mixed needs gamma_grid = g1,g2,...")
        points = of.mixed_h2_l1_sweep(plant, masks, grid, cfg=_admm_cfg(cfg), jobs=jobs)
        io.write_sweep_csv(points, os.path.join(outdir, "tradeoff.csv"))
        feas = sum(p["feasible"] for p in points)
        print(f"of-mixed: {feas}/{len(points)} feasible points")
        return 0 if feas else 2
    res = of.of_admm_synthesize(plant, masks, weights=weights,
                                l1_cap=cfg.get("l1_cap"), cfg=_admm_cfg(cfg),
                                jobs=jobs)
    io.write_of_response(res.response, outdir)
    left, right = of.of_achievability_residual(plant, res.response)
    print(f"{kind}: objective={res.objective:.9g} h2_sq={res.h2_sq:.9g} "
          f"iters={res.iters} residuals=({left:.3g},{right:.3g})")
    return 0


def cmd_simulate(cfg):
    plant = io.read_plant(cfg["plant"])
    outdir = cfg.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    respdir = cfg.get("response_dir", outdir)
    if os.path.exists(os.path.join(respdir, "phi_xx.csv")):
        resp = io.read_of_response(respdir)
        ctrl = of.of_controller_realize(resp, plant.D22)
    elif os.path.exists(os.path.join(respdir, "phi_x.csv")):
        ctrl = sf.sf_controller_realize(io.read_sf_response(respdir))
    else:
        ctrl = None
    horizon = cfg.get("horizon", 50)
    if "impulse_index" in cfg:
        w = sim.impulse(plant.nw, horizon, cfg["impulse_index"],
                        cfg.get("impulse_time", 0))
    else:
        w = sim.white_noise(plant.nw, horizon, cfg.get("noise_seed", cfg.get("seed", 0)))
    trace = sim.simulate(sim.SimScenario(plant, ctrl, horizon, w=w))
    io.write_trace_csv(trace, os.path.join(outdir, "trace.csv"))
    field = sim.space_time_field(trace, plant.graph)
    io.write_field_csv(field, os.path.join(outdir, "field.csv"))
    print(f"simulate: horizon={horizon} verdict={trace.verdict} "
          f"growth={trace.growth_ratio:.4g} cost={trace.total_cost:.6g}")
    return 0


def cmd_bench(cfg):
    name = cfg.get("benchmark", "chain59-llqr")
    outdir = cfg.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    spec = benchmarks.BenchmarkSpec(name=name, seed=cfg.get("seed", 0), config=cfg)
    report, _ = benchmarks.run_benchmark(
        spec, out_path=os.path.join(outdir, f"{name}.json"))
    print(f"bench {name}: objective={report['objective']:.9g} "
          f"normalized={report['normalized']:.6g} wall_ms={report['wall_ms']:.0f}")
    return 0


def cmd_sweep(cfg):
    plant = io.read_plant(cfg["plant"])
    outdir = cfg.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    masks = locality.build_of_masks(plant.graph, _locality_cfg(cfg))
    grid = [float(tok) for tok in cfg.get("gamma_grid", "").split(",") if tok]
    if not grid:
        raise ValidationError("sweep needs gamma_grid = g1,g2,...")
    points = of.mixed_h2_l1_sweep(plant, masks, grid, cfg=_admm_cfg(cfg),
                                  jobs=_jobs(cfg))
    io.write_sweep_csv(points, os.path.join(outdir, "tradeoff.csv"))
    feas = sum(p["feasible"] for p in points)
    print(f"sweep: {feas}/{len(points)} feasible points -> tradeoff.csv")
    return 0 if feas else 2


COMMANDS = {"synth": cmd_synth, "simulate": cmd_simulate,
            "bench": cmd_bench, "sweep": cmd_sweep}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="slskit",
        description="Structured closed-loop controller synthesis toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS) + ["help"],
                        nargs="?", default="help")
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key")
    args, extra = parser.parse_known_args(argv)
    overrides = []
    for item in args.set:
        if "=" not in item:
            print(f"error: --set needs KEY=VALUE, got {item!r}", file=sys.stderr)
            return 1
        overrides.append(tuple(tok.strip() for tok in item.split("=", 1)))
    it = iter(extra)
    for tok in it:
        if tok.startswith("--"):
            if "=" in tok:
                overrides.append(tuple(tok[2:].split("=", 1)))
            else:
                overrides.append((tok[2:], next(it, "")))
        else:
            print(f"error: unrecognized argument {tok!r}", file=sys.stderr)
            return 1
    if args.command == "help":
        parser.print_help()
        return 0
    try:
        cfg = parse_config(args.config, overrides)
        if "command" in cfg and cfg["command"] != args.command:
            raise ValidationError(
                f"config names command {cfg['command']!r} but {args.command!r} given")
        return COMMANDS[args.command](cfg)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError, SlsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
