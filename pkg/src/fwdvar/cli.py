"""Command-line interface.

    fwdvar simulate --config run.json --out-dir out/
    fwdvar estimate --config run.json --input out/surface.csv
    fwdvar infer    --config run.json --input out/surface.csv
    fwdvar mc       --config run.json --workers 4 --out-dir study/
    fwdvar ingest   --config run.json --input chain.csv
    fwdvar validate --input out/surface.csv

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical error,
1 anything else.  Failures also print one line to stderr of the form
``fwdvar-error {"code": ..., "type": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .config import PROFILES, READ_PATHS, RunConfig, parse_config
from .contrast import ContrastConfig, ContrastEvaluator, minimize_contrast
from .errors import ConfigError, DataError, FwdVarError
from .ingest import build_surface, read_chain
from .inference import infer
from .kernels import KernelSpec, ParamBox
from .montecarlo import MCConfig, export_study, run_study, summarize
from .simulate import SimConfig, simulate_surface
from .surface import (
    ForwardVarianceCurve,
    MaturityGrid,
    TimeGrid,
    default_d,
    errors_only,
    read_surface,
    validate_surface,
    write_surface,
)

log = logging.getLogger("fwdvar")

COMMANDS = ("simulate", "estimate", "infer", "mc", "ingest", "validate")


def header(cfg: RunConfig) -> dict:
    """Provenance carried by every output file."""
    return {
        "version": f"fwdvar {__version__}",
        "config_digest": cfg.digest,
        "seed": cfg.seed,
        "profile": cfg.profile,
        "config": cfg.canonical_json(),
    }


def _kernel(cfg):
    return KernelSpec(cfg.kernel, cfg.shift) if cfg.kernel != "exponential" else KernelSpec(cfg.kernel)


def _box(cfg):
    return ParamBox(cfg.box_lower, cfg.box_upper)


def _maturity_grid(cfg):
    if cfg.maturities is not None:
        return MaturityGrid(np.array(cfg.maturities))
    return MaturityGrid.uniform(cfg.d if cfg.d is not None else default_d(cfg.n))


def _v0(v0):
    if isinstance(v0, dict):
        return ForwardVarianceCurve(v0["knots"], v0["values"])
    return ForwardVarianceCurve.constant(v0)


def _fixed(cfg, kernel):
    return {kernel.param_names.index(name): value for name, value in cfg.fixed.items()}


def _contrast_config(cfg):
    return ContrastConfig(
        epsilon=cfg.epsilon,
        multistart_count=cfg.multistart_count,
        simplex_tolerance=cfg.simplex_tolerance,
        max_iterations=cfg.max_iterations,
        grid_refine=cfg.grid_refine,
        descents=cfg.descents,
        profile_scale=cfg.profile_scale,
    )


def _sim_config(cfg, box=None):
    try:
        return SimConfig(
            kernel=_kernel(cfg),
            theta0=cfg.theta0,
            time_grid=TimeGrid(cfg.n),
            maturity_grid=_maturity_grid(cfg),
            v0=_v0(cfg.v0),
            refinement=cfg.refinement,
            seed=cfg.seed,
            box=box,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_record(path, cfg, record: dict):
    with open(path, "w") as fh:
        for key, value in header(cfg).items():
            fh.write(f"# {key}={value}\n")
        for key, value in record.items():
            fh.write(f"{key} = {json.dumps(value)}\n")


def _load_surface(cfg):
    surface = read_surface(cfg.surface)
    problems = errors_only(validate_surface(surface, strict=False))
    if problems:
        raise DataError("surface fails validation: " + "; ".join(str(v) for v in problems))
    return surface


def cmd_simulate(cfg, out_dir):
    surface = simulate_surface(_sim_config(cfg))
    path = os.path.join(out_dir, "surface.csv")
    meta = header(cfg)
    meta.update({"kernel": cfg.kernel, "theta0": json.dumps(cfg.theta0)})
    write_surface(surface, path, meta)
    return {"surface": path}


def _estimate(cfg):
    surface = _load_surface(cfg)
    kernel = _kernel(cfg)
    ccfg = _contrast_config(cfg)
    ev = ContrastEvaluator(surface, kernel, ccfg.epsilon)
    est = minimize_contrast(surface, kernel, _box(cfg), ccfg, _fixed(cfg, kernel), ev)
    record = {"kernel": cfg.kernel, "param_names": list(kernel.param_names), "n": surface.n, "d": surface.d}
    record.update(est.as_dict())
    return surface, kernel, ev, est, record


def cmd_estimate(cfg, out_dir):
    *_, record = _estimate(cfg)
    path = os.path.join(out_dir, "estimate.txt")
    _write_record(path, cfg, record)
    return {"estimate": path, "record": record}


def cmd_infer(cfg, out_dir):
    surface, kernel, ev, est, record = _estimate(cfg)
    theta0 = cfg.theta0 if "theta0" in cfg.explicit else None
    res = infer(surface, kernel, est.theta_hat, cfg.epsilon, est.free, theta0, cfg.level, ev)
    record.update({f"inference_{k}": v for k, v in res.as_dict().items() if k != "theta_hat"})
    path = os.path.join(out_dir, "infer.txt")
    _write_record(path, cfg, record)
    return {"infer": path, "record": record}


def cmd_mc(cfg, out_dir):
    box = _box(cfg)
    sim = _sim_config(cfg, box)
    kernel = sim.kernel
    mc = MCConfig(
        sim=sim,
        box=box,
        contrast=_contrast_config(cfg),
        replications=cfg.replications,
        master_seed=cfg.seed,
        fixed=_fixed(cfg, kernel),
        epsilon_sweep=tuple(cfg.epsilon_sweep),
        level=cfg.level,
    )
    records = run_study(mc, workers=cfg.workers)
    summary = summarize(records, mc.theta0, kernel.param_names)
    paths = export_study(summary, records, out_dir, mc.theta0, kernel.param_names, header(cfg))
    return paths


def cmd_ingest(cfg, out_dir):
    chain = read_chain(cfg.chain)
    surface, report = build_surface(chain, TimeGrid(cfg.n), _maturity_grid(cfg), workers=cfg.workers)
    path = os.path.join(out_dir, "surface.csv")
    write_surface(surface, path, header(cfg))
    report_path = os.path.join(out_dir, "coverage.txt")
    with open(report_path, "w") as fh:
        for key, value in header(cfg).items():
            fh.write(f"# {key}={value}\n")
        fh.write(report.to_text())
    return {"surface": path, "coverage": report_path}


def cmd_validate(cfg, out_dir):
    surface = read_surface(cfg.surface)
    violations = validate_surface(surface, strict=cfg.strict)
    for v in violations:
        print(f"{v.severity}: {v}")
    if errors_only(violations):
        raise DataError(f"{len(errors_only(violations))} validation error(s) in {cfg.surface}")
    print(f"ok: {cfg.surface} (n={surface.n}, d={surface.d})")
    return {}


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "infer": cmd_infer,
    "mc": cmd_mc,
    "ingest": cmd_ingest,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwdvar", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fwdvar {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the seed")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk", help="default set (default: desk)")
    common.add_argument("--input", help="input surface or chain file (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", ""))
    return parser


def error_line(exc: BaseException, code: int) -> str:
    payload = {"code": code, "type": type(exc).__name__, "message": str(exc)}
    return "fwdvar-error " + json.dumps(payload)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        overrides = {"seed": args.seed, "workers": args.workers, "out_dir": args.out_dir}
        if args.input is not None:
            overrides[READ_PATHS.get(args.command, "surface")] = args.input
        cfg = parse_config(args.config, overrides, args.profile, args.command)
        logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(cfg.verbosity, 2)])
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "effective_config.json"), "w") as fh:
            json.dump({"version": __version__, "config_digest": cfg.digest, "config": cfg.values}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        log.info("effective config %s", cfg.canonical_json())
        out = HANDLERS[args.command](cfg, cfg.out_dir)
        if "record" in out:
            for key, value in out["record"].items():
                print(f"{key} = {json.dumps(value)}")
        else:
            for key, value in out.items():
                print(f"{key}: {value}")
        return 0
    except FwdVarError as exc:
        print(error_line(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except (ValueError, ArithmeticError) as exc:
        code = 4 if isinstance(exc, ArithmeticError) else 2
        print(error_line(exc, code), file=sys.stderr)
        return code
    except Exception as exc:  # noqa: BLE001 - last-resort report
        print(error_line(exc, 1), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
