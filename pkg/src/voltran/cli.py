"""Command-line entry point: config in, report and surfaces out.

Pipeline: parse and validate the JSON config, build the grid, calibrate,
optionally verify by Monte Carlo, then write report.json, trace.csv and
the phi/sigma surfaces.  Exit 0 on a converged run (with all MC z-scores
below 3 when MC is enabled), 2 on non-convergence, 1 on configuration
errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import calibrate as cal
from . import instruments as ins
from . import mc as mcmod
from . import statespace as ss
from .cost import make_cost_spec
from .errors import ConfigurationError
from .hjb import extract_vol


def _require(block, key, where):
    if key not in block:
        raise ConfigurationError(f"missing '{key}' in {where}")
    return block[key]


def parse_config(raw: dict):
    """Validate the raw config dict into typed pieces."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    spot = float(_require(raw, "spot", "config"))
    if not (math.isfinite(spot) and spot > 0):
        raise ConfigurationError("spot must be a positive number")

    cost_block = _require(raw, "cost", "config")
    cost_spec = make_cost_spec(
        float(_require(cost_block, "sigma_bar", "cost block")),
        p_exp=float(cost_block.get("p", 2.0)),
        q_exp=float(cost_block.get("q", 2.0)),
        a=float(cost_block.get("a", 1.0)),
        beta_min=cost_block.get("beta_min"),
        beta_max=cost_block.get("beta_max"))

    grid_block = raw.get("grid", {})
    grid_config = ss.GridConfig(
        n_x=int(grid_block.get("n_x", 201)),
        n_t=int(grid_block.get("n_t", 100)),
        x_margin_sigmas=float(grid_block.get("x_margin_sigmas", 4.0)),
        dt_max=grid_block.get("dt_max"),
        force_state=grid_block.get("force_state"))

    inst_block = _require(raw, "instruments", "config")
    if not isinstance(inst_block, list) or not inst_block:
        raise ConfigurationError("instruments must be a non-empty array")
    instruments = []
    for k, item in enumerate(inst_block):
        kind = _require(item, "kind", f"instrument #{k}")
        if kind not in ins.KINDS:
            raise ConfigurationError(f"unknown instrument kind '{kind}'")
        inst = ins.Instrument(
            id=str(item.get("id", f"inst_{k}")),
            kind=kind,
            strike=float(_require(item, "strike", f"instrument #{k}")),
            maturity=float(_require(item, "maturity", f"instrument #{k}")),
            target_price=float(_require(item, "target_price", f"instrument #{k}")),
            barrier=(float(item["barrier"]) if item.get("barrier") is not None
                     else None),
            weight=float(item.get("weight", 1.0)))
        ins.validate_instrument(inst, spot)
        instruments.append(inst)

    opt_block = raw.get("optimizer", {})
    line = opt_block.get("line_search", {})
    opt_config = cal.OptConfig(
        tol_price=float(opt_block.get("tol_price", 1e-6)),
        max_outer_iters=int(opt_block.get("max_outer_iters", 200)),
        c1=float(line.get("c1", 1e-4)),
        shrink=float(line.get("shrink", 0.5)),
        use_bfgs=bool(opt_block.get("use_bfgs", False)))

    mc_block = raw.get("mc")
    mc_config = None
    if mc_block is not None:
        mc_config = mcmod.McConfig(
            n_paths=int(mc_block.get("n_paths", 100_000)),
            n_steps=(int(mc_block["n_steps"]) if "n_steps" in mc_block else None),
            seed=int(mc_block.get("seed", 0)),
            antithetic=bool(mc_block.get("antithetic", True)))
        if mc_config.n_paths < 10_000:
            raise ConfigurationError("mc.n_paths must be >= 10000 for verification")

    output_dir = raw.get("output_dir", "voltran_out")
    return spot, cost_spec, grid_config, instruments, opt_config, mc_config, output_dir


def _report_payload(spot, report, mc_result, insts_original):
    per_inst = []
    for k, inst in enumerate(report.instruments):
        orig = insts_original[k]
        model = float(report.model_prices[k])
        if report.was_call[k]:
            model = model + (spot - inst.strike)  # parity back to the call
        entry = {
            "id": orig.id,
            "kind": orig.kind,
            "strike": orig.strike,
            "barrier": orig.barrier,
            "maturity": orig.maturity,
            "weight": orig.weight,
            "target_price": orig.target_price,
            "model_price": model,
            "price_error": float(report.price_errors[k]),
            "lambda": float(report.lambda_star[k]),
        }
        if mc_result is not None:
            entry["mc_price"] = float(mc_result.prices[k])
            entry["mc_stderr"] = float(mc_result.stderrs[k])
            entry["mc_z_score"] = float(mc_result.z_scores[k])
        per_inst.append(entry)

    payload = {
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
        "dual_value": float(report.dual_value),
        "primal_cost": float(report.primal_cost),
        "duality_gap": float(report.duality_gap),
        "lambda_star": [float(v) for v in report.lambda_star],
        "instruments": per_inst,
        "trace": [[float(v), float(e)] for v, e in report.trace],
        "grid": {
            "state": report.grid.kind.kind,
            "n_x": int(report.grid.spot.n_x),
            "n_t": int(report.grid.time.n_t),
            "x_min": float(report.grid.spot.x_min),
            "x_max": float(report.grid.spot.x_max),
            "dx": float(report.grid.spot.dx),
            "snap_report": {k: float(v) for k, v in report.grid.snap_report.items()},
        },
    }
    if mc_result is not None:
        payload["mc"] = {
            "n_paths": int(mc_result.n_paths),
            "n_steps": int(mc_result.n_steps),
            "seed": int(mc_result.seed),
            "martingale_mean": {f"{t:g}": float(v)
                                for t, v in mc_result.martingale_mean.items()},
            "martingale_stderr": {f"{t:g}": float(v)
                                  for t, v in mc_result.martingale_stderr.items()},
        }
    return payload


def run(config_path: str, dry_run: bool = False, no_mc: bool = False,
        threads: int = 0, output_dir: str = None) -> int:
    """Execute the pipeline for one config file; returns the exit status."""
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON at line {exc.lineno}, column {exc.colno}: "
              f"{exc.msg}", file=sys.stderr)
        return 1

    try:
        (spot, cost_spec, grid_config, instruments, opt_config,
         mc_config, cfg_outdir) = parse_config(raw)
        insts_converted, _ = ins.convert_calls_to_puts(instruments, spot)
        ins.check_target_bounds(insts_converted, spot)
        grid = ss.build_grid(grid_config, insts_converted, spot,
                             cost_spec.sigma_bar)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if threads:
        os.environ["OMP_NUM_THREADS"] = str(threads)

    print(f"resolved grid: state={grid.kind.kind} n_x={grid.spot.n_x} "
          f"n_t={grid.time.n_t} x=[{grid.spot.x_min:.4f}, {grid.spot.x_max:.4f}] "
          f"blocks={grid.n_blocks}")
    for name, dist in grid.snap_report.items():
        print(f"  snap {name}: {dist:+.3e}")
    if dry_run:
        return 0

    report = cal.calibrate(instruments, cost_spec, grid_config, opt_config,
                           spot=spot)
    print(f"calibration: converged={report.converged} "
          f"iters={report.iterations} "
          f"max|err|={max(e for _, e in report.trace[-1:]):.3e} "
          f"dual={report.dual_value:.6e} gap={report.duality_gap:.3e}")

    mc_result = None
    if mc_config is not None and not no_mc:
        mc_result = mcmod.simulate_and_price(
            extract_vol(report.solution), report.instruments,
            report.grid, mc_config)
        worst = float(np.max(np.abs(mc_result.z_scores)))
        print(f"mc verification: worst |z| = {worst:.2f}")

    outdir = output_dir or cfg_outdir
    os.makedirs(outdir, exist_ok=True)
    os.makedirs(os.path.join(outdir, "surfaces"), exist_ok=True)

    payload = _report_payload(spot, report, mc_result, instruments)
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(outdir, "trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("iter,dual_value,max_weighted_error\n")
        for i, (v, e) in enumerate(report.trace):
            fh.write(f"{i},{v:.17g},{e:.17g}\n")
    report.solution.phi.write_csv(os.path.join(outdir, "surfaces", "phi.csv"))
    report.sigma.write_csv(os.path.join(outdir, "surfaces", "sigma.csv"),
                           extended_col=True)
    print(f"outputs written to {outdir}")

    if not report.converged:
        return 2
    if mc_result is not None and np.max(np.abs(mc_result.z_scores)) >= 3.0:
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="voltran",
        description="Calibrate a path-dependent volatility model to "
                    "European, barrier and lookback option prices.")
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate config and print the resolved grid")
    parser.add_argument("--no-mc", action="store_true",
                        help="skip Monte Carlo verification")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("VOLTRAN_THREADS", "0")),
                        help="worker threads (default: VOLTRAN_THREADS env)")
    parser.add_argument("--output", default=None, help="output directory")
    args = parser.parse_args(argv)
    code = run(args.config, dry_run=args.dry_run, no_mc=args.no_mc,
               threads=args.threads, output_dir=args.output)
    return code


if __name__ == "__main__":
    sys.exit(main())
