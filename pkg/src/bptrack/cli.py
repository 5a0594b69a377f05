"""Command line interface: simulate, track, evaluate, and mc subcommands.

Each subcommand reads an optional YAML config plus ``--set section.key=value``
overrides; flags shared with the config (seed, gamma, variant) win over both.
Failures print a single-line error JSON to stdout and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import config as cfgmod
from . import harness, plots
from .linalg import RngStream
from .metrics import normalized_series
from .scenario import generate_measurements, generate_scenario

__all__ = ["main"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--profile", choices=["desk", "smoke"],
                   help="preset scale: desk (full study) or smoke (CI size)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bptrack",
        description="Extended object tracking with trajectory PMB filters")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate",
                           help="draw ground truth and measurement frames")
    _add_common(p_sim)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--gamma", type=float,
                       help="measurement rate (defaults to model.gamma)")
    p_sim.add_argument("--out-dir", required=True)

    p_track = sub.add_parser("track", help="run one filter over saved frames")
    _add_common(p_track)
    p_track.add_argument("--frames", required=True, help="frames CSV")
    p_track.add_argument("--variant",
                         choices=["tpmb-all", "tpmb-alive", "pmb"])
    p_track.add_argument("--seed", type=int, default=0)
    p_track.add_argument("--gamma", type=float)
    p_track.add_argument("--k-steps", type=int,
                         help="pad trailing empty frames up to this step")
    p_track.add_argument("--smooth", action="store_true",
                         help="also write backward-simulation estimates")
    p_track.add_argument("--out", required=True, help="estimates JSONL")

    p_eval = sub.add_parser("evaluate",
                            help="score estimates against ground truth")
    _add_common(p_eval)
    p_eval.add_argument("--estimates", required=True, help="estimates JSONL")
    p_eval.add_argument("--truth", required=True, help="truth JSONL")
    p_eval.add_argument("--k-steps", type=int,
                        help="evaluation horizon (defaults to last truth step)")
    p_eval.add_argument("--out-dir", required=True)

    p_mc = sub.add_parser("mc", help="run the Monte Carlo study end to end")
    _add_common(p_mc)
    p_mc.add_argument("--workers", type=int,
                      help="parallel run workers (default from config)")
    p_mc.add_argument("--out-dir", required=True)

    return parser


def _load(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_profile(cfg, args.profile)
    cfgmod.apply_overrides(cfg, args.overrides)
    return cfg


def cmd_simulate(args) -> None:
    cfg = _load(args)
    if args.gamma is not None:
        cfg["model"]["gamma"] = args.gamma
    scen = cfgmod.build_scenario(cfg)
    truth = generate_scenario(scen, RngStream(args.seed).derive("truth"))
    frames = generate_measurements(truth, scen.model, scen.k_steps,
                                   RngStream(args.seed).derive("meas"))
    os.makedirs(args.out_dir, exist_ok=True)
    truth_path = os.path.join(args.out_dir, "truth.jsonl")
    frames_path = os.path.join(args.out_dir, "frames.csv")
    harness.write_records_jsonl(truth_path, truth)
    harness.write_frames_csv(frames_path, frames)
    print(json.dumps({"truth": truth_path, "frames": frames_path,
                      "k_steps": scen.k_steps,
                      "n_objects": scen.n_objects}))


def cmd_track(args) -> None:
    cfg = _load(args)
    if args.gamma is not None:
        cfg["model"]["gamma"] = args.gamma
    if args.variant is not None:
        cfg["filter"]["variant"] = args.variant
    variant = cfg["filter"]["variant"]
    params = cfgmod.build_model(cfg)
    options = cfgmod.build_filter_options(cfg)
    frames = harness.read_frames_csv(args.frames, k_steps=args.k_steps)
    smooth_draws = cfg["mc"]["smooth_draws"] if args.smooth else 0
    output = harness.run_filter(frames, params, variant, options=options,
                                rng=RngStream(args.seed).derive("filter"),
                                smooth_draws=smooth_draws)
    records = [harness.estimate_to_record(e) for e in output.final]
    harness.write_records_jsonl(args.out, records)
    written = {"estimates": args.out, "n_estimates": len(records),
               "wall_time": output.wall_time}
    if output.smoothed is not None:
        smooth_path = _with_suffix(args.out, "smoothed")
        harness.write_records_jsonl(
            smooth_path,
            [harness.estimate_to_record(e) for e in output.smoothed])
        written["smoothed"] = smooth_path
    print(json.dumps(written))


def _with_suffix(path: str, tag: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.{tag}{ext}"


def cmd_evaluate(args) -> None:
    cfg = _load(args)
    metric_params = cfgmod.build_metric_params(cfg)
    truth = harness.read_records_jsonl(args.truth)
    estimates = harness.read_records_jsonl(args.estimates)
    k_steps = args.k_steps
    if k_steps is None:
        k_steps = max(rec.end for rec in truth)
    series = normalized_series(truth, estimates, metric_params, k_steps)
    os.makedirs(args.out_dir, exist_ok=True)
    report = harness.RunReport(series, None, 0.0, "", 0)
    csv_path = os.path.join(args.out_dir, "report.csv")
    harness.write_run_csv(csv_path, report)
    summary = {"k_steps": k_steps, "summed": report.summed_parts(),
               "final_step": {
                   "metric": series[-1].total,
                   "loc": series[-1].localization,
                   "miss": series[-1].miss,
                   "false": series[-1].false_,
                   "switch": series[-1].switch,
               }}
    json_path = os.path.join(args.out_dir, "report.json")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fig_path = os.path.join(args.out_dir, "metric_series.png")
    plots.plot_run_series(series, fig_path)
    print(json.dumps({"report_csv": csv_path, "report_json": json_path,
                      "figure": fig_path,
                      "summed_metric": report.summed_total}))


def cmd_mc(args) -> None:
    cfg = _load(args)
    if args.workers is not None:
        cfg["mc"]["workers"] = args.workers
    scen = cfgmod.build_scenario(cfg)
    options = cfgmod.build_filter_options(cfg)
    metric_params = cfgmod.build_metric_params(cfg)
    variants = tuple(cfg["mc"]["variants"])
    result = harness.monte_carlo(
        scen, variants=variants, metric_params=metric_params,
        options=options, smooth_draws=int(cfg["mc"]["smooth_draws"]),
        fixed_truth=bool(cfg["mc"]["fixed_truth"]),
        workers=int(cfg["mc"]["workers"]))
    os.makedirs(args.out_dir, exist_ok=True)
    runs_dir = os.path.join(args.out_dir, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    for run in result.runs:
        name = (f"{run.variant}_gamma{run.gamma:g}_run{run.run_index:03d}"
                f".csv")
        harness.write_run_csv(os.path.join(runs_dir, name), run.report)
    agg_path = os.path.join(args.out_dir, "aggregate.json")
    harness.write_aggregate_json(agg_path, result)
    fig_path = os.path.join(args.out_dir, "metric_series.png")
    plots.plot_metric_series(result.aggregates, fig_path)
    scen_fig = os.path.join(args.out_dir, "scenario.png")
    example_truth = generate_scenario(
        scen, RngStream(scen.seeds[0]).derive("truth"))
    plots.plot_scenario(example_truth, scen_fig, region=scen.model.region)
    print(json.dumps({"aggregate": agg_path, "runs_dir": runs_dir,
                      "figures": [fig_path, scen_fig],
                      "partial": result.partial,
                      "n_runs": len(result.runs),
                      "n_failures": len(result.failures)}))


_COMMANDS = {
    "simulate": cmd_simulate,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "mc": cmd_mc,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
