"""Run orchestration: drive the filter over frames, score the output, and
aggregate Monte Carlo batches.

The per-step metric series is an online score: entry k compares the truth
against the estimates reported at step k, over the window [1, k], divided
by k. Summing the series over all steps gives the headline trajectory
metric; the smoothing score applies the same full-window metric to the
backward-simulation output produced once at the final step.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .filters import FilterOptions, TpmbFilter, TrajectoryEstimate
from .linalg import RngStream
from .metrics import MetricDecomposition, MetricParams, TrajectoryRecord, lp_metric
from .models import ModelParams, ObjectState
from .scenario import ScenarioConfig, generate_measurements, generate_scenario

__all__ = [
    "RunOutput",
    "RunReport",
    "MonteCarloResult",
    "run_filter",
    "evaluate",
    "monte_carlo",
    "estimate_to_record",
    "write_run_csv",
    "write_records_jsonl",
    "read_records_jsonl",
    "write_frames_csv",
    "read_frames_csv",
    "write_aggregate_json",
]


@dataclass
class RunOutput:
    """Everything the filter reported over one run."""

    per_step: list
    final: list
    smoothed: list | None
    wall_time: float
    step_times: list


@dataclass
class RunReport:
    """Scored output of one run: normalized metric series plus timing."""

    series: list
    smoothing: MetricDecomposition | None
    wall_time: float
    variant: str
    seed: int

    @property
    def summed_total(self) -> float:
        return float(sum(d.total for d in self.series))

    def summed_parts(self) -> dict:
        return {
            "metric": self.summed_total,
            "loc": float(sum(d.localization for d in self.series)),
            "miss": float(sum(d.miss for d in self.series)),
            "false": float(sum(d.false_ for d in self.series)),
            "switch": float(sum(d.switch for d in self.series)),
        }


def run_filter(frames, params: ModelParams, variant: str,
               options: FilterOptions | None = None,
               rng: RngStream | None = None,
               record_series: bool = True,
               smooth_draws: int = 0) -> RunOutput:
    """Drive one filter over a frame sequence and collect its estimates.

    The estimate set is recorded after every step so the metric series can
    score the filter online. ``smooth_draws`` > 0 additionally runs backward
    simulation at the final step (trajectory variants only).
    """
    if options is None:
        options = default_filter_options(variant)
    elif options.variant != variant:
        options = replace(options, variant=variant)
    if rng is None:
        rng = RngStream(0)
    filt = TpmbFilter(params, options, rng)
    per_step = []
    step_times = []
    t_start = time.perf_counter()
    for frame in frames:
        t0 = time.perf_counter()
        filt.step(np.asarray(frame, dtype=float))
        step_times.append(time.perf_counter() - t0)
        if record_series:
            per_step.append(filt.estimates())
    final = per_step[-1] if record_series and per_step else filt.estimates()
    smoothed = None
    if smooth_draws > 0 and variant != "pmb":
        smoothed = filt.smoothed_estimates(n_draws=smooth_draws)
    wall = time.perf_counter() - t_start
    return RunOutput(per_step, final, smoothed, wall, step_times)


def default_filter_options(variant: str) -> FilterOptions:
    """Tracker settings used throughout the simulation study.

    Uniform birth lets the undetected intensity stay scalar, with new
    components proposed from the measurements themselves.
    """
    from .bp import BpOptions

    return FilterOptions(variant=variant, scalar_ppp=True,
                         bp=BpOptions(meas_driven_birth=True))


def estimate_to_record(est: TrajectoryEstimate) -> TrajectoryRecord:
    states = [ObjectState(est.kin[t], est.extent[t])
              for t in range(est.length)]
    return TrajectoryRecord(est.start, states, id=est.id)


def _normalized(dec: MetricDecomposition, k: int) -> MetricDecomposition:
    return MetricDecomposition(dec.total / k, dec.localization / k,
                               dec.miss / k, dec.false_ / k, dec.switch / k,
                               per_step=dec.per_step)


def evaluate(output: RunOutput, truth: list, metric_params: MetricParams,
             k_steps: int, variant: str = "", seed: int = 0) -> RunReport:
    """Score a run: online normalized series plus the final smoothing score.

    Entry k of the series holds the metric between the truth and the step-k
    estimate set on the window [1, k], all parts divided by k.
    """
    if len(output.per_step) != k_steps:
        raise ValueError(
            f"need estimates for every step: got {len(output.per_step)} "
            f"sets for {k_steps} steps")
    series = []
    for k in range(1, k_steps + 1):
        records = [estimate_to_record(e) for e in output.per_step[k - 1]]
        series.append(_normalized(
            lp_metric(truth, records, metric_params, horizon=k), k))
    smoothing = None
    if output.smoothed is not None:
        records = [estimate_to_record(e) for e in output.smoothed]
        smoothing = _normalized(
            lp_metric(truth, records, metric_params, horizon=k_steps),
            k_steps)
    return RunReport(series, smoothing, output.wall_time, variant, seed)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class RunResult:
    gamma: float
    variant: str
    run_index: int
    seed: int
    report: RunReport


@dataclass
class VariantAggregate:
    """Mean scores for one (variant, gamma) cell of the study."""

    variant: str
    gamma: float
    n_runs: int
    mean_series: np.ndarray
    totals: dict
    smoothing: dict | None
    runtime_mean: float
    runtime_stddev: float


@dataclass
class MonteCarloResult:
    aggregates: list
    runs: list
    failures: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


def truth_for_run(cfg: ScenarioConfig, seed: int,
                  fixed_truth: bool) -> list:
    """Ground truth for one run: per-seed fresh, or pinned to the first
    configured seed when the study wants a common truth across runs."""
    truth_seed = cfg.seeds[0] if fixed_truth else seed
    return generate_scenario(cfg, RngStream(truth_seed).derive("truth"))


def _single_run(cfg: ScenarioConfig, gamma: float, variant: str,
                run_index: int, seed: int, options: FilterOptions | None,
                metric_params: MetricParams, smooth_draws: int,
                fixed_truth: bool) -> RunResult:
    params = cfg.model.replace(gamma=gamma)
    truth = truth_for_run(cfg, seed, fixed_truth)
    frames = generate_measurements(
        truth, params, cfg.k_steps,
        RngStream(seed).derive("meas", f"gamma={gamma:g}"))
    rng = RngStream(seed).derive("filter", variant, f"gamma={gamma:g}")
    output = run_filter(frames, params, variant, options=options, rng=rng,
                        smooth_draws=smooth_draws)
    report = evaluate(output, truth, metric_params, cfg.k_steps,
                      variant=variant, seed=seed)
    return RunResult(gamma, variant, run_index, seed, report)


def _run_task(args):
    return _single_run(*args)


def monte_carlo(cfg: ScenarioConfig, variants=("tpmb-all", "pmb"),
                metric_params: MetricParams | None = None,
                options: FilterOptions | None = None,
                smooth_draws: int = 100, fixed_truth: bool = False,
                workers: int = 1) -> MonteCarloResult:
    """Run the full study grid: runs x gamma_grid x variants.

    Each run gets its own derived seed; both variants see identical frames
    within a run so the comparison is paired. Failures are recorded rather
    than raised and leave the result marked partial.
    """
    if metric_params is None:
        metric_params = MetricParams()
    seeds = cfg.run_seeds()
    tasks = []
    for gamma in cfg.gamma_grid:
        for variant in variants:
            for run_index in range(cfg.runs):
                tasks.append((cfg, gamma, variant, run_index,
                              seeds[run_index], options, metric_params,
                              smooth_draws, fixed_truth))
    runs = []
    failures = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = pool.map(_run_task_guarded, tasks)
            for task, (result, err) in zip(tasks, outcomes):
                if err is not None:
                    failures.append(_failure_entry(task, err))
                else:
                    runs.append(result)
    else:
        for task in tasks:
            result, err = _run_task_guarded(task)
            if err is not None:
                failures.append(_failure_entry(task, err))
            else:
                runs.append(result)
    aggregates = [
        _aggregate_cell(gamma, variant,
                        [r for r in runs
                         if r.gamma == gamma and r.variant == variant],
                        cfg.k_steps)
        for gamma in cfg.gamma_grid for variant in variants]
    aggregates = [a for a in aggregates if a is not None]
    return MonteCarloResult(aggregates, runs, failures)


def _run_task_guarded(args):
    try:
        return _run_task(args), None
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _failure_entry(task, err: str) -> dict:
    _, gamma, variant, run_index, seed = task[:5]
    return {"gamma": gamma, "variant": variant, "run": run_index,
            "seed": seed, "error": err}


def _aggregate_cell(gamma: float, variant: str, cell: list,
                    k_steps: int) -> VariantAggregate | None:
    if not cell:
        return None
    series = np.zeros((k_steps, 5))
    for r in cell:
        series += np.array([[d.total, d.localization, d.miss, d.false_,
                             d.switch] for d in r.report.series])
    series /= len(cell)
    part_keys = ("metric", "loc", "miss", "false", "switch")
    totals = {key: float(np.mean([r.report.summed_parts()[key]
                                  for r in cell]))
              for key in part_keys}
    smoothing = None
    if all(r.report.smoothing is not None for r in cell):
        sm = np.mean([[r.report.smoothing.total,
                       r.report.smoothing.localization,
                       r.report.smoothing.miss, r.report.smoothing.false_,
                       r.report.smoothing.switch] for r in cell], axis=0)
        smoothing = dict(zip(part_keys, (float(v) for v in sm)))
    times = [r.report.wall_time for r in cell]
    return VariantAggregate(
        variant, gamma, len(cell), series, totals, smoothing,
        float(np.mean(times)), float(np.std(times)))


# ---------------------------------------------------------------------------
# file formats

_KIN_ORDER = [0, 2, 1, 3]  # internal [px, vx, py, vy] -> file [px, py, vx, vy]


def write_run_csv(path, report: RunReport) -> None:
    """Per-step normalized series as CSV: step,metric,loc,miss,false,switch."""
    lines = ["step,metric,loc,miss,false,switch"]
    for k, dec in enumerate(report.series, start=1):
        lines.append(f"{k},{float(dec.total)!r},{float(dec.localization)!r},"
                     f"{float(dec.miss)!r},{float(dec.false_)!r},"
                     f"{float(dec.switch)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_run_csv(path) -> list:
    decs = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            _, total, loc, miss, false_, switch = line.strip().split(",")
            decs.append(MetricDecomposition(float(total), float(loc),
                                            float(miss), float(false_),
                                            float(switch)))
    return decs


def write_records_jsonl(path, records) -> None:
    """Trajectories as JSONL: id, start, per-step [px,py,vx,vy,E11,E12,E22]."""
    with open(path, "w") as fh:
        for rec in records:
            states = []
            for s in rec.states:
                kin = s.kin[_KIN_ORDER]
                states.append([float(kin[0]), float(kin[1]), float(kin[2]),
                               float(kin[3]), float(s.extent[0, 0]),
                               float(s.extent[0, 1]), float(s.extent[1, 1])])
            ident = list(rec.id) if isinstance(rec.id, tuple) else rec.id
            fh.write(json.dumps({"id": ident, "start": rec.start,
                                 "states": states}) + "\n")


def read_records_jsonl(path) -> list:
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            states = []
            for px, py, vx, vy, e11, e12, e22 in obj["states"]:
                states.append(ObjectState([px, vx, py, vy],
                                          [[e11, e12], [e12, e22]]))
            ident = obj["id"]
            if isinstance(ident, list):
                ident = tuple(ident)
            records.append(TrajectoryRecord(int(obj["start"]), states,
                                            id=ident))
    return records


def write_frames_csv(path, frames) -> None:
    """Measurement frames as CSV rows (step,x,y); empty steps leave no rows."""
    lines = ["step,x,y"]
    for k, frame in enumerate(frames, start=1):
        for z in np.asarray(frame):
            lines.append(f"{k},{float(z[0])!r},{float(z[1])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_frames_csv(path, k_steps: int | None = None) -> list:
    """Rebuild the frame list; k_steps pads trailing empty frames back in."""
    by_step: dict[int, list] = {}
    last = 0
    with open(path) as fh:
        next(fh)
        for line in fh:
            if not line.strip():
                continue
            step_s, x_s, y_s = line.strip().split(",")
            step = int(step_s)
            by_step.setdefault(step, []).append([float(x_s), float(y_s)])
            last = max(last, step)
    if k_steps is None:
        k_steps = last
    frames = []
    for k in range(1, k_steps + 1):
        rows = by_step.get(k)
        frames.append(np.array(rows) if rows else np.zeros((0, 2)))
    return frames


def aggregate_to_dict(result: MonteCarloResult) -> dict:
    cells = []
    for agg in result.aggregates:
        cells.append({
            "variant": agg.variant,
            "gamma": agg.gamma,
            "runs": agg.n_runs,
            "totals": agg.totals,
            "smoothing": agg.smoothing,
            "runtime": {"mean": agg.runtime_mean,
                        "stddev": agg.runtime_stddev},
            "mean_series": [[float(v) for v in row]
                            for row in agg.mean_series],
        })
    return {"partial": result.partial, "failures": result.failures,
            "aggregates": cells}


def write_aggregate_json(path, result: MonteCarloResult) -> None:
    with open(path, "w") as fh:
        json.dump(aggregate_to_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
