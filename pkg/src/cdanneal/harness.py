"""Experiment orchestration: seeded runs, diagnostics, persistence.

A run is a grid of cells (sample size, chain steps, replicate seed).  Each
cell samples data, runs the guarded CD iteration, measures the tail error
of the weighted average and, when requested, re-verifies the per-step
drift, super-martingale and bias bounds exactly.  All outputs are plain
CSV and JSON written with round-trip float formatting, so a rerun with the
same configuration and master seed is byte identical.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .diagnostics import (
    BiasGridReport,
    DriftReport,
    MartingaleReport,
    OccupancyReport,
    bias_bound_grid,
    drift_report,
    martingale_report,
    occupancy_report,
    rate_fit,
)
from .kernel import m_step_stat_table
from .learner import (
    RNG_STREAM_DATA,
    Schedule,
    TailDistance,
    Trajectory,
    delta_n,
    run_cd,
    weighted_average_series,
)
from .model import FiniteExpFamily, ParamBox, identifiability_report, mean_parameter
from .oracle import (
    MleNonexistenceError,
    SampleChecks,
    TheoryConstants,
    assemble_constants,
    check_constraint_empirical_process,
    check_constraint_mle,
    compute_grid_bounds,
    mle,
    sample_iid,
)

__all__ = [
    "DiagnoseResult",
    "ExperimentResult",
    "RateSweepResult",
    "diagnose_run",
    "rate_sweep",
    "run_experiment",
    "verify_assumptions",
]

RATE_SLOPE_BAND = (-0.60, -0.15)
SLOPE_GAP_TOL = 0.15
OCCUPANCY_TOL = 0.05


# ----------------------------------------------------------------------
# deterministic formatting
# ----------------------------------------------------------------------


def _fmt(value) -> str:
    return repr(float(value))


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _scrub(value):
    """Make floats JSON-safe (inf/nan become strings) recursively."""
    if isinstance(value, dict):
        return {k: _scrub(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_scrub(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [_scrub(v) for v in value.tolist()]
    return value


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ----------------------------------------------------------------------
# cell execution
# ----------------------------------------------------------------------


@dataclass
class CellTask:
    fam: FiniteExpFamily
    box: ParamBox
    schedule: Schedule
    items: np.ndarray
    data_seed: list
    n: int
    m: int
    replicate: int
    master_seed: int
    steps: int
    burn_in: int
    theta_init: np.ndarray | None
    theta_star: np.ndarray
    tail_fraction: float
    constants: TheoryConstants
    checks: SampleChecks | None
    exact_step_checks: bool
    grid: np.ndarray | None
    stat_table: np.ndarray | None
    mean_table: np.ndarray | None

    @property
    def label(self) -> str:
        return f"n{self.n}_m{self.m}_s{self.replicate}"


@dataclass
class CellOutcome:
    label: str
    n: int
    m: int
    replicate: int
    trajectory: Trajectory
    delta: TailDistance
    drift: DriftReport | None
    martingale: MartingaleReport | None
    occupancy: OccupancyReport | None
    bias: BiasGridReport | None
    mle_exists: bool


def _run_cell(task: CellTask) -> CellOutcome:
    traj = run_cd(
        task.fam,
        task.box,
        task.schedule,
        task.items,
        m=task.m,
        steps=task.steps,
        burn_in=task.burn_in,
        master_seed=task.master_seed,
        replicate=task.replicate,
        theta_init=task.theta_init,
        data_id=f"n{task.n}-ms{task.master_seed}-r{task.replicate}",
    )
    delta = delta_n(traj, task.theta_star, task.tail_fraction)
    drift = mart = occ = bias = None
    if task.exact_step_checks and task.checks is not None:
        drift = drift_report(task.fam, task.box, traj, task.items, task.constants, task.checks)
        if task.checks.passed:
            bias = bias_bound_grid(
                task.fam,
                task.items,
                task.constants,
                task.checks,
                task.grid,
                stat_table=task.stat_table,
                mean_table=task.mean_table,
            )
        if task.constants.drift_coeff > 0:
            mart = martingale_report(
                task.fam, task.box, traj, task.items, task.constants, task.checks
            )
            occ = occupancy_report(traj, task.constants, task.checks.mle.theta)
    return CellOutcome(
        label=task.label,
        n=task.n,
        m=task.m,
        replicate=task.replicate,
        trajectory=traj,
        delta=delta,
        drift=drift,
        martingale=mart,
        occupancy=occ,
        bias=bias,
        mle_exists=task.checks is not None,
    )


def _map_tasks(tasks: list[CellTask], workers: int) -> list[CellOutcome]:
    if workers <= 1 or len(tasks) <= 1:
        return [_run_cell(t) for t in tasks]
    with multiprocessing.Pool(processes=workers) as pool:
        return pool.map(_run_cell, tasks)


# ----------------------------------------------------------------------
# output rendering
# ----------------------------------------------------------------------


def _trajectory_csv(traj: Trajectory, theta_star: np.ndarray, mle_theta) -> str:
    d = traj.dim
    header = (
        ["t", "eta_t"]
        + [f"theta_{j + 1}" for j in range(d)]
        + ["boundary_hit"]
        + [f"thetabar_{j + 1}" for j in range(d)]
        + ["dist_to_mle", "dist_to_true"]
    )
    lines = [",".join(header)]
    for t in range(traj.steps + 1):
        row = [str(t), _fmt(traj.etas[t])]
        row += [_fmt(v) for v in traj.thetas[t]]
        row.append(str(int(traj.boundary_hits[t])))
        if t >= traj.burn_in:
            avg = traj.weighted_avgs[t - traj.burn_in]
            row += [_fmt(v) for v in avg]
            row.append(_fmt(np.linalg.norm(avg - mle_theta)) if mle_theta is not None else "nan")
            row.append(_fmt(np.linalg.norm(avg - theta_star)))
        else:
            row += ["nan"] * (d + 2)
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _drift_csv(report: DriftReport) -> str:
    lines = ["t,h,lhs,rhs,slack,in_layer,in_ball"]
    slack = report.slack
    for i in range(len(report.t)):
        lines.append(
            ",".join(
                [
                    str(int(report.t[i])),
                    _fmt(report.h[i]),
                    _fmt(report.lhs[i]),
                    _fmt(report.rhs[i]),
                    _fmt(slack[i]),
                    str(int(report.in_layer[i])),
                    str(int(report.in_ball[i])),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _martingale_csv(report: MartingaleReport) -> str:
    lines = ["t,increment_out,increment_in,active_out,active_in,cond_mean_out,cond_mean_in"]
    for i in range(len(report.t)):
        cond_out = report.cond_mean_out[i] if report.cond_mean_out is not None else float("nan")
        cond_in = report.cond_mean_in[i] if report.cond_mean_in is not None else float("nan")
        lines.append(
            ",".join(
                [
                    str(int(report.t[i])),
                    _fmt(report.increment_out[i]),
                    _fmt(report.increment_in[i]),
                    str(int(report.active_out[i])),
                    str(int(report.active_in[i])),
                    _fmt(cond_out),
                    _fmt(cond_in),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _diagnostic_entries(outcome: CellOutcome) -> list[dict]:
    entries = []
    if outcome.drift is not None:
        entries.append(
            {
                "check": "drift",
                "steps": len(outcome.drift.t),
                "violations": outcome.drift.violations,
                "worst_slack": outcome.drift.worst_slack,
                "hypotheses_met": outcome.drift.hypotheses_met,
            }
        )
    else:
        entries.append(
            {
                "check": "drift",
                "steps": 0,
                "violations": 0,
                "worst_slack": None,
                "hypotheses_met": False,
                "reason": "skipped" if outcome.mle_exists else "mle does not exist",
            }
        )
    if outcome.bias is not None:
        entries.append(
            {
                "check": "bias_bound",
                "steps": len(outcome.bias.lhs),
                "violations": outcome.bias.violations,
                "worst_slack": outcome.bias.worst_slack,
                "hypotheses_met": True,
            }
        )
    else:
        entries.append(
            {
                "check": "bias_bound",
                "steps": 0,
                "violations": 0,
                "worst_slack": None,
                "hypotheses_met": False,
                "reason": "sample constraints unverified or skipped",
            }
        )
    for which, label in (("out", "martingale_outside_ball"), ("in", "martingale_inside")):
        if outcome.martingale is not None:
            report = outcome.martingale
            cond = report.cond_mean_out if which == "out" else report.cond_mean_in
            active = report.active_out if which == "out" else report.active_in
            worst = None
            if cond is not None and bool(np.any(active)):
                # slack is the negated conditional mean; positive means healthy.
                worst = float(-np.max(cond[active]))
            entries.append(
                {
                    "check": label,
                    "steps": int(np.sum(active)),
                    "violations": report.violations_out if which == "out" else report.violations_in,
                    "worst_slack": worst,
                    "hypotheses_met": report.hypotheses_met,
                }
            )
        else:
            entries.append(
                {
                    "check": label,
                    "steps": 0,
                    "violations": 0,
                    "worst_slack": None,
                    "hypotheses_met": False,
                    "reason": "drift coefficient not positive or skipped",
                }
            )
    if outcome.occupancy is not None:
        occ = outcome.occupancy
        entries.append(
            {
                "check": "occupancy",
                "steps": outcome.trajectory.steps + 1,
                "violations": 0 if occ.passes(OCCUPANCY_TOL) else 1,
                "worst_slack": occ.fraction_tail_min - occ.threshold,
                "hypotheses_met": True,
                "threshold": occ.threshold,
                "fraction_full": occ.fraction_full,
                "fraction_tail_min": occ.fraction_tail_min,
            }
        )
    else:
        entries.append(
            {
                "check": "occupancy",
                "steps": 0,
                "violations": 0,
                "worst_slack": None,
                "hypotheses_met": False,
                "reason": "drift coefficient not positive or skipped",
            }
        )
    return entries


def _meta_dict(config: RunConfig, master_seed: int, task: CellTask, outcome: CellOutcome) -> dict:
    checks = task.checks
    meta = {
        "n": task.n,
        "m": task.m,
        "replicate": task.replicate,
        "master_seed": master_seed,
        "data_seed": list(task.data_seed),
        "data_id": outcome.trajectory.data_id,
        "iterations": task.steps,
        "burn_in": task.burn_in,
        "gamma": config.gamma,
        "tail_fraction": config.tail_fraction,
        "half_width": config.half_width,
        "theta_star": [float(v) for v in task.theta_star],
        "model": config.model,
        "schedule": {
            "kind": task.schedule.kind,
            "eta0": task.schedule.eta0,
            "exponent": task.schedule.exponent,
        },
        "delta_tail_max": outcome.delta.tail_max,
        "delta_final": outcome.delta.final,
        "boundary_hit_count": int(np.sum(outcome.trajectory.boundary_hits)),
        "tail_boundary_hits": int(
            np.sum(outcome.trajectory.boundary_hits[outcome.delta.window_start :])
        ),
        "constants": task.constants.to_dict(),
    }
    if checks is None:
        meta["mle"] = None
        meta["sample_checks"] = None
    else:
        meta["mle"] = {
            "theta": [float(v) for v in checks.mle.theta],
            "residual": checks.mle.residual,
            "clipped": checks.mle.clipped,
        }
        meta["sample_checks"] = {
            "mle_constraint": {
                "passed": checks.mle_check.passed,
                "statistic": checks.mle_check.statistic,
                "bound": checks.mle_check.bound,
                "margin": checks.mle_check.margin,
            },
            "empirical_constraint": {
                "passed": checks.empirical_check.passed,
                "statistic": checks.empirical_check.statistic,
                "bound": checks.empirical_check.bound,
                "margin": checks.empirical_check.margin,
            },
            "passed": checks.passed,
        }
    return meta


_SVG_COLORS = ["#d1495b", "#00798c", "#edae49", "#6a4c93", "#2e6f40", "#8c5e58"]


def _svg_chart(series: list[tuple[str, np.ndarray, np.ndarray]]) -> str:
    """Minimal line chart of log10 distances against iteration."""
    width, height, pad = 640, 400, 45
    xs_all = np.concatenate([s[1] for s in series])
    ys_all = np.log10(np.maximum(np.concatenate([s[2] for s in series]), 1e-8))
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if y_hi - y_lo < 1e-9:
        y_hi = y_lo + 1.0

    def sx(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
        'stroke="#444" stroke-width="1"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        'stroke="#444" stroke-width="1"/>',
        f'<text x="{width // 2}" y="{height - 8}" font-size="12" text-anchor="middle">'
        "iteration t</text>",
        f'<text x="14" y="{height // 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height // 2})">log10 distance of weighted average'
        "</text>",
    ]
    for i, (label, xs, ys) in enumerate(series):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        pts = " ".join(
            f"{sx(float(x)):.2f},{sy(float(np.log10(max(y, 1e-8)))):.2f}"
            for x, y in zip(xs, ys)
        )
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{width - pad + 4}" y="{pad + 14 * i + 10}" font-size="11" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


@dataclass
class ExperimentResult:
    out_dir: Path
    deltas: dict
    constants: dict
    outcomes: list


def _prepare_out_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _build_tasks(
    config: RunConfig, master_seed: int, exact_checks: bool
) -> tuple[list[CellTask], dict, FiniteExpFamily, ParamBox, np.ndarray]:
    fam = config.build_family()
    box = config.build_box()
    theta_star = np.asarray(config.theta_star, dtype=float)
    theta_init = None if config.theta_init is None else np.asarray(config.theta_init, dtype=float)
    grid = box.grid(config.grid_per_axis)
    bounds = compute_grid_bounds(fam, box, theta_star, config.grid_per_axis)
    mean_table = np.stack([mean_parameter(fam, t) for t in grid])
    stat_tables = {int(m): m_step_stat_table(fam, grid, int(m)) for m in config.m_values}
    constants = {
        (int(n), int(m)): assemble_constants(fam, box, bounds, int(m), int(n), config.gamma)
        for n in config.n_values
        for m in config.m_values
    }

    tasks = []
    for n in sorted(int(v) for v in config.n_values):
        for rep in sorted(int(s) for s in config.seeds):
            data_seed = [master_seed, rep, n, RNG_STREAM_DATA]
            data = sample_iid(fam, theta_star, n, seed=data_seed)
            try:
                mle_result = mle(fam, data, box)
            except MleNonexistenceError:
                mle_result = None
            for m in sorted(int(v) for v in config.m_values):
                checks = None
                if mle_result is not None:
                    checks = SampleChecks(
                        mle=mle_result,
                        mle_check=check_constraint_mle(
                            fam, data, theta_star, config.gamma, box, mle_result=mle_result
                        ),
                        empirical_check=check_constraint_empirical_process(
                            fam,
                            data,
                            theta_star,
                            m,
                            config.gamma,
                            grid,
                            stat_table=stat_tables[m],
                        ),
                        gamma=config.gamma,
                        m=m,
                    )
                tasks.append(
                    CellTask(
                        fam=fam,
                        box=box,
                        schedule=config.schedule,
                        items=data.items,
                        data_seed=data_seed,
                        n=n,
                        m=m,
                        replicate=rep,
                        master_seed=master_seed,
                        steps=int(config.iterations),
                        burn_in=int(config.burn_in),
                        theta_init=theta_init,
                        theta_star=theta_star,
                        tail_fraction=float(config.tail_fraction),
                        constants=constants[(n, m)],
                        checks=checks,
                        exact_step_checks=exact_checks,
                        grid=grid if exact_checks else None,
                        stat_table=stat_tables[m] if exact_checks else None,
                        mean_table=mean_table if exact_checks else None,
                    )
                )
    return tasks, constants, fam, box, theta_star


def run_experiment(
    config: RunConfig,
    out_dir,
    master_seed: int = 0,
    workers: int = 1,
    svg: bool = False,
) -> ExperimentResult:
    """Run the full cell grid and persist trajectories, diagnostics and plots."""
    config.validate()
    if master_seed < 0:
        raise ConfigError("master seed must be nonnegative")
    out = _prepare_out_dir(out_dir)
    _write(out / "config.json", _json_text({"config": config.to_dict(), "master_seed": master_seed}))

    tasks, constants, fam, box, theta_star = _build_tasks(
        config, master_seed, config.exact_step_checks
    )
    outcomes = _map_tasks(tasks, workers)

    deltas: dict = {}
    for task, outcome in zip(tasks, outcomes):
        cell_dir = out / "cells" / outcome.label
        mle_theta = task.checks.mle.theta if task.checks is not None else None
        _write(cell_dir / "trajectory.csv", _trajectory_csv(outcome.trajectory, theta_star, mle_theta))
        _write(cell_dir / "meta.json", _json_text(_scrub(_meta_dict(config, master_seed, task, outcome))))
        if outcome.drift is not None:
            _write(cell_dir / "drift.csv", _drift_csv(outcome.drift))
        if outcome.martingale is not None:
            _write(cell_dir / "martingale.csv", _martingale_csv(outcome.martingale))
        _write(cell_dir / "diagnostics.json", _json_text(_scrub(_diagnostic_entries(outcome))))
        deltas.setdefault((outcome.n, outcome.m), {})[outcome.replicate] = outcome.delta.tail_max

    _write_constraint_report(out, tasks)
    _write_plot_data(out, config, outcomes, theta_star, constants, deltas)
    if svg:
        series = []
        for n in sorted(int(v) for v in config.n_values):
            for m in sorted(int(v) for v in config.m_values):
                cell = [o for o in outcomes if o.n == n and o.m == m]
                ts = np.arange(cell[0].trajectory.burn_in, cell[0].trajectory.steps + 1)
                dists = np.median(
                    np.stack(
                        [
                            np.linalg.norm(o.trajectory.weighted_avgs - theta_star, axis=1)
                            for o in cell
                        ]
                    ),
                    axis=0,
                )
                series.append((f"n={n} m={m}", ts, dists))
        _write(out / "plots" / "convergence.svg", _svg_chart(series))
    return ExperimentResult(out_dir=out, deltas=deltas, constants=constants, outcomes=outcomes)


def _write_constraint_report(out: Path, tasks: list[CellTask]) -> None:
    lines = ["seed,n,m,check,pass,margin"]
    for task in tasks:
        for name, check in (
            ("mle_deviation", None if task.checks is None else task.checks.mle_check),
            ("empirical_process", None if task.checks is None else task.checks.empirical_check),
        ):
            passed = "0" if check is None else str(int(check.passed))
            margin = "nan" if check is None else _fmt(check.margin)
            lines.append(
                ",".join([str(task.replicate), str(task.n), str(task.m), name, passed, margin])
            )
    _write(out / "constraint_checks.csv", "\n".join(lines) + "\n")


def _write_plot_data(out, config, outcomes, theta_star, constants, deltas) -> None:
    for n in sorted(int(v) for v in config.n_values):
        for m in sorted(int(v) for v in config.m_values):
            cell = [o for o in outcomes if o.n == n and o.m == m]
            reps = [o.replicate for o in cell]
            header = "t," + ",".join(f"s{r}" for r in reps)
            lines = [header]
            burn_in = cell[0].trajectory.burn_in
            steps = cell[0].trajectory.steps
            dist = np.stack(
                [np.linalg.norm(o.trajectory.weighted_avgs - theta_star, axis=1) for o in cell]
            )
            for k, t in enumerate(range(burn_in, steps + 1)):
                lines.append(str(t) + "," + ",".join(_fmt(v) for v in dist[:, k]))
            _write(out / "plots" / f"avg_distance_n{n}_m{m}.csv", "\n".join(lines) + "\n")

    lines = ["n,m,median_delta,q25,q75,rate_bound,coverage"]
    for (n, m) in sorted(deltas):
        values = np.array([deltas[(n, m)][r] for r in sorted(deltas[(n, m)])])
        consts = constants[(n, m)]
        bound = consts.rate_bound(n)
        coverage = float(np.mean(values < bound))
        lines.append(
            ",".join(
                [
                    str(n),
                    str(m),
                    _fmt(np.median(values)),
                    _fmt(np.quantile(values, 0.25)),
                    _fmt(np.quantile(values, 0.75)),
                    _fmt(bound),
                    _fmt(coverage),
                ]
            )
        )
    _write(out / "plots" / "delta_vs_n.csv", "\n".join(lines) + "\n")


def verify_assumptions(config: RunConfig, out_dir=None) -> dict:
    """Compute the model, kernel and schedule assumption report.

    Failures appear as report entries rather than errors, so the report is
    always produced for a valid configuration.
    """
    config.validate()
    fam = config.build_family()
    box = config.build_box()
    theta_star = np.asarray(config.theta_star, dtype=float)
    bounds = compute_grid_bounds(fam, box, theta_star, config.grid_per_axis)
    ident = identifiability_report(fam, box)
    annealing_ok, reason = config.schedule.annealing_verdict()
    constants = {
        (int(n), int(m)): assemble_constants(fam, box, bounds, int(m), int(n), config.gamma)
        for n in config.n_values
        for m in config.m_values
    }
    any_constants = next(iter(constants.values()))
    report = {
        "stat_bound": fam.stat_bound,
        "dim": fam.dim,
        "n_states": fam.n_states,
        "identifiability": {
            "min_eigenvalue": ident.min_eigenvalue,
            "ok": ident.ok,
            "probes": ident.n_probes,
        },
        "grid_bounds": {
            "min_fisher_eig": bounds.min_fisher_eig,
            "divergence_lipschitz": bounds.divergence_lipschitz,
            "mixing_bound": bounds.mixing_bound,
            "kernel_lipschitz": bounds.kernel_lipschitz,
            "per_axis": bounds.grid_per_axis,
            "half_width": bounds.half_width,
        },
        "schedule": {
            "kind": config.schedule.kind,
            "eta0": config.schedule.eta0,
            "exponent": config.schedule.exponent,
            "annealing_ok": annealing_ok,
            "reason": reason,
        },
        "smallest_admissible_m": any_constants.smallest_admissible_m,
        "constants": [constants[key].to_dict() for key in sorted(constants)],
    }
    if out_dir is not None:
        out = _prepare_out_dir(out_dir)
        _write(out / "assumptions.json", _json_text(_scrub(report)))
        for (n, m), consts in sorted(constants.items()):
            _write(out / "constants" / f"constants_n{n}_m{m}.json", _json_text(_scrub(consts.to_dict())))
    return report


@dataclass
class RateSweepResult:
    out_dir: Path
    fits: dict
    deltas: dict
    ok: bool
    verdict: dict


def rate_sweep(config: RunConfig, out_dir, master_seed: int = 0, workers: int = 1) -> RateSweepResult:
    """Run the cell grid, fit log median tail error against log n, and judge it.

    The sweep needs at least three sample sizes and ten seeds.  The verdict
    requires, for every chain length m: strictly decreasing medians, a fitted
    slope inside RATE_SLOPE_BAND, and across chain lengths a slope spread
    below SLOPE_GAP_TOL.
    """
    config.validate()
    if len(set(int(n) for n in config.n_values)) < 3:
        raise ConfigError("rate sweep needs at least 3 distinct sample sizes")
    if len(config.seeds) < 10:
        raise ConfigError("rate sweep needs at least 10 seeds")
    run = run_experiment(config, out_dir, master_seed=master_seed, workers=workers)
    out = run.out_dir

    fits = {}
    verdict = {"per_m": {}, "slope_gap": None, "ok": False}
    slopes = {}
    for m in sorted(int(v) for v in config.m_values):
        deltas_by_n = {
            n: np.array([run.deltas[(n, m)][r] for r in sorted(run.deltas[(n, m)])])
            for n in sorted(int(v) for v in config.n_values)
        }
        coeffs = {n: run.constants[(n, m)].rate_coeff for n in deltas_by_n}
        fit = rate_fit(deltas_by_n, rate_coeffs=coeffs, gamma=config.gamma)
        fits[m] = fit
        slopes[m] = fit.slope
        medians = fit.medians
        monotone = bool(np.all(np.diff(medians) < 0))
        in_band = RATE_SLOPE_BAND[0] <= fit.slope <= RATE_SLOPE_BAND[1]
        verdict["per_m"][m] = {
            "slope": fit.slope,
            "monotone_medians": monotone,
            "slope_in_band": in_band,
            "medians": {int(n): float(v) for n, v in zip(fit.sizes, medians)},
            "coverage": fit.coverage,
        }
    gap = max(slopes.values()) - min(slopes.values()) if len(slopes) > 1 else 0.0
    verdict["slope_gap"] = gap
    verdict["ok"] = all(
        v["monotone_medians"] and v["slope_in_band"] for v in verdict["per_m"].values()
    ) and gap < SLOPE_GAP_TOL

    lines = ["n,m,median_delta,rate_bound,coverage"]
    for m in sorted(fits):
        fit = fits[m]
        for n, med in zip(fit.sizes, fit.medians):
            bound = run.constants[(int(n), m)].rate_bound(int(n))
            lines.append(
                ",".join(
                    [
                        str(int(n)),
                        str(m),
                        _fmt(med),
                        _fmt(bound),
                        _fmt(fit.coverage["per_size"][int(n)]),
                    ]
                )
            )
    _write(out / "rate" / "rate_summary.csv", "\n".join(lines) + "\n")
    fit_doc = {
        str(m): {
            "slope": fits[m].slope,
            "intercept": fits[m].intercept,
            "medians": {str(int(n)): float(v) for n, v in zip(fits[m].sizes, fits[m].medians)},
            "residuals": [float(r) for r in fits[m].residuals],
            "converging": fits[m].converging,
            "coverage": fits[m].coverage,
        }
        for m in sorted(fits)
    }
    fit_doc["verdict"] = verdict
    _write(out / "rate" / "rate_fit.json", _json_text(_scrub(fit_doc)))
    return RateSweepResult(out_dir=out, fits=fits, deltas=run.deltas, ok=verdict["ok"], verdict=verdict)


# ----------------------------------------------------------------------
# diagnose: recheck stored trajectories
# ----------------------------------------------------------------------


@dataclass
class DiagnoseResult:
    out_dir: Path
    cells: list
    ok: bool


def _read_trajectory_csv(path: Path, burn_in: int) -> Trajectory:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    dim = sum(1 for name in header if name.startswith("theta_"))
    idx = {name: i for i, name in enumerate(header)}
    thetas = np.array([[float(r[idx[f"theta_{j + 1}"]]) for j in range(dim)] for r in rows])
    etas = np.array([float(r[idx["eta_t"]]) for r in rows])
    hits = np.array([bool(int(r[idx["boundary_hit"]])) for r in rows])
    return Trajectory(
        thetas=thetas,
        etas=etas,
        boundary_hits=hits,
        weighted_avgs=weighted_average_series(thetas, etas, burn_in),
        burn_in=burn_in,
        m=0,
        n=0,
        master_seed=0,
        replicate=0,
    )


def diagnose_run(out_dir) -> DiagnoseResult:
    """Re-run the exact per-step checks against trajectories stored on disk.

    Data samples are regenerated from the recorded seeds, the constants and
    sample constraints recomputed, and fresh diagnostics written next to
    each trajectory.  A cell fails when any hypothesis-met check records a
    violation.
    """
    out = Path(out_dir)
    config_path = out / "config.json"
    if not config_path.exists():
        raise ConfigError(f"no config.json under {out}")
    with open(config_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    config = RunConfig.from_dict(doc["config"])
    master_seed = int(doc.get("master_seed", 0))

    fam = config.build_family()
    box = config.build_box()
    theta_star = np.asarray(config.theta_star, dtype=float)
    grid = box.grid(config.grid_per_axis)
    bounds = compute_grid_bounds(fam, box, theta_star, config.grid_per_axis)
    mean_table = np.stack([mean_parameter(fam, t) for t in grid])
    stat_tables: dict = {}

    cell_dirs = sorted((out / "cells").glob("n*_m*_s*"))
    if not cell_dirs:
        raise ConfigError(f"no cells under {out}")
    cells = []
    all_ok = True
    for cell_dir in cell_dirs:
        with open(cell_dir / "meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        n, m, rep = int(meta["n"]), int(meta["m"]), int(meta["replicate"])
        if m not in stat_tables:
            stat_tables[m] = m_step_stat_table(fam, grid, m)
        traj = _read_trajectory_csv(cell_dir / "trajectory.csv", int(meta["burn_in"]))
        traj.m, traj.n, traj.master_seed, traj.replicate = m, n, master_seed, rep
        data = sample_iid(fam, theta_star, n, seed=meta["data_seed"])
        constants = assemble_constants(fam, box, bounds, m, n, config.gamma)
        try:
            mle_result = mle(fam, data, box)
        except MleNonexistenceError:
            mle_result = None
        checks = None
        if mle_result is not None:
            checks = SampleChecks(
                mle=mle_result,
                mle_check=check_constraint_mle(
                    fam, data, theta_star, config.gamma, box, mle_result=mle_result
                ),
                empirical_check=check_constraint_empirical_process(
                    fam, data, theta_star, m, config.gamma, grid, stat_table=stat_tables[m]
                ),
                gamma=config.gamma,
                m=m,
            )
        drift = mart = occ = bias = None
        if checks is not None:
            drift = drift_report(fam, box, traj, data.items, constants, checks)
            if checks.passed:
                bias = bias_bound_grid(
                    fam, data.items, constants, checks, grid,
                    stat_table=stat_tables[m], mean_table=mean_table,
                )
            if constants.drift_coeff > 0:
                mart = martingale_report(fam, box, traj, data.items, constants, checks)
                occ = occupancy_report(traj, constants, checks.mle.theta)
        outcome = CellOutcome(
            label=cell_dir.name,
            n=n,
            m=m,
            replicate=rep,
            trajectory=traj,
            delta=delta_n(traj, theta_star, config.tail_fraction),
            drift=drift,
            martingale=mart,
            occupancy=occ,
            bias=bias,
            mle_exists=mle_result is not None,
        )
        entries = _diagnostic_entries(outcome)
        _write(cell_dir / "diagnostics.json", _json_text(_scrub(entries)))
        if drift is not None:
            _write(cell_dir / "drift.csv", _drift_csv(drift))
        if mart is not None:
            _write(cell_dir / "martingale.csv", _martingale_csv(mart))
        violations = sum(e["violations"] for e in entries if e.get("hypotheses_met"))
        ok = violations == 0
        all_ok = all_ok and ok
        cells.append({"cell": cell_dir.name, "violations": violations, "ok": ok})
    _write(out / "diagnose_summary.json", _json_text(_scrub({"cells": cells, "ok": all_ok})))
    return DiagnoseResult(out_dir=out, cells=cells, ok=all_ok)
