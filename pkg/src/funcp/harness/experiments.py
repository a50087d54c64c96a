"""Experiment drivers.

Each driver turns a resolved :class:`ExperimentConfig` into a set of tables.
:func:`run_experiment` writes them as CSV files (UTF-8, header row, LF line
endings, floats at full precision) together with ``manifest.json``, which
records the seed, the configuration hash and library versions. Outputs are a
pure function of the configuration: no timestamps, no host names.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import os
import platform
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import scipy

from .. import __version__
from ..conformal import calibrate, coverage, log_volume_score, nonconformity_scores
from ..errors import ExperimentError, InvalidArgumentError
from ..forecast import rollout_diagnostics
from ..grid import Field, GridKind, weighted_norm
from ..intervals import adjust_quantile_bounds, ensemble_mean, mc_envelope
from ..solvers import NSConfig, RandomFieldSpec, ns_advance, sample_grf_2d
from ..transport import extrapolate_tau, fit_log_linear
from .config import ExperimentConfig
from .problems import Problem, Surrogate, TripletSurrogate, make_problem

__all__ = ["Table", "RunResult", "DRIVERS", "run_experiment", "write_table", "write_manifest", "stage"]

GEOMETRIES = (
    ("uniform", GridKind.UNIFORM),
    ("center", GridKind.CLUSTERED_CENTER),
    ("boundary", GridKind.CLUSTERED_BOUNDARY),
)


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def row(self, first: str) -> tuple:
        for r in self.rows:
            if r[0] == first:
                return r
        raise KeyError(first)


@dataclass(frozen=True)
class RunResult:
    out_dir: str
    tables: dict[str, Table]
    files: dict[str, str]


@contextlib.contextmanager
def stage(name: str):
    """Re-raise package errors with the experiment stage attached."""
    try:
        yield
    except ExperimentError:
        raise
    except (ArithmeticError, ValueError, OSError) as exc:
        raise ExperimentError(name, f"{type(exc).__name__}: {exc}") from exc


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "yes" if v else "no"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table_bytes(table: Table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode("utf-8")


def _write_bytes(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_table(out_dir, table: Table) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{table.name}.csv")
    _write_bytes(path, table_bytes(table))
    return path


def versions() -> dict[str, str]:
    return {
        "funcp": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(out_dir, cfg: ExperimentConfig, files, command: str) -> str:
    """Write ``manifest.json`` listing ``files`` with their SHA-256 digests.

    Entries of an existing manifest with the same configuration hash are kept,
    so staged commands accumulate into one manifest.
    """
    path = os.path.join(out_dir, "manifest.json")
    entries = {}
    commands = []
    if os.path.exists(path):
        try:
            with open(path, encoding="utf-8") as fh:
                old = json.load(fh)
            if old.get("config_hash") == cfg.config_hash:
                entries = {e["file"]: e for e in old.get("files", [])}
                commands = list(old.get("commands", []))
        except (OSError, ValueError):
            pass
    for f in files:
        with open(f, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        name = os.path.relpath(f, out_dir)
        entries[name] = {"file": name, "sha256": digest}
    if command not in commands:
        commands.append(command)
    doc = {
        "experiment": cfg.run.experiment,
        "seed": cfg.run.seed,
        "config_hash": cfg.config_hash,
        "config": cfg.canonical_text().splitlines(),
        "commands": commands,
        "versions": versions(),
        "files": [entries[k] for k in sorted(entries)],
    }
    _write_bytes(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return path


# --------------------------------------------------------------------------- shared pieces


def problem_for(cfg: ExperimentConfig, name: str | None = None) -> Problem:
    if name is None:
        if cfg.run.experiment == "darcy_mc":
            name = "darcy"
        elif cfg.run.experiment == "superres":
            name = cfg.sweep.instance
        else:
            name = "poisson"
    d = cfg.data
    return make_problem(name, cfg.run.seed, d.field_modes, d.decay, d.max_wavenumber)


def _split(problem: Problem, grid, cfg: ExperimentConfig):
    d = cfg.data
    with stage("generate"):
        return (
            problem.dataset(grid, "train", d.n_train),
            problem.dataset(grid, "cal", d.n_cal),
            problem.dataset(grid, "test", d.n_test),
        )


def _scores(surrogate: Surrogate, pairs, target=None, weighted=True):
    preds = surrogate.predict_many([x for x, _ in pairs], target)
    return nonconformity_scores(zip(preds, (y for _, y in pairs)), weighted=weighted)


# --------------------------------------------------------------------------- drivers


def darcy_mc(cfg: ExperimentConfig) -> list[Table]:
    """Perturbation ensemble on 1-D Darcy; bounds before and after conditioning on tau."""
    problem = problem_for(cfg, "darcy")
    grid = problem.grid(cfg.data.resolution)
    train, cal, test = _split(problem, grid, cfg)
    s = cfg.surrogate
    with stage("fit"):
        sur = Surrogate.fit(problem, train, s.modes, s.ridge)

    def members(pairs):
        return [sur.ensemble(x, s.members, s.noise_scale, cfg.run.seed) for x, _ in pairs]

    with stage("calibrate"):
        cal_members = members(cal)
        scores = nonconformity_scores((ensemble_mean(m), y) for m, (_, y) in zip(cal_members, cal))
        calib = calibrate(scores, cfg.run.alpha)
    with stage("evaluate"):
        test_members = members(test)
        pairs = [(ensemble_mean(m), y) for m, (_, y) in zip(test_members, test)]
        raw = [mc_envelope(m, conditioned=False)[:2] for m in test_members]
        cond = [mc_envelope(m, calib.tau, conditioned=True) for m in test_members] if np.isfinite(calib.tau) and calib.tau > 0 else None
        rep_raw = coverage(pairs, calib.tau, raw, alpha=cfg.run.alpha)
        if cond is not None:
            rep = coverage(pairs, calib.tau, [c[:2] for c in cond], alpha=cfg.run.alpha)
            kept = float(np.mean([c[2] for c in cond]))
        else:
            rep, kept = rep_raw, float(s.members)
    cols = ("setting", "technique", "scalar", "functional", "pointwise", "mean_kept")
    rows = (
        ("uncalibrated", "perturbation_ensemble", None, None, rep_raw.pointwise, float(s.members)),
        ("calibrated", "perturbation_ensemble", calib.tau, rep.functional, rep.pointwise, kept),
    )
    return [Table("darcy_coverage", cols, rows), _calibration_table(calib)]


def _calibration_table(calib, name="calibration") -> Table:
    return Table(
        name,
        ("alpha", "n", "k_index", "tau", "conservative"),
        ((calib.alpha, calib.n, calib.k_index, calib.tau, calib.conservative),),
    )


def poisson_quantile(cfg: ExperimentConfig) -> list[Table]:
    """Pinball-loss triplet on 2-D Poisson, with bounds rescaled to the conformal radius."""
    problem = problem_for(cfg, "poisson")
    grid = problem.grid(cfg.data.resolution)
    train, cal, test = _split(problem, grid, cfg)
    s = cfg.surrogate
    with stage("fit"):
        tri = TripletSurrogate.fit(problem, train, s.modes, s.ridge, s.q_lo, s.q_hi, s.steps, s.step_size)
    with stage("calibrate"):
        cal_pred = tri.predict_many([x for x, _ in cal])
        calib = calibrate(nonconformity_scores((mid, y) for (_, mid, _), (_, y) in zip(cal_pred, cal)), cfg.run.alpha)
    with stage("evaluate"):
        test_pred = tri.predict_many([x for x, _ in test])
        pairs = [(mid, y) for (_, mid, _), (_, y) in zip(test_pred, test)]
        raw = coverage(pairs, calib.tau, [(lo, hi) for lo, _, hi in test_pred], alpha=cfg.run.alpha)
        adjusted = [adjust_quantile_bounds(lo, mid, hi, calib.tau) for lo, mid, hi in test_pred]
        rep = coverage(pairs, calib.tau, adjusted, alpha=cfg.run.alpha)
    cols = ("setting", "method", "scalar", "functional", "pointwise")
    rows = (
        ("uncalibrated", "pinball_only", None, None, raw.pointwise),
        ("calibrated", "adjusted_bounds", calib.tau, rep.functional, rep.pointwise),
    )
    hist = []
    for head in ("lo", "hi"):
        for i, loss in enumerate(tri.triplet.loss_history[head]):
            hist.append((head, i, loss))
    return [
        Table("poisson_coverage", cols, rows),
        _calibration_table(calib),
        Table("pinball_history", ("head", "checkpoint", "loss"), tuple(hist)),
    ]


class NSForecastModel:
    """Stochastic forecast model: the vorticity solver with a biased viscosity
    plus a smooth random perturbation after every step.

    The perturbation is a Gaussian random field scaled to ``noise`` times the
    weighted norm of the deterministic update; its stream is keyed by
    ``(trajectory, member, step)``.
    """

    def __init__(self, cfg: ExperimentConfig):
        f = cfg.forecast
        self.truth_cfg = NSConfig(
            grid_size=f.grid_size,
            viscosity=f.viscosity,
            forcing_amplitude=f.forcing_amplitude,
            horizon=f.horizon,
            snapshots=f.snapshots,
        )
        self.model_cfg = dataclasses.replace(self.truth_cfg, viscosity=f.viscosity * f.model_viscosity_factor)
        self.interval = self.truth_cfg.snapshot_interval
        self.noise = f.noise
        self.ic_spec = RandomFieldSpec(n_modes=f.ic_modes, amplitude_decay=f.ic_decay, seed=cfg.run.seed)
        self.noise_spec = dataclasses.replace(self.ic_spec, seed=cfg.run.seed ^ 0x5EED)
        self.grid = self.truth_cfg.grid

    def initial(self, trajectory: int) -> Field:
        return sample_grf_2d(self.ic_spec, self.grid, trajectory)

    def truth(self, trajectory: int, steps: int) -> list[Field]:
        """States ``0..steps`` of the reference trajectory."""
        out = [self.initial(trajectory)]
        for _ in range(steps):
            out.append(ns_advance(out[-1], self.truth_cfg, self.interval))
        return out

    def stepper(self, trajectory: int) -> Callable[[int, int, Field], Field]:
        def step(member: int, t: int, state: Field) -> Field:
            nxt = ns_advance(state, self.model_cfg, self.interval)
            if self.noise == 0:
                return nxt
            index = (trajectory << 24) | (member << 12) | t
            pert = sample_grf_2d(self.noise_spec, self.grid, index)
            scale = self.noise * weighted_norm(nxt) / weighted_norm(pert)
            return Field(self.grid, nxt.values + scale * pert.values)

        return step


def ns_forecast(cfg: ExperimentConfig) -> list[Table]:
    """Autoregressive ensemble forecast of 2-D vorticity, diagnosed against a fixed radius.

    The radius is calibrated on one-step errors of single forecasts started
    from true states of the calibration trajectories. Test trajectories are
    then rolled out from their true initial state; the summary table averages
    each metric over test trajectories.
    """
    f = cfg.forecast
    with stage("generate"):
        model = NSForecastModel(cfg)
        truths = [model.truth(j, f.steps) for j in range(f.trajectories)]
    with stage("calibrate"):
        pairs = []
        for j in range(f.cal_trajectories):
            step = model.stepper(j)
            for t in range(f.steps):
                pairs.append((step(0, t + 1, truths[j][t]), truths[j][t + 1]))
        calib = calibrate(nonconformity_scores(pairs), cfg.run.alpha)
    with stage("forecast"):
        runs = []
        for j in range(f.cal_trajectories, f.trajectories):
            runs.append(
                rollout_diagnostics(
                    [truths[j][0]] * f.members, model.stepper(j), f.steps, calib.tau, truths[j][1:]
                )
            )
    metrics = ("mean_distance", "spread", "ia", "ces", "crps")
    avg = {m: np.mean([r.column(m) for r in runs], axis=0) for m in metrics}
    within = avg["mean_distance"] <= calib.tau
    cols = ("metric",) + tuple(f"t={t}" for t in range(1, f.steps + 1))
    rows = [("within_tau",) + tuple(bool(v) for v in within)]
    rows += [(m,) + tuple(float(v) for v in avg[m]) for m in metrics]
    per_step = []
    for j, r in zip(range(f.cal_trajectories, f.trajectories), runs):
        for s in r.steps:
            per_step.append((j, s.t, s.mean_distance, s.spread, s.ces, s.ia, s.crps, s.within_tau))
    return [
        Table("forecast_metrics", cols, tuple(rows)),
        Table(
            "forecast_steps",
            ("trajectory", "t", "mean_distance", "spread", "ces", "ia", "crps", "within_tau"),
            tuple(per_step),
        ),
        _calibration_table(calib),
    ]


def _geometry_study(cfg: ExperimentConfig):
    """Per-geometry calibration and test scores of a surrogate trained on uniform data."""
    problem = problem_for(cfg, "poisson")
    n = cfg.data.resolution
    s = cfg.surrogate
    with stage("generate"):
        train = problem.dataset(problem.grid(n), "train", cfg.data.n_train)
    with stage("fit"):
        sur = Surrogate.fit(problem, train, s.modes, s.ridge)
    out = []
    for label, kind in GEOMETRIES:
        grid = problem.grid(n, kind)
        with stage("generate"):
            cal = problem.dataset(grid, "cal", cfg.data.n_cal)
            test = problem.dataset(grid, "test", cfg.data.n_test)
        with stage("calibrate"):
            res = {}
            for weighted in (False, True):
                c = calibrate(_scores(sur, cal, weighted=weighted), cfg.run.alpha)
                cov = float(np.mean(_scores(sur, test, weighted=weighted) <= c.tau))
                res[weighted] = (c.tau, cov)
        out.append((label, grid, res))
    return out


def grid_ablation(cfg: ExperimentConfig) -> list[Table]:
    """Thresholds from the unweighted and the weighted relative norm on three geometries."""
    study = _geometry_study(cfg)
    rel = np.array([r[False][0] for _, _, r in study])
    wtd = np.array([r[True][0] for _, _, r in study])
    rows = [(label, r[False][0], r[True][0]) for label, _, r in study]
    std = (float(np.std(rel, ddof=1)), float(np.std(wtd, ddof=1)))
    rows.append(("std", *std))
    rows.append(("cv", std[0] / float(np.mean(rel)), std[1] / float(np.mean(wtd))))
    return [Table("grid_thresholds", ("grid", "relative_norm", "weighted_norm"), tuple(rows))]


def volume_ablation(cfg: ExperimentConfig) -> list[Table]:
    """Negative log-volume of the prediction set and test coverage per geometry and norm.

    The unweighted norm gives a ball with unit weights, the weighted norm an
    ellipsoid with the quadrature weights as axis factors.
    """
    study = _geometry_study(cfg)
    rows = []
    for label, grid, res in study:
        for weighted, norm in ((False, "relative"), (True, "weighted")):
            tau, cov = res[weighted]
            w = grid.weights if weighted else np.ones(grid.size)
            rows.append((label, norm, tau, log_volume_score(w, tau), cov))
    return [Table("volume_scores", ("grid", "norm", "tau", "volume_score", "coverage"), tuple(rows))]


def superres(cfg: ExperimentConfig) -> list[Table]:
    """Coverage at super-resolutions with the low-resolution and the transported threshold."""
    problem = problem_for(cfg)
    sw, s, d = cfg.sweep, cfg.surrogate, cfg.data
    with stage("generate"):
        train = problem.dataset(problem.grid(sw.train_resolution), "train", d.n_train)
    with stage("fit"):
        sur = Surrogate.fit(problem, train, s.modes, s.ridge)
    points = []
    with stage("sweep"):
        for r in sw.cal_resolutions:
            cal = problem.dataset(problem.grid(r), "cal", d.n_cal)
            points.append((r, calibrate(_scores(sur, cal), cfg.run.alpha).tau))
        fit = fit_log_linear(points)
    base_r, base_tau = points[0]
    fit_rows = tuple(
        (r, tau, extrapolate_tau(fit, r).tau, float(np.log(tau) - fit.log_tau(r))) for r, tau in points
    )
    rows = []
    with stage("evaluate"):
        for r in sw.test_resolutions:
            scores = _scores(sur, problem.dataset(problem.grid(r), "test", d.n_test))
            adj = extrapolate_tau(fit, r).tau
            rows.append(("unadjusted", problem.name, r, base_tau, float(np.mean(scores <= base_tau))))
            rows.append(("adjusted", problem.name, r, adj, float(np.mean(scores <= adj))))
    fit_info = (("slope", fit.slope), ("intercept", fit.intercept), ("residual_rms", fit.residual_rms))
    return [
        Table("superres_coverage", ("setting", "instance", "resolution", "scalar", "coverage"), tuple(rows)),
        Table("transport_fit", ("resolution", "tau", "fitted_tau", "log_residual"), fit_rows),
        Table("transport_params", ("parameter", "value"), fit_info),
    ]


DRIVERS: dict[str, Callable[[ExperimentConfig], list[Table]]] = {
    "darcy_mc": darcy_mc,
    "poisson_quantile": poisson_quantile,
    "ns_forecast": ns_forecast,
    "grid_ablation": grid_ablation,
    "superres": superres,
    "volume_ablation": volume_ablation,
}


def run_experiment(cfg: ExperimentConfig, command: str = "report") -> RunResult:
    """Run the configured experiment and write its tables and manifest."""
    name = cfg.run.experiment
    if name not in DRIVERS:
        raise InvalidArgumentError(f"unknown experiment {name!r}")
    tables = DRIVERS[name](cfg)
    out_dir = cfg.output_dir()
    with stage("report"):
        files = {t.name: write_table(out_dir, t) for t in tables}
        write_manifest(out_dir, cfg, list(files.values()), command)
    return RunResult(out_dir, {t.name: t for t in tables}, files)
