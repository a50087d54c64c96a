"""Command line interface.

Staged pipeline on the Darcy or Poisson problem of the configured experiment::

    funcp generate --experiment poisson_quantile --out run/
    funcp fit --experiment poisson_quantile --out run/
    funcp calibrate --experiment poisson_quantile --out run/
    funcp evaluate --experiment poisson_quantile --out run/

Whole experiments: ``funcp report`` (any experiment), ``funcp forecast``
(``ns_forecast``) and ``funcp sweep`` (``superres``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .conformal import calibrate as calibrate_scores
from .conformal import coverage, nonconformity_scores
from .errors import ExperimentError, FormatError, InvalidArgumentError
from .harness.config import EXPERIMENTS, OUTPUT_ROOT_ENV, SCHEMA, load_config
from .harness.experiments import (
    NSForecastModel,
    Table,
    problem_for,
    run_experiment,
    stage,
    write_manifest,
    write_table,
)
from .harness.fileformat import read_dataset, read_operators, write_dataset, write_operators
from .harness.problems import Surrogate, TripletSurrogate
from .intervals import adjust_quantile_bounds
from .surrogates import TripletPredictor

__all__ = ["main", "build_parser"]

logger = logging.getLogger("funcp")

COMMANDS = {
    "generate": "sample train/cal/test datasets and write FCPD files",
    "fit": "fit the surrogate on train.fcpd and write operator.fcpo",
    "calibrate": "score cal.fcpd and write the conformal threshold",
    "evaluate": "score test.fcpd against the calibrated threshold",
    "forecast": "run the autoregressive forecast experiment",
    "sweep": "run the super-resolution sweep",
    "report": "run the configured experiment end to end",
}

_FIXED = {"forecast": "ns_forecast", "sweep": "superres"}


def _flag(section, key):
    return f"--{section}-{key.replace('_', '-')}"


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("general")
    g.add_argument("--config", help="INI-style configuration file")
    g.add_argument("--experiment", dest="run.experiment", choices=EXPERIMENTS, default=argparse.SUPPRESS)
    g.add_argument("--seed", dest="run.seed", metavar="SEED", default=argparse.SUPPRESS, help="base random seed")
    g.add_argument("--alpha", dest="run.alpha", metavar="ALPHA", default=argparse.SUPPRESS, help="significance level")
    g.add_argument(
        "--out", dest="run.out", metavar="DIR", default=argparse.SUPPRESS, help=f"output directory (default from ${OUTPUT_ROOT_ENV})"
    )
    g.add_argument("-v", "--verbose", action="store_true")
    for section, keys in SCHEMA.items():
        sg = p.add_argument_group(f"[{section}]")
        for key, (_, default, text) in keys.items():
            suffix = "" if default is None else f" (default {default})"
            sg.add_argument(
                _flag(section, key),
                dest=f"{section}.{key}",
                metavar=key.upper(),
                default=argparse.SUPPRESS,
                help=text + suffix,
            )
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funcp", description="Conformal calibration experiments on PDE surrogates.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()
    for name, text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _config_from_args(args):
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    fixed = _FIXED.get(args.command)
    if fixed:
        if overrides.get("run.experiment", fixed) != fixed:
            raise InvalidArgumentError(f"'{args.command}' always runs the {fixed} experiment")
        overrides["run.experiment"] = fixed
    return load_config(args.config, overrides)


def _staged_problem(cfg):
    if cfg.run.experiment not in ("darcy_mc", "poisson_quantile", "grid_ablation", "volume_ablation"):
        raise InvalidArgumentError(f"staged commands do not apply to {cfg.run.experiment}; use 'report'")
    return problem_for(cfg)


def cmd_generate(cfg, out):
    files = []
    if cfg.run.experiment == "ns_forecast":
        f = cfg.forecast
        with stage("generate"):
            model = NSForecastModel(cfg)
            pairs = []
            for j in range(f.trajectories):
                traj = model.truth(j, f.steps)
                pairs.extend(zip(traj[:-1], traj[1:]))
            path = os.path.join(out, "trajectories.fcpd")
            write_dataset(path, model.grid, pairs)
        return [path]
    problem = _staged_problem(cfg)
    d = cfg.data
    grid = problem.grid(d.resolution, d.geometry)
    with stage("generate"):
        for split, n in (("train", d.n_train), ("cal", d.n_cal), ("test", d.n_test)):
            path = os.path.join(out, f"{split}.fcpd")
            write_dataset(path, grid, problem.dataset(grid, split, n))
            files.append(path)
    return files


def _load_ops(cfg, out):
    problem = _staged_problem(cfg)
    with stage("load"):
        ops = read_operators(os.path.join(out, "operator.fcpo"))
    if len(ops) == 3:
        return problem, ops, TripletSurrogate(problem, TripletPredictor(ops[0], ops[1], ops[2], cfg.surrogate.q_lo, cfg.surrogate.q_hi))
    return problem, ops, Surrogate(problem, ops[0])


def cmd_fit(cfg, out):
    problem = _staged_problem(cfg)
    s = cfg.surrogate
    with stage("load"):
        _, train = read_dataset(os.path.join(out, "train.fcpd"))
    with stage("fit"):
        if cfg.run.experiment == "poisson_quantile":
            t = TripletSurrogate.fit(problem, train, s.modes, s.ridge, s.q_lo, s.q_hi, s.steps, s.step_size).triplet
            ops = [t.lo, t.mid, t.hi]
        else:
            ops = [Surrogate.fit(problem, train, s.modes, s.ridge).op]
        path = os.path.join(out, "operator.fcpo")
        write_operators(path, ops)
    return [path]


def _predict_mid(model, inputs):
    if isinstance(model, TripletSurrogate):
        return [mid for _, mid, _ in model.predict_many(inputs)]
    return model.predict_many(inputs)


def cmd_calibrate(cfg, out):
    _, _, model = _load_ops(cfg, out)
    with stage("load"):
        _, cal = read_dataset(os.path.join(out, "cal.fcpd"))
    with stage("calibrate"):
        preds = _predict_mid(model, [x for x, _ in cal])
        c = calibrate_scores(nonconformity_scores(zip(preds, (y for _, y in cal))), cfg.run.alpha)
    table = Table(
        "calibration", ("alpha", "n", "k_index", "tau", "conservative"), ((c.alpha, c.n, c.k_index, c.tau, c.conservative),)
    )
    return [write_table(out, table)]


def _read_tau(out) -> float:
    path = os.path.join(out, "calibration.csv")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1 or "tau" not in rows[0]:
        raise FormatError(f"{path} does not hold a single calibration row", 0)
    return float(rows[0]["tau"])


def cmd_evaluate(cfg, out):
    _, _, model = _load_ops(cfg, out)
    with stage("load"):
        tau = _read_tau(out)
        _, test = read_dataset(os.path.join(out, "test.fcpd"))
    with stage("evaluate"):
        inputs = [x for x, _ in test]
        bounds = None
        if isinstance(model, TripletSurrogate):
            trip = model.predict_many(inputs)
            preds = [m for _, m, _ in trip]
            if np.isfinite(tau):
                bounds = [adjust_quantile_bounds(lo, mid, hi, tau) for lo, mid, hi in trip]
        else:
            preds = model.predict_many(inputs)
        rep = coverage(list(zip(preds, (y for _, y in test))), tau, bounds, alpha=cfg.run.alpha)
    table = Table(
        "evaluation",
        ("tau", "functional", "pointwise", "n_functions", "n_points", "tv_lower_bound"),
        ((tau, rep.functional, rep.pointwise, rep.n_functions, rep.n_points, rep.tv_lower_bound),),
    )
    return [write_table(out, table)]


_STAGED = {"generate": cmd_generate, "fit": cmd_fit, "calibrate": cmd_calibrate, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command in _STAGED:
            out = cfg.output_dir()
            os.makedirs(out, exist_ok=True)
            files = _STAGED[args.command](cfg, out)
            write_manifest(out, cfg, files, args.command)
        else:
            result = run_experiment(cfg, command=args.command)
            out, files = result.out_dir, list(result.files.values())
    except InvalidArgumentError as exc:
        print(f"funcp: error: {exc}", file=sys.stderr)
        return 2
    except (ExperimentError, FormatError, OSError) as exc:
        print(f"funcp: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
