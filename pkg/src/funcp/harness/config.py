"""Experiment configuration.

Configuration files are INI-style: ``[section]`` headers followed by
``key = value`` lines. Every key in :data:`SCHEMA` can also be set on the
command line as ``--section-key``; keys not in the schema are rejected.
Values left unset fall back to the defaults of the selected experiment
(:data:`PROFILES`), then to the schema defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any, Mapping

from ..errors import InvalidArgumentError

__all__ = [
    "EXPERIMENTS",
    "SCHEMA",
    "PROFILES",
    "OUTPUT_ROOT_ENV",
    "ExperimentConfig",
    "load_config",
    "parse_value",
]

EXPERIMENTS = ("darcy_mc", "poisson_quantile", "ns_forecast", "grid_ablation", "superres", "volume_ablation")

#: Environment variable holding the default output root.
OUTPUT_ROOT_ENV = "FUNCP_OUTPUT_ROOT"


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = [p for p in str(text).replace(",", " ").split() if p]
    return tuple(int(p) for p in parts)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, help)
SCHEMA: dict[str, dict[str, tuple[Any, Any, str]]] = {
    "run": {
        "experiment": (str, "poisson_quantile", "experiment driver: " + ", ".join(EXPERIMENTS)),
        "seed": (int, 0, "base seed of every random stream"),
        "alpha": (float, 0.1, "significance level"),
        "out": (str, None, f"output directory (default ${OUTPUT_ROOT_ENV}/<experiment> or results/<experiment>)"),
    },
    "data": {
        "n_train": (int, None, "training samples"),
        "n_cal": (int, None, "calibration samples"),
        "n_test": (int, None, "test samples"),
        "resolution": (int, None, "cells per axis"),
        "geometry": (str, "uniform", "grid geometry: uniform, center, boundary"),
        "field_modes": (int, 4, "Fourier modes in the random inputs"),
        "decay": (float, 1.0, "spectral decay exponent of the random inputs"),
        "max_wavenumber": (int, 4, "largest wavenumber of 2-D forcing modes"),
    },
    "surrogate": {
        "modes": (int, None, "retained Fourier modes per axis"),
        "ridge": (float, 1e-8, "ridge penalty"),
        "noise_scale": (float, 0.05, "relative coefficient noise of ensemble members"),
        "members": (int, 20, "ensemble members"),
        "q_lo": (float, 0.05, "lower quantile level"),
        "q_hi": (float, 0.95, "upper quantile level"),
        "steps": (int, 300, "pinball descent steps"),
        "step_size": (float, 0.05, "pinball descent step size"),
    },
    "forecast": {
        "trajectories": (int, 20, "trajectories (calibration plus test)"),
        "cal_trajectories": (int, 10, "trajectories used for calibration"),
        "steps": (int, 8, "forecast steps"),
        "members": (int, 10, "ensemble members"),
        "grid_size": (int, 64, "cells per axis (power of two)"),
        "viscosity": (float, 1e-3, "true viscosity"),
        "model_viscosity_factor": (float, 1.5, "viscosity of the forecast model relative to the truth"),
        "noise": (float, 0.02, "relative size of the per-step stochastic perturbation"),
        "ic_modes": (int, 4, "wavenumber cutoff of initial vorticity"),
        "ic_decay": (float, 1.5, "spectral decay of initial vorticity"),
        "forcing_amplitude": (float, 0.1, "amplitude of the fixed forcing"),
        "horizon": (float, 50.0, "simulated time of the full snapshot record"),
        "snapshots": (int, 200, "snapshots over the horizon; one forecast step spans one interval"),
    },
    "sweep": {
        "instance": (str, "poisson", "problem of the super-resolution study: poisson or darcy"),
        "train_resolution": (int, None, "training resolution"),
        "cal_resolutions": (_int_list, None, "calibration resolutions used for the log-linear fit"),
        "test_resolutions": (_int_list, None, "target super-resolutions"),
    },
}

_POISSON = {"data.n_train": 500, "data.n_cal": 100, "data.n_test": 100, "data.resolution": 32, "surrogate.modes": 6}
_DARCY = {"data.n_train": 2000, "data.n_cal": 250, "data.n_test": 250, "data.resolution": 256, "surrogate.modes": 16}

#: Per-experiment defaults, applied before the configuration file.
PROFILES: dict[str, dict[str, Any]] = {
    "darcy_mc": {**_DARCY, "surrogate.noise_scale": 0.3},
    "poisson_quantile": dict(_POISSON),
    "grid_ablation": {**_POISSON, "data.resolution": 64},
    "volume_ablation": {**_POISSON, "data.resolution": 64},
    "superres": {
        **_POISSON,
        "sweep.train_resolution": 32,
        "sweep.cal_resolutions": (36, 40, 44, 48),
        "sweep.test_resolutions": (64, 128),
    },
    "ns_forecast": {},
}

_SUPERRES_DARCY = {
    **_DARCY,
    "data.n_train": 500,
    "data.n_cal": 100,
    "data.n_test": 100,
    "sweep.train_resolution": 64,
    "sweep.cal_resolutions": (72, 80, 88, 96),
    "sweep.test_resolutions": (128, 256),
}


def parse_value(section: str, key: str, raw):
    """Convert ``raw`` (text or value) for ``section.key``."""
    if section not in SCHEMA:
        raise InvalidArgumentError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise InvalidArgumentError(f"unknown key {key!r} in section [{section}]")
    parser = SCHEMA[section][key][0]
    if raw is None:
        return None
    try:
        return _bool(raw) if parser is bool else parser(raw)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration; sections are exposed as attributes."""

    values: Mapping[str, Mapping[str, Any]]

    def __getattr__(self, name):
        if name in SCHEMA:
            return SimpleNamespace(**self.values[name])
        raise AttributeError(name)

    def get(self, dotted: str):
        section, key = dotted.split(".")
        return self.values[section][key]

    def canonical_text(self) -> str:
        """Sorted ``section.key=value`` lines, excluding the output directory."""
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                if (section, key) == ("run", "out"):
                    continue
                lines.append(f"{section}.{key}={self.values[section][key]!r}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def output_dir(self) -> str:
        out = self.values["run"]["out"]
        if out:
            return out
        root = os.environ.get(OUTPUT_ROOT_ENV) or "results"
        return os.path.join(root, self.values["run"]["experiment"])

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with ``section__key=value`` overrides."""
        values = {s: dict(v) for s, v in self.values.items()}
        for name, v in overrides.items():
            section, key = name.split("__", 1)
            values[section][key] = parse_value(section, key, v)
        cfg = ExperimentConfig(values)
        _validate(cfg)
        return cfg


def _read_file(path) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            out[f"{section}.{key}"] = parse_value(section, key, raw)
    return out


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Resolve a configuration.

    Precedence, lowest first: schema defaults, experiment profile, file,
    ``overrides`` (dotted keys such as ``"data.n_train"``, typically from the
    command line).
    """
    explicit = _read_file(path) if path else {}
    for dotted, v in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        explicit[dotted] = parse_value(section, key, v)

    experiment = explicit.get("run.experiment", SCHEMA["run"]["experiment"][1])
    if experiment not in EXPERIMENTS:
        raise InvalidArgumentError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    profile = dict(PROFILES[experiment])
    if experiment == "superres" and explicit.get("sweep.instance", "poisson") == "darcy":
        profile = dict(_SUPERRES_DARCY)

    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    for dotted, v in {**profile, **explicit}.items():
        section, key = dotted.split(".", 1)
        values[section][key] = v
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    run, data, sur, fc = cfg.run, cfg.data, cfg.surrogate, cfg.forecast
    if run.experiment not in EXPERIMENTS:
        raise InvalidArgumentError(f"unknown experiment {run.experiment!r}")
    if not 0.0 < run.alpha < 1.0:
        raise InvalidArgumentError(f"run.alpha must lie in (0, 1), got {run.alpha}")
    for key in ("n_train", "n_cal", "n_test", "resolution"):
        v = getattr(data, key)
        if v is not None and v < 1:
            raise InvalidArgumentError(f"data.{key} must be >= 1, got {v}")
    if sur.members < 1 or fc.members < 1:
        raise InvalidArgumentError("ensembles need at least one member")
    if not 0 < fc.cal_trajectories < fc.trajectories:
        raise InvalidArgumentError("forecast.cal_trajectories must be between 1 and trajectories - 1")
    if cfg.sweep.instance not in ("poisson", "darcy"):
        raise InvalidArgumentError(f"sweep.instance must be poisson or darcy, got {cfg.sweep.instance!r}")
    tr = cfg.sweep.train_resolution
    if run.experiment == "superres":
        cal, test = cfg.sweep.cal_resolutions, cfg.sweep.test_resolutions
        if not cal or len(cal) < 2:
            raise InvalidArgumentError("sweep.cal_resolutions needs at least two resolutions")
        if not test:
            raise InvalidArgumentError("sweep.test_resolutions is empty")
        if tr is None or min(cal) <= tr:
            raise InvalidArgumentError("calibration resolutions must lie above the training resolution")
