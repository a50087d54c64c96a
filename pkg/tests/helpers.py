"""Shared test settings."""

from funcp.harness import load_config

# small settings per experiment, fast enough for unit tests
TINY = {
    "darcy_mc": {"data.n_train": 40, "data.n_cal": 20, "data.n_test": 20, "data.resolution": 32, "surrogate.modes": 6,
                 "surrogate.members": 5},
    "poisson_quantile": {"data.n_train": 80, "data.n_cal": 20, "data.n_test": 10, "data.resolution": 16,
                         "surrogate.modes": 5, "surrogate.steps": 20},
    "ns_forecast": {"forecast.grid_size": 16, "forecast.trajectories": 3, "forecast.cal_trajectories": 1,
                    "forecast.steps": 3, "forecast.members": 3, "forecast.snapshots": 41, "forecast.horizon": 2.0},
    "grid_ablation": {"data.n_train": 30, "data.n_cal": 10, "data.n_test": 10, "data.resolution": 16,
                      "surrogate.modes": 5},
    "volume_ablation": {"data.n_train": 30, "data.n_cal": 10, "data.n_test": 10, "data.resolution": 16,
                        "surrogate.modes": 5},
    "superres": {"data.n_train": 30, "data.n_cal": 10, "data.n_test": 10, "surrogate.modes": 5,
                 "sweep.train_resolution": 16, "sweep.cal_resolutions": "20 24", "sweep.test_resolutions": "32"},
}


def tiny_config(name, out=None, **extra):
    overrides = {"run.experiment": name, **TINY[name], **extra}
    if out is not None:
        overrides["run.out"] = str(out)
    return load_config(overrides=overrides)
