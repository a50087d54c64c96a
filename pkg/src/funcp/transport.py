"""Transport of the conformal radius across grid resolutions.

Resolution ``R`` is the number of cells per axis. Thresholds calibrated at a
few resolutions are fit by ``log tau = s R + b`` and the fit is used to
predict the threshold at resolutions where no calibration data exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .conformal import calibrate, nonconformity_scores
from .errors import InvalidArgumentError
from .grid import Field, Grid, GridKind, discretize, make_grid, resample, weighted_norm
from .surrogates import SpectralOperator, predict

__all__ = [
    "TransportFit",
    "TransportedTau",
    "RadiusDecomposition",
    "resolution_sweep",
    "fit_log_linear",
    "extrapolate_tau",
    "decompose_radius",
]


@dataclass(frozen=True)
class TransportFit:
    """Least-squares line through ``(R_i, log tau_i)``."""

    slope: float
    intercept: float
    resolutions: tuple[int, ...]
    taus: tuple[float, ...]
    residual_rms: float

    def log_tau(self, r) -> np.ndarray:
        return self.slope * np.asarray(r, dtype=np.float64) + self.intercept


@dataclass(frozen=True)
class TransportedTau:
    tau: float
    resolution: int
    extrapolated: bool

    def __float__(self):
        return self.tau


@dataclass(frozen=True)
class RadiusDecomposition:
    """Heuristic split ``tau = eps_disc + eps_cal + eps_misspec``.

    ``eps_misspec`` is the remainder and may be negative.
    """

    tau: float
    eps_disc: float
    eps_cal: float
    eps_misspec: float


def resolution_sweep(
    model: SpectralOperator | Callable[[Field], Field],
    datasets: Mapping[int, Sequence[tuple[Field, Field]]],
    alpha: float,
) -> list[tuple[int, float]]:
    """Calibrated threshold at every resolution.

    Parameters
    ----------
    model : SpectralOperator or callable
        Predictor applied to each input; operators predict on the input grid.
    datasets : mapping ``R -> [(input, truth), ...]``
        Calibration pairs per resolution.

    Returns
    -------
    list of (R, tau), sorted by ``R``.
    """
    if len(datasets) < 2:
        raise InvalidArgumentError("need calibration data at two or more resolutions")
    if isinstance(model, SpectralOperator):
        op = model
        for r in datasets:
            if r < 2 * op.modes:
                raise InvalidArgumentError(
                    f"resolution {r} cannot represent the {op.modes} modes retained by the surrogate"
                )
        model = lambda x: predict(op, x)  # noqa: E731
    out = []
    for r in sorted(datasets):
        pairs = [(model(x), y) for x, y in datasets[r]]
        out.append((int(r), calibrate(nonconformity_scores(pairs), alpha).tau))
    return out


def fit_log_linear(points: Sequence[tuple[float, float]]) -> TransportFit:
    """Ordinary least squares of ``log tau`` on ``R``.

    Raises
    ------
    InvalidArgumentError
        Fewer than two points, a non-positive or infinite ``tau``, or all
        resolutions equal (rank-deficient design).
    """
    points = list(points)
    if len(points) < 2:
        raise InvalidArgumentError("need at least two (R, tau) points")
    r = np.array([p[0] for p in points], dtype=np.float64)
    tau = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(~np.isfinite(tau)) or np.any(tau <= 0):
        raise InvalidArgumentError("every tau must be positive and finite")
    rc = r - r.mean()
    sxx = float(rc @ rc)
    if sxx == 0.0:
        raise InvalidArgumentError("design is rank deficient: all resolutions are equal")
    y = np.log(tau)
    slope = float(rc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * r.mean())
    resid = y - (slope * r + intercept)
    return TransportFit(
        slope=slope,
        intercept=intercept,
        resolutions=tuple(int(v) for v in r),
        taus=tuple(float(v) for v in tau),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def extrapolate_tau(fit: TransportFit, resolution: int) -> TransportedTau:
    """``exp(s R + b)``, flagged when ``R`` exceeds the largest fit resolution."""
    return TransportedTau(
        tau=math.exp(fit.slope * resolution + fit.intercept),
        resolution=int(resolution),
        extrapolated=resolution > max(fit.resolutions),
    )


def decompose_radius(
    tau: float,
    reference: Field | Callable[..., np.ndarray],
    grid: Grid,
    n_cal: int,
    fine_factor: int = 16,
) -> RadiusDecomposition:
    """Split ``tau`` into discretization, calibration and misspecification parts.

    ``eps_disc`` is the relative weighted distance between the reference and its
    restriction to ``grid``, with the restriction interpolated back onto the
    reference grid. A callable reference is sampled on a uniform grid
    ``fine_factor`` times finer than ``grid``. ``eps_cal = 1 / sqrt(n_cal)``.
    """
    if n_cal < 1:
        raise InvalidArgumentError("n_cal must be >= 1")
    if isinstance(reference, Field):
        fine = reference.grid
        if fine.dim != grid.dim or any(f <= c for f, c in zip(fine.shape, grid.shape)):
            raise InvalidArgumentError(
                f"reference grid {fine.shape} must be strictly finer than {grid.shape} on every axis"
            )
        ref = reference
        coarse = resample(ref, grid)
    else:
        if fine_factor < 2:
            raise InvalidArgumentError("fine_factor must be >= 2")
        fine = make_grid(GridKind.UNIFORM, tuple(fine_factor * n for n in grid.shape))
        ref = discretize(reference, fine)
        coarse = discretize(reference, grid)
    denom = weighted_norm(ref)
    if denom == 0:
        raise InvalidArgumentError("reference has zero weighted norm")
    eps_disc = weighted_norm(resample(coarse, fine) - ref) / denom
    eps_cal = 1.0 / math.sqrt(n_cal)
    return RadiusDecomposition(tau=tau, eps_disc=eps_disc, eps_cal=eps_cal, eps_misspec=tau - eps_disc - eps_cal)
