"""Verification metrics for autoregressive ensemble forecasts.

At each step the ensemble is compared with the truth through its mean
(relative weighted distance), its spread around the mean, the fraction of
members within the conformal radius of the mean, and the CRPS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDenominatorError, InvalidArgumentError, NumericError
from .grid import Field, weighted_norm
from .intervals import _common_grid, ensemble_mean, member_distances

__all__ = [
    "StepDiagnostics",
    "RolloutDiagnostics",
    "ensemble_mean",
    "crps_ensemble",
    "step_diagnostics",
    "rollout_diagnostics",
]

#: ``stepper(member, step, state) -> next state``
Stepper = Callable[[int, int, Field], Field]


@dataclass(frozen=True)
class StepDiagnostics:
    """Ensemble verification at one forecast step.

    Attributes
    ----------
    t : int
    mean_distance : float
        ``||mean - truth||_w / ||mean||_w``.
    spread : float
        Mean over members of ``||member - mean||_w / ||mean||_w``.
    ces : float
        ``mean_distance + spread``.
    ia : float
        Fraction of members within ``tau`` of the mean.
    crps : float
    within_tau : bool
        ``mean_distance <= tau``.
    """

    t: int
    mean_distance: float
    spread: float
    ces: float
    ia: float
    crps: float
    within_tau: bool


@dataclass(frozen=True)
class RolloutDiagnostics:
    steps: tuple[StepDiagnostics, ...]
    tau: float

    @property
    def first_violation(self) -> int | None:
        """First step whose ensemble mean lies outside ``tau``, or ``None``."""
        for s in self.steps:
            if not s.within_tau:
                return s.t
        return None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps], dtype=np.float64)


def crps_ensemble(members: Sequence[Field], truth: Field) -> float:
    """Quadrature-weighted mean of the pointwise ensemble CRPS.

    Pointwise, ``mean_j |x_j - y| - (1 / 2n^2) sum_jk |x_j - x_k|``; the double
    sum is evaluated in ``O(n log n)`` from the sorted members.
    """
    members, g = _common_grid(members)
    if truth.grid != g:
        raise InvalidArgumentError("truth lives on a different grid than the members")
    x = np.stack([m.values for m in members])
    n = x.shape[0]
    skill = np.mean(np.abs(x - truth.values), axis=0)
    xs = np.sort(x, axis=0)
    # sum_{j,k} |x_j - x_k| = 2 sum_i (2i - n + 1) x_(i)
    rank_w = 2.0 * np.arange(n) - n + 1.0
    pair = 2.0 * (rank_w @ xs)
    point = skill - pair / (2.0 * n * n)
    return max(0.0, float(np.dot(g.weights, point)))


def step_diagnostics(members: Sequence[Field], truth: Field, tau: float, t: int = 0) -> StepDiagnostics:
    """Diagnostics of one ensemble against the truth at step ``t``.

    Raises
    ------
    DegenerateDenominatorError
        If the ensemble mean has zero weighted norm.
    """
    members, _ = _common_grid(members)
    if math.isnan(tau) or tau < 0:
        raise InvalidArgumentError(f"tau must be non-negative, got {tau!r}")
    mean = ensemble_mean(members)
    denom = weighted_norm(mean)
    if denom == 0:
        raise DegenerateDenominatorError(f"ensemble mean has zero weighted norm at step {t}")
    if truth.grid != mean.grid:
        raise InvalidArgumentError("truth lives on a different grid than the members")
    mean_distance = weighted_norm(mean - truth) / denom
    dist = member_distances(members, mean)
    spread = float(np.mean(dist))
    return StepDiagnostics(
        t=t,
        mean_distance=mean_distance,
        spread=spread,
        ces=mean_distance + spread,
        ia=float(np.mean(dist <= tau)),
        crps=crps_ensemble(members, truth),
        within_tau=bool(mean_distance <= tau),
    )


def rollout_diagnostics(
    initial: Field | Sequence[Field],
    stepper: Stepper,
    steps: int,
    tau: float,
    truth: Sequence[Field],
    n_members: int | None = None,
) -> RolloutDiagnostics:
    """Advance an ensemble autoregressively and diagnose every step.

    Parameters
    ----------
    initial : Field or sequence of Field
        Initial member states. A single field is replicated ``n_members`` times
        (default 1); the stepper is then responsible for any randomness.
    stepper : callable ``(member, step, state) -> Field``
        Advances one member by one step; ``step`` counts from 1. Each member
        evolves only from its own previous state.
    truth : sequence of Field
        ``truth[t - 1]`` is the true state after ``t`` steps.

    Raises
    ------
    NumericError
        Re-raised from the stepper with the failing step and member.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    truth = list(truth)
    if len(truth) < steps:
        raise InvalidArgumentError(f"truth trajectory has {len(truth)} states, need {steps}")
    if isinstance(initial, Field):
        states = [initial] * (n_members or 1)
    else:
        states, _ = _common_grid(initial)
    out = []
    for t in range(1, steps + 1):
        nxt = []
        for j, s in enumerate(states):
            try:
                nxt.append(stepper(j, t, s))
            except NumericError as exc:
                raise NumericError(f"stepper failed at step {t}, member {j}: {exc}") from exc
        states = nxt
        out.append(step_diagnostics(states, truth[t - 1], tau, t))
    return RolloutDiagnostics(tuple(out), float(tau))
