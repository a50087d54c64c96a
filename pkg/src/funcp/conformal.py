"""Split conformal calibration for function-valued predictions.

Scores are relative quadrature-weighted errors between a predicted and a true
field. The calibrated threshold ``tau`` is the ``ceil((1 - alpha)(n + 1))``-th
smallest calibration score; the functional prediction set around a new
prediction is the ball of radius ``tau / c1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InvalidArgumentError
from .grid import Field, relative_error, relative_weighted_error

__all__ = [
    "CalibrationResult",
    "CoverageReport",
    "nonconformity_scores",
    "quantile_index",
    "calibrate",
    "functional_radius",
    "coverage",
    "coverage_from_scores",
    "log_volume_score",
]


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0) or math.isnan(alpha):
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha!r}")


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of :func:`calibrate`.

    ``k_index`` is 1-based. When it exceeds the number of scores the threshold
    is ``inf`` and :attr:`conservative` is true.
    """

    alpha: float
    scores: np.ndarray
    k_index: int
    tau: float
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (0.0 < self.c1 <= 1.0):
            raise InvalidArgumentError(f"c1 must lie in (0, 1], got {self.c1!r}")
        if self.c2 < 1.0:
            raise InvalidArgumentError(f"c2 must be >= 1, got {self.c2!r}")

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def conservative(self) -> bool:
        return self.k_index > self.n

    @property
    def nominal_coverage(self) -> float:
        """``k / (n + 1)``, the exact coverage for continuous exchangeable scores."""
        return min(self.k_index, self.n + 1) / (self.n + 1)


@dataclass(frozen=True)
class CoverageReport:
    """Functional and pointwise coverage on a test set.

    ``pointwise`` is ``None`` when no bounds were supplied. ``tv_lower_bound``
    is the shortfall ``max(0, (1 - alpha) - functional)``, a lower bound on the
    total-variation distance between calibration and test distributions.
    """

    functional: float
    pointwise: float | None
    n_functions: int
    n_points: int
    tv_lower_bound: float


def nonconformity_scores(pairs: Iterable[tuple[Field, Field]], weighted: bool = True) -> np.ndarray:
    """Relative error of each ``(prediction, truth)`` pair, in order.

    With ``weighted=False`` the unweighted relative L2 error is used instead of
    the quadrature-weighted one.
    """
    score = relative_weighted_error if weighted else relative_error
    return np.array([score(p, t) for p, t in pairs], dtype=np.float64)


def quantile_index(n: int, alpha: float) -> int:
    """``ceil((1 - alpha)(n + 1))`` evaluated in exact rational arithmetic.

    ``alpha`` is taken at its shortest decimal representation, so ``0.1`` means
    one tenth rather than the nearest binary double.
    """
    _check_alpha(alpha)
    a = Fraction(repr(float(alpha)))
    return math.ceil((1 - a) * (n + 1))


def calibrate(scores: Sequence[float], alpha: float, c1: float = 1.0, c2: float = 1.0) -> CalibrationResult:
    """Split-conformal threshold at significance ``alpha``.

    Ties are resolved by the ascending sort. If ``k > n`` the threshold is
    ``inf`` (the only set with guaranteed coverage is everything).
    """
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise InvalidArgumentError("need at least one calibration score")
    if not np.all(np.isfinite(s)) or s[0] < 0:
        raise InvalidArgumentError("scores must be finite and non-negative")
    k = quantile_index(s.size, alpha)
    tau = float(s[k - 1]) if k <= s.size else math.inf
    s.setflags(write=False)
    return CalibrationResult(alpha=float(alpha), scores=s, k_index=k, tau=tau, c1=c1, c2=c2)


def functional_radius(calib: CalibrationResult, c1: float | None = None) -> float:
    """Radius ``tau / c1`` of the function-space prediction ball."""
    c1 = calib.c1 if c1 is None else c1
    if c1 <= 0:
        raise InvalidArgumentError(f"c1 must be positive, got {c1!r}")
    return calib.tau / c1


def coverage_from_scores(scores, tau: float) -> float:
    """Fraction of scores at or below ``tau``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InvalidArgumentError("empty test set")
    return float(np.mean(scores <= tau))


def coverage(
    pairs: Sequence[tuple[Field, Field]],
    tau: float,
    bounds: Sequence[tuple[Field, Field]] | None = None,
    alpha: float = 0.1,
    weighted: bool = True,
) -> CoverageReport:
    """Evaluate a calibrated threshold (and optional pointwise bounds) on test pairs.

    Parameters
    ----------
    pairs : sequence of (prediction, truth)
    tau : float
        Calibrated threshold.
    bounds : sequence of (lower, upper), optional
        One pair of bound fields per test pair. Pointwise coverage counts every
        grid point with ``lower <= truth <= upper``, unweighted.
    alpha : float
        Significance level, only used for the drift lower bound.
    """
    _check_alpha(alpha)
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("empty test set")
    scores = nonconformity_scores(pairs, weighted=weighted)
    functional = float(np.mean(scores <= tau))

    pointwise = None
    n_points = sum(t.grid.size for _, t in pairs)
    if bounds is not None:
        bounds = list(bounds)
        if len(bounds) != len(pairs):
            raise InvalidArgumentError(f"{len(bounds)} bounds for {len(pairs)} test pairs")
        hits = 0
        for (_, truth), (lo, hi) in zip(pairs, bounds):
            if lo.grid != truth.grid or hi.grid != truth.grid:
                raise InvalidArgumentError("bounds and truth live on different grids")
            y = truth.values
            hits += int(np.count_nonzero((lo.values <= y) & (y <= hi.values)))
        pointwise = hits / n_points

    gap = max(0.0, (1.0 - alpha) - functional)
    return CoverageReport(
        functional=functional,
        pointwise=pointwise,
        n_functions=len(pairs),
        n_points=n_points,
        tv_lower_bound=gap,
    )


def log_volume_score(weights, tau: float, d: int | None = None) -> float:
    """Negative log-volume of the weighted ball ``{v : ||v||_w <= tau}`` in R^d.

    The set is an ellipsoid with semi-axes ``tau / sqrt(w_k)``; with unit
    weights it is the Euclidean ball of radius ``tau``. The value is signed and
    may be negative for large sets.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if d is None:
        d = w.size
    if w.size != d:
        raise InvalidArgumentError(f"got {w.size} weights for dimension {d}")
    if d < 1:
        raise InvalidArgumentError("dimension must be >= 1")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weights must be positive and finite")
    if not tau > 0:
        raise InvalidArgumentError(f"tau must be positive, got {tau!r}")
    return float(
        0.5 * np.sum(np.log(w)) - d * math.log(tau) + gammaln(d / 2 + 1) - (d / 2) * math.log(math.pi)
    )
