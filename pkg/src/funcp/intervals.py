"""Pointwise bounds from ensembles and from quantile triplets."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegenerateDenominatorError, DegenerateOffsetError, InvalidArgumentError
from .grid import Field, weighted_norm

__all__ = ["ensemble_mean", "member_distances", "mc_envelope", "adjust_quantile_bounds"]


def _common_grid(members):
    members = list(members)
    if not members:
        raise InvalidArgumentError("need at least one ensemble member")
    g = members[0].grid
    for m in members[1:]:
        if m.grid != g:
            raise InvalidArgumentError("ensemble members live on different grids")
    return members, g


def ensemble_mean(members: Sequence[Field]) -> Field:
    """Pointwise arithmetic mean of the members."""
    members, g = _common_grid(members)
    return Field(g, np.mean([m.values for m in members], axis=0))


def member_distances(members: Sequence[Field], center: Field) -> np.ndarray:
    """``||m - center||_w / ||center||_w`` for each member.

    A zero-norm center gives ``0`` for members equal to it and ``inf`` otherwise.
    """
    members, _ = _common_grid(members)
    denom = weighted_norm(center)
    out = np.empty(len(members))
    for j, m in enumerate(members):
        if m.grid != center.grid:
            raise InvalidArgumentError("reference lives on a different grid than the members")
        num = weighted_norm(m - center)
        out[j] = num / denom if denom > 0 else (0.0 if num == 0 else np.inf)
    return out


def mc_envelope(
    members: Sequence[Field],
    tau: float | None = None,
    conditioned: bool = True,
    reference: Field | None = None,
) -> tuple[Field, Field, int]:
    """Pointwise min/max envelope of an ensemble.

    With ``conditioned`` only members whose relative weighted distance to the
    ensemble mean (or to ``reference`` when given) is at most ``tau`` enter the
    envelope. The closest member is always kept, so the envelope is never empty.

    Returns
    -------
    lower, upper : Field
    kept : int
        Number of members in the envelope.
    """
    members, g = _common_grid(members)
    values = np.stack([m.values for m in members])
    if conditioned:
        if tau is None or not tau > 0:
            raise InvalidArgumentError(f"conditioned envelope needs tau > 0, got {tau!r}")
        center = ensemble_mean(members) if reference is None else reference
        dist = member_distances(members, center)
        mask = dist <= tau
        if not mask.any():
            mask[int(np.argmin(dist))] = True
        values = values[mask]
    return Field(g, values.min(axis=0)), Field(g, values.max(axis=0)), int(values.shape[0])


def adjust_quantile_bounds(lo: Field, mid: Field, hi: Field, tau: float) -> tuple[Field, Field]:
    """Rescale the offsets of a quantile triplet to relative radius ``tau``.

    Each bound ``b`` is replaced by ``mid + (tau / r) (b - mid)`` with
    ``r = ||b - mid||_w / ||mid||_w``, so afterwards both bounds sit at relative
    weighted distance exactly ``tau`` from ``mid``.

    Raises
    ------
    DegenerateOffsetError
        If a bound coincides with ``mid``.
    """
    if lo.grid != mid.grid or hi.grid != mid.grid:
        raise InvalidArgumentError("triplet fields live on different grids")
    if not (tau >= 0 and np.isfinite(tau)):
        raise InvalidArgumentError(f"tau must be finite and non-negative, got {tau!r}")
    scale = weighted_norm(mid)
    if scale == 0:
        raise DegenerateDenominatorError("central prediction has zero weighted norm")
    out = []
    for name, b in (("lower", lo), ("upper", hi)):
        offset = b.values - mid.values
        r = weighted_norm(Field(mid.grid, offset)) / scale
        if r == 0:
            raise DegenerateOffsetError(f"{name} bound equals the central prediction; nothing to rescale")
        out.append(Field(mid.grid, mid.values + (tau / r) * offset))
    return out[0], out[1]
