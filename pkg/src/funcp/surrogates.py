"""Resolution-flexible surrogate operators.

A :class:`SpectralOperator` maps the truncated Fourier coefficients of an input
field linearly onto truncated Fourier coefficients of the output. Coefficients
are computed by midpoint quadrature against ``exp(-2 pi i k.x)``, which on a
uniform grid is the exact DFT of a band-limited field, so the same operator
can be applied to inputs sampled at any resolution and synthesized on any grid.

Only a canonical half of the wavevectors is stored (the other half follows
from Hermitian symmetry), and the coefficients are flattened into a real
feature vector ``[Re c_k ..., Im c_k ...]`` without the imaginary part of the
mean mode.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg

from ._random import stream
from .errors import InvalidArgumentError, NumericError
from .grid import Field, Grid

__all__ = [
    "SpectralOperator",
    "TripletPredictor",
    "mode_set",
    "analyze",
    "synthesize",
    "fit_spectral_operator",
    "predict",
    "ensemble_predict",
    "pinball_loss",
    "pinball_subgradient",
    "fit_quantile_triplet",
]

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def mode_set(dim: int, modes: int) -> np.ndarray:
    """Canonical wavevectors with ``|k_a| < modes`` on every axis.

    The last axis is restricted to ``k >= 0``; on the ``k_last = 0`` plane the
    rule recurses to the previous axis, so exactly one of ``k`` and ``-k`` is
    kept. The zero vector comes first.
    """
    full = range(-(modes - 1), modes)
    kept = []
    for k in itertools.product(*([full] * (dim - 1) + [range(modes)])):
        nz = [c for c in reversed(k) if c != 0]
        if not nz or nz[0] > 0:
            kept.append(k)
    kept.sort(key=lambda k: (any(k), k))
    out = np.array(kept, dtype=np.int64).reshape(-1, dim)
    out.setflags(write=False)
    return out


def n_features(dim: int, modes: int) -> int:
    return 2 * len(mode_set(dim, modes)) - 1


def _check_resolution(grid: Grid, modes: int):
    if min(grid.shape) < 2 * modes:
        raise InvalidArgumentError(
            f"grid {grid.shape} is too coarse for {modes} retained modes (needs >= {2 * modes} cells per axis)"
        )


def _axis_exponentials(grid: Grid, modes: int, sign: float):
    ks = np.arange(-(modes - 1), modes)
    return [np.exp(sign * 2j * np.pi * np.outer(c, ks)) for c in grid.centers]


def analyze(fields: np.ndarray, grid: Grid, modes: int) -> np.ndarray:
    """Feature vectors of a batch of fields.

    Parameters
    ----------
    fields : array, shape (batch, grid.size)
    """
    fields = np.asarray(fields, dtype=np.float64).reshape((-1,) + grid.shape)
    coef = fields.astype(np.complex128)
    for axis, (e, h) in enumerate(zip(_axis_exponentials(grid, modes, -1.0), grid.spacings)):
        coef = np.moveaxis(np.tensordot(coef, e * h[:, None], axes=([axis + 1], [0])), -1, axis + 1)
    idx = tuple((mode_set(grid.dim, modes) + modes - 1).T)
    c = coef[(slice(None),) + idx]
    return np.ascontiguousarray(np.concatenate([c.real, c[:, 1:].imag], axis=1))


def _full_coefficients(features: np.ndarray, dim: int, modes: int) -> np.ndarray:
    features = np.atleast_2d(features)
    ks = mode_set(dim, modes)
    p = len(ks)
    c = features[:, :p].astype(np.complex128)
    c[:, 1:] += 1j * features[:, p:]
    full = np.zeros((features.shape[0],) + (2 * modes - 1,) * dim, dtype=np.complex128)
    pos = tuple((ks + modes - 1).T)
    neg = tuple((-ks[1:] + modes - 1).T)
    full[(slice(None),) + pos] = c
    full[(slice(None),) + neg] = np.conj(c[:, 1:])
    return full


def synthesize(features: np.ndarray, grid: Grid, modes: int) -> np.ndarray:
    """Evaluate band-limited fields at the cell centers of ``grid``.

    Returns an array of shape ``(batch, grid.size)``.
    """
    coef = _full_coefficients(features, grid.dim, modes)
    for axis, e in enumerate(_axis_exponentials(grid, modes, 1.0)):
        coef = np.moveaxis(np.tensordot(coef, e, axes=([axis + 1], [1])), -1, axis + 1)
    return np.ascontiguousarray(coef.real).reshape(coef.shape[0], -1)


def _parseval_weights(dim: int, modes: int) -> np.ndarray:
    """Per-feature factors turning ``sum(weights * features**2)`` into the L2 norm squared."""
    p = len(mode_set(dim, modes))
    w = np.full(2 * p - 1, 2.0)
    w[0] = 1.0
    return w


@dataclass(frozen=True)
class SpectralOperator:
    """Linear map between truncated spectra: ``out = in @ coef + bias``.

    Attributes
    ----------
    dim, modes : int
        Spatial dimension and retained modes per axis (``|k_a| < modes``).
    coef : array, shape (n_features, n_features)
    bias : array, shape (n_features,)
        Zero unless the operator was fit with an intercept.
    ridge : float
    train_residual : float
        Root mean square over training pairs of ``||prediction - P_M truth||_{w,2}``,
        where ``P_M`` truncates the truth to the retained modes.
    """

    dim: int
    modes: int
    coef: np.ndarray
    bias: np.ndarray
    ridge: float = 0.0
    train_residual: float = float("nan")

    def __post_init__(self):
        f = n_features(self.dim, self.modes)
        coef = np.asarray(self.coef, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if coef.shape != (f, f) or bias.shape != (f,):
            raise InvalidArgumentError(
                f"expected coef {(f, f)} and bias {(f,)}, got {coef.shape} and {bias.shape}"
            )
        if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(bias))):
            raise NumericError("operator coefficients are not finite")
        for a in (coef, bias):
            a.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "bias", bias)

    def features(self, field: Field) -> np.ndarray:
        _check_resolution(field.grid, self.modes)
        if field.grid.dim != self.dim:
            raise InvalidArgumentError(f"operator is {self.dim}-D, field is {field.grid.dim}-D")
        return analyze(field.values[None, :], field.grid, self.modes)[0]

    def __call__(self, field: Field, target: Grid | None = None) -> Field:
        return predict(self, field, target)


def fit_spectral_operator(
    train: Sequence[tuple[Field, Field]],
    modes: int,
    ridge: float = 0.0,
    fit_intercept: bool = False,
) -> SpectralOperator:
    """Ridge least-squares fit of a :class:`SpectralOperator`.

    Minimizes ``mean_i ||F_out(y_i) - F_in(x_i) A - b||^2 + ridge ||A||^2`` over
    feature vectors, with ``b = 0`` unless ``fit_intercept``.

    Raises
    ------
    NumericError
        If ``ridge == 0`` and the normal equations are singular.
    """
    train = list(train)
    if not train:
        raise InvalidArgumentError("empty training set")
    if modes < 1:
        raise InvalidArgumentError("modes must be >= 1")
    if ridge < 0:
        raise InvalidArgumentError("ridge must be non-negative")
    gin, gout = train[0][0].grid, train[0][1].grid
    if gin.dim != gout.dim:
        raise InvalidArgumentError("input and output grids differ in dimension")
    for x, y in train:
        if x.grid != gin or y.grid != gout:
            raise InvalidArgumentError("training pairs must share a common grid")
    _check_resolution(gin, modes)
    _check_resolution(gout, modes)

    xs = analyze(np.stack([x.values for x, _ in train]), gin, modes)
    ys = analyze(np.stack([y.values for _, y in train]), gout, modes)
    coef, bias = _ridge(xs, ys, ridge, fit_intercept)

    resid = ys - (xs @ coef + bias)
    pw = _parseval_weights(gin.dim, modes)
    train_residual = float(np.sqrt(np.mean(resid**2 @ pw)))
    return SpectralOperator(gin.dim, modes, coef, bias, ridge, train_residual)


def _ridge(xs, ys, ridge, fit_intercept):
    n, f = xs.shape
    if fit_intercept:
        xm, ym = xs.mean(axis=0), ys.mean(axis=0)
    else:
        xm, ym = np.zeros(f), np.zeros(ys.shape[1])
    xc, yc = xs - xm, ys - ym
    gram = xc.T @ xc / n
    rhs = xc.T @ yc / n
    if ridge == 0.0:
        rank = np.linalg.matrix_rank(xc)
        if rank < f:
            raise NumericError(
                f"normal equations are singular (rank {rank} < {f} features); use ridge > 0"
            )
    gram[np.diag_indices(f)] += ridge
    try:
        coef = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"normal equations could not be solved ({exc}); use ridge > 0") from exc
    bias = ym - xm @ coef
    return coef, bias


def predict(op: SpectralOperator, input: Field, target: Grid | None = None) -> Field:
    """Apply ``op`` to ``input`` and synthesize the result on ``target``.

    ``target`` defaults to the input grid. Any structured grid is accepted;
    the band-limited output is evaluated at its cell centers.
    """
    target = input.grid if target is None else target
    if target.dim != op.dim:
        raise InvalidArgumentError(f"target grid is {target.dim}-D, operator is {op.dim}-D")
    _check_resolution(target, op.modes)
    out = op.features(input) @ op.coef + op.bias
    return Field(target, synthesize(out[None, :], target, op.modes)[0])


def ensemble_predict(
    op: SpectralOperator,
    input: Field,
    n: int,
    noise_scale: float,
    seed: int = 0,
    target: Grid | None = None,
) -> list[Field]:
    """Predictions of ``n`` randomly perturbed copies of ``op``.

    Member ``j`` multiplies every coefficient (and bias entry) by
    ``1 + noise_scale * z`` with independent standard normal ``z`` drawn from
    the stream ``(seed, "ensemble", j)``.
    """
    if n < 1:
        raise InvalidArgumentError("ensemble size must be >= 1")
    if noise_scale < 0:
        raise InvalidArgumentError("noise_scale must be non-negative")
    target = input.grid if target is None else target
    _check_resolution(target, op.modes)
    x = op.features(input)
    outs = []
    for j in range(n):
        rng = stream(seed, "ensemble", j)
        coef = op.coef * (1.0 + noise_scale * rng.standard_normal(op.coef.shape))
        bias = op.bias * (1.0 + noise_scale * rng.standard_normal(op.bias.shape))
        outs.append(x @ coef + bias)
    values = synthesize(np.stack(outs), target, op.modes)
    return [Field(target, v) for v in values]


# --------------------------------------------------------------------------- quantile heads


def pinball_loss(residual, q: float) -> np.ndarray:
    """Pointwise pinball loss ``r * (q - [r < 0])`` of ``residual = truth - prediction``."""
    r = np.asarray(residual, dtype=np.float64)
    return r * (q - (r < 0))


def pinball_subgradient(residual, q: float) -> np.ndarray:
    """Derivative of :func:`pinball_loss` with respect to the *prediction*."""
    r = np.asarray(residual, dtype=np.float64)
    return -(q - (r < 0))


@dataclass(frozen=True)
class TripletPredictor:
    """Lower, central and upper heads sharing one spectral truncation."""

    lo: SpectralOperator
    mid: SpectralOperator
    hi: SpectralOperator
    q_lo: float
    q_hi: float
    loss_history: dict = dc_field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0.0 < self.q_lo < 0.5 < self.q_hi < 1.0):
            raise InvalidArgumentError(f"need 0 < q_lo < 0.5 < q_hi < 1, got {self.q_lo}, {self.q_hi}")
        if not (self.lo.modes == self.mid.modes == self.hi.modes):
            raise InvalidArgumentError("heads must retain the same modes")

    def predict(self, input: Field, target: Grid | None = None) -> tuple[Field, Field, Field]:
        return tuple(predict(h, input, target) for h in (self.lo, self.mid, self.hi))


class _PinballObjective:
    """Mean pinball loss of a head ``pred = Z theta S^T`` over training points.

    ``Z`` are whitened input features (with an intercept column) and ``S`` the
    synthesis matrix on the training output grid.
    """

    def __init__(self, z, synth, y, q):
        self.z, self.s, self.y, self.q = z, synth, y, q
        n, d = y.shape
        self.scale = 1.0 / (n * d)

    def prediction(self, theta):
        return (self.z @ theta) @ self.s.T

    def loss(self, theta):
        return float(np.sum(pinball_loss(self.y - self.prediction(theta), self.q)) * self.scale)

    def gradient(self, theta):
        """Euclidean (sub)gradient with respect to ``theta``."""
        g = pinball_subgradient(self.y - self.prediction(theta), self.q) * self.scale
        return self.z.T @ (g @ self.s)


def fit_quantile_triplet(
    train: Sequence[tuple[Field, Field]],
    modes: int,
    q_lo: float = 0.05,
    q_hi: float = 0.95,
    steps: int = 300,
    step_size: float = 0.05,
    ridge: float = 1e-8,
    checkpoint_every: int = 10,
) -> TripletPredictor:
    """Fit central and quantile heads.

    The central head is a ridge fit. Each quantile head starts from the central
    head (plus a zero intercept) and descends the mean pointwise pinball loss
    with a preconditioned subgradient step: the pseudo-residual field
    ``q - [r < 0]`` is projected by least squares onto the span of the model
    (whitened input features, output spectra), and the head moves by
    ``step_size * sigma`` along that projection, where ``sigma`` is the RMS
    training residual of the central head. As usual for subgradient methods
    the best iterate so far is kept, so recorded checkpoint losses never
    increase.

    Raises
    ------
    NumericError
        If the loss exceeds ten times its initial value (step too large).
    """
    if not (0.0 < q_lo < 0.5 < q_hi < 1.0):
        raise InvalidArgumentError(f"need 0 < q_lo < 0.5 < q_hi < 1, got {q_lo}, {q_hi}")
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    if step_size <= 0:
        raise InvalidArgumentError("step_size must be positive")
    train = list(train)
    mid = fit_spectral_operator(train, modes, ridge=ridge)
    gin, gout = train[0][0].grid, train[0][1].grid
    xs = analyze(np.stack([x.values for x, _ in train]), gin, modes)
    y = np.stack([t.values for _, t in train])
    n, f = xs.shape

    # whitening of [X, 1]: Z = X_aug W with Z^T Z / n = I (up to the ridge)
    xa = np.hstack([xs, np.ones((n, 1))])
    gram = xa.T @ xa / n
    gram[np.diag_indices(f)] += max(ridge, 1e-12 * np.trace(gram) / f)
    chol = np.linalg.cholesky(gram)
    w = scipy.linalg.solve_triangular(chol, np.eye(f + 1), lower=True).T
    z = xa @ w
    synth = synthesize(np.eye(f), gout, modes).T
    proj = np.linalg.pinv(synth)

    theta0 = np.linalg.solve(w, np.vstack([mid.coef, np.zeros((1, f))]))
    sigma = float(np.sqrt(np.mean((y - (z @ theta0) @ synth.T) ** 2)))
    if sigma == 0.0:
        sigma = float(np.sqrt(np.mean(y**2))) * 1e-12

    heads = {}
    history = {}
    for name, q in (("lo", q_lo), ("hi", q_hi)):
        obj = _PinballObjective(z, synth, y, q)
        theta = theta0.copy()
        loss = initial = obj.loss(theta)
        best_loss, best = loss, theta.copy()
        record = [loss]
        for it in range(1, steps + 1):
            r = y - obj.prediction(theta)
            pseudo = (q - (r < 0)) @ proj.T
            theta = theta + (step_size * sigma / n) * (z.T @ pseudo)
            loss = obj.loss(theta)
            if not np.isfinite(loss) or loss > 10.0 * initial:
                raise NumericError(
                    f"pinball descent for q={q} diverged at step {it} "
                    f"(loss {loss:.3e} vs initial {initial:.3e}); reduce step_size"
                )
            if loss < best_loss:
                best_loss, best = loss, theta.copy()
            if it % checkpoint_every == 0 or it == steps:
                record.append(best_loss)
        params = w @ best
        heads[name] = SpectralOperator(gin.dim, modes, params[:f], params[f], ridge, float("nan"))
        history[name] = record
        logger.debug("q=%.3f head: pinball %.4e -> %.4e", q, initial, best_loss)
    return TripletPredictor(heads["lo"], mid, heads["hi"], q_lo, q_hi, history)
