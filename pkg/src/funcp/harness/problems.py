"""Benchmark problems and the surrogates fit to them.

A :class:`Problem` generates ``(input, solution)`` pairs with a reference
solver and defines the transforms between physical fields and the quantities
the linear spectral operator is fit on:

* Darcy 1-D: permeability ``k`` -> pressure ``u``. The operator maps ``log k``
  to ``u - x``, which removes the boundary lift ``u(0)=0, u(1)=1`` so the
  target vanishes at both ends.
* Poisson 2-D: forcing ``f`` -> solution ``u`` of ``Lap u = f``, untransformed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError
from ..grid import Field, Grid, GridKind, make_grid
from ..solvers import RandomFieldSpec, sample_forcing_2d, sample_permeability_1d, solve_darcy_1d, solve_poisson_2d
from ..surrogates import (
    SpectralOperator,
    TripletPredictor,
    _check_resolution,
    analyze,
    ensemble_predict,
    fit_quantile_triplet,
    fit_spectral_operator,
    synthesize,
)

__all__ = ["SPLIT_OFFSETS", "Problem", "Surrogate", "TripletSurrogate", "make_problem"]

#: Sample-index offsets of the data splits; sample ``i`` of a split is the
#: same field whatever the split sizes.
SPLIT_OFFSETS = {"train": 0, "cal": 1 << 32, "test": 2 << 32}


@dataclass(frozen=True)
class Problem:
    name: str
    spec: RandomFieldSpec

    @property
    def dim(self) -> int:
        return 1 if self.name == "darcy" else 2

    def grid(self, resolution: int, geometry=GridKind.UNIFORM) -> Grid:
        return make_grid(geometry, (resolution,) * self.dim)

    def sample(self, grid: Grid, index: int) -> tuple[Field, Field]:
        if self.name == "darcy":
            k = sample_permeability_1d(self.spec, grid, index)
            return k, solve_darcy_1d(k)
        f = sample_forcing_2d(self.spec, grid, index)
        return f, solve_poisson_2d(f)

    def dataset(self, grid: Grid, split: str, n: int, start: int = 0) -> list[tuple[Field, Field]]:
        if split not in SPLIT_OFFSETS:
            raise InvalidArgumentError(f"unknown split {split!r}")
        base = SPLIT_OFFSETS[split]
        return [self.sample(grid, base + start + i) for i in range(n)]

    def encode(self, x: Field) -> Field:
        """Operator input for a physical input."""
        return Field(x.grid, np.log(x.values)) if self.name == "darcy" else x

    def lift(self, y: Field) -> Field:
        """Operator target for a physical solution."""
        return Field(y.grid, y.values - y.grid.centers[0]) if self.name == "darcy" else y

    def unlift(self, z: np.ndarray, grid: Grid) -> np.ndarray:
        """Physical solution values from operator output values on ``grid``."""
        return z + grid.centers[0] if self.name == "darcy" else z


def make_problem(name: str, seed: int, field_modes: int = 4, decay: float = 1.0, max_wavenumber: int = 4) -> Problem:
    if name not in ("darcy", "poisson"):
        raise InvalidArgumentError(f"unknown problem {name!r}")
    spec = RandomFieldSpec(n_modes=field_modes, amplitude_decay=decay, seed=seed, max_wavenumber=max_wavenumber)
    return Problem(name, spec)


def _operator_pairs(problem: Problem, pairs):
    return [(problem.encode(x), problem.lift(y)) for x, y in pairs]


def _apply(ops: Sequence[SpectralOperator], problem: Problem, inputs, target):
    """Predictions of each operator for a batch of inputs sharing one grid."""
    inputs = list(inputs)
    grid = inputs[0].grid
    target = grid if target is None else target
    modes = ops[0].modes
    _check_resolution(grid, modes)
    _check_resolution(target, modes)
    feats = analyze(np.stack([problem.encode(x).values for x in inputs]), grid, modes)
    out = []
    for op in ops:
        vals = synthesize(feats @ op.coef + op.bias, target, modes)
        out.append([Field(target, problem.unlift(v, target)) for v in vals])
    return out


@dataclass(frozen=True)
class Surrogate:
    problem: Problem
    op: SpectralOperator

    @classmethod
    def fit(cls, problem: Problem, train, modes: int, ridge: float) -> "Surrogate":
        return cls(problem, fit_spectral_operator(_operator_pairs(problem, train), modes, ridge=ridge))

    def predict(self, x: Field, target: Grid | None = None) -> Field:
        return self.predict_many([x], target)[0]

    def predict_many(self, inputs: Sequence[Field], target: Grid | None = None) -> list[Field]:
        return _apply([self.op], self.problem, inputs, target)[0]

    def ensemble(self, x: Field, n: int, noise_scale: float, seed: int) -> list[Field]:
        """Members from multiplicatively perturbed coefficients.

        Member ``j`` uses the same perturbation for every input.
        """
        members = ensemble_predict(self.op, self.problem.encode(x), n, noise_scale, seed=seed)
        return [Field(m.grid, self.problem.unlift(m.values, m.grid)) for m in members]


@dataclass(frozen=True)
class TripletSurrogate:
    problem: Problem
    triplet: TripletPredictor

    @classmethod
    def fit(cls, problem: Problem, train, modes: int, ridge: float, q_lo, q_hi, steps, step_size):
        tp = fit_quantile_triplet(
            _operator_pairs(problem, train), modes, q_lo=q_lo, q_hi=q_hi, steps=steps, step_size=step_size, ridge=ridge
        )
        return cls(problem, tp)

    def predict_many(self, inputs: Sequence[Field], target: Grid | None = None):
        """Lists of ``(lo, mid, hi)`` per input."""
        t = self.triplet
        lo, mid, hi = _apply([t.lo, t.mid, t.hi], self.problem, inputs, target)
        return list(zip(lo, mid, hi))
