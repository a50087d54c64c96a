"""Reference PDE solvers and random input generators.

Three problems supply ground-truth data:

- 1-D Darcy flow ``-(k u')' = 0`` on ``[0, 1]`` with ``u(0) = 0, u(1) = 1``,
  solved by a cell-centered finite-volume scheme with harmonic face
  transmissibilities.
- 2-D Poisson ``Δu = f`` on the unit square with ``u = 0`` on the boundary,
  discretized by a 5-point stencil on any structured (possibly clustered) grid.
- 2-D incompressible Navier-Stokes in vorticity form on the periodic unit
  square, integrated pseudo-spectrally.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._random import stream
from .errors import ConvergenceError, InvalidArgumentError, NumericError
from .grid import Field, Grid, GridKind, make_grid

__all__ = [
    "RandomFieldSpec",
    "NSConfig",
    "sample_permeability_1d",
    "solve_darcy_1d",
    "darcy_face_values",
    "poisson_matrix",
    "solve_poisson_2d",
    "sample_forcing_2d",
    "sample_grf_2d",
    "ns_forcing",
    "ns_advance",
    "ns_rollout",
    "kinetic_energy",
    "enstrophy",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RandomFieldSpec:
    """Parameters of a random sum of Fourier modes.

    ``amplitude_decay`` is the spectral decay exponent: mode ``k`` is scaled by
    ``(1 + |k|^2) ** (-amplitude_decay / 2)`` for sums of modes and by
    ``(1 + |k|^2) ** (-amplitude_decay)`` for Gaussian random fields.
    """

    n_modes: int = 4
    amplitude_decay: float = 1.0
    clip: tuple[float, float] | None = None
    seed: int = 0
    amplitude: float = 1.0
    max_wavenumber: int = 4

    def __post_init__(self):
        if self.n_modes < 1:
            raise InvalidArgumentError("n_modes must be >= 1")
        if self.max_wavenumber < 1:
            raise InvalidArgumentError("max_wavenumber must be >= 1")
        if self.clip is not None and not self.clip[0] < self.clip[1]:
            raise InvalidArgumentError(f"clip bounds must satisfy lo < hi, got {self.clip}")


# --------------------------------------------------------------------------- Darcy

PERMEABILITY_RANGE = (0.01, 10.0)


def sample_permeability_1d(spec: RandomFieldSpec, grid: Grid, index: int = 0) -> Field:
    """Random strictly positive permeability, clipped to ``[0.01, 10]`` by default.

    ``log k`` is a sum of ``n_modes`` cosine/sine pairs with Gaussian
    coefficients decaying as ``m ** -amplitude_decay``, centered on the
    geometric midpoint of the clip range.
    """
    if grid.dim != 1:
        raise InvalidArgumentError("permeability sampling needs a 1-D grid")
    lo, hi = spec.clip if spec.clip is not None else PERMEABILITY_RANGE
    rng = stream(spec.seed, "permeability", index)
    coef = rng.standard_normal((spec.n_modes, 2))
    (x,) = grid.centers
    m = np.arange(1, spec.n_modes + 1)
    scale = spec.amplitude * m ** (-float(spec.amplitude_decay)) / math.sqrt(spec.n_modes)
    phase = 2 * np.pi * np.outer(x, m)
    logk = np.cos(phase) @ (scale * coef[:, 0]) + np.sin(phase) @ (scale * coef[:, 1])
    k = math.sqrt(lo * hi) * np.exp(logk)
    return Field(grid, np.clip(k, lo, hi))


def _darcy_transmissibility(k: Field):
    if k.grid.dim != 1:
        raise InvalidArgumentError("Darcy solver needs a 1-D field")
    kv = k.values
    if np.any(kv <= 0):
        raise InvalidArgumentError("permeability must be strictly positive")
    (h,) = k.grid.spacings
    # half-cell resistances; faces between cells combine them harmonically
    r = 0.5 * h / kv
    t = np.empty(kv.size + 1)
    t[0] = 1.0 / r[0]
    t[-1] = 1.0 / r[-1]
    t[1:-1] = 1.0 / (r[:-1] + r[1:])
    return t, r


def solve_darcy_1d(k: Field, left: float = 0.0, right: float = 1.0) -> Field:
    """Pressure at cell centers for ``-(k u')' = 0``, ``u(0)=left``, ``u(1)=right``.

    The scheme is exact for piecewise-constant ``k`` on the cells, where the
    continuous solution is ``u(x) = ∫_0^x dt/k / ∫_0^1 dt/k``.
    """
    t, _ = _darcy_transmissibility(k)
    n = k.grid.size
    diag = t[:-1] + t[1:]
    ab = np.zeros((3, n))
    ab[0, 1:] = -t[1:-1]
    ab[1] = diag
    ab[2, :-1] = -t[1:-1]
    rhs = np.zeros(n)
    rhs[0] += t[0] * left
    rhs[-1] += t[-1] * right
    u = scipy.linalg.solve_banded((1, 1), ab, rhs)
    return Field(k.grid, u)


def darcy_face_values(k: Field, u: Field, left: float = 0.0, right: float = 1.0) -> np.ndarray:
    """Flux-consistent pressure at the ``N + 1`` cell edges.

    Interior edge values follow from continuity of flux across the face, so a
    solution at a material interface is recovered without interpolation error.
    """
    t, r = _darcy_transmissibility(k)
    uv = u.values
    faces = np.empty(uv.size + 1)
    faces[0], faces[-1] = left, right
    flux = t[1:-1] * (uv[1:] - uv[:-1])
    faces[1:-1] = uv[:-1] + flux * r[:-1]
    return faces


# --------------------------------------------------------------------------- Poisson


def _second_difference_1d(edges: np.ndarray) -> sp.csr_matrix:
    """Finite-volume ``d²/dx²`` on cell centers with zero Dirichlet data at 0 and 1.

    Face fluxes are center-to-center differences; the boundary face uses the
    distance from the first (last) center to the domain endpoint. The flux
    balance is divided by the cell width, which keeps the scheme second order
    on clustered grids.
    """
    centers = 0.5 * (edges[1:] + edges[:-1])
    n = centers.size
    pts = np.concatenate(([0.0], centers, [1.0]))
    dm = pts[1:-1] - pts[:-2]
    dp = pts[2:] - pts[1:-1]
    s = 1.0 / np.diff(edges)
    lower = s / dm
    upper = s / dp
    main = -(lower + upper)
    return sp.diags([lower[1:], main, upper[:-1]], [-1, 0, 1], shape=(n, n), format="csr")


def poisson_matrix(grid: Grid) -> sp.csr_matrix:
    """Discrete Laplacian with homogeneous Dirichlet boundary, in field order."""
    if grid.dim != 2:
        raise InvalidArgumentError("Poisson solver needs a 2-D grid")
    ex, ey = grid.edges
    dx = _second_difference_1d(ex)
    dy = _second_difference_1d(ey)
    return (sp.kron(dx, sp.identity(ey.size - 1)) + sp.kron(sp.identity(ex.size - 1), dy)).tocsr()


_LU_CACHE: OrderedDict = OrderedDict()
_LU_CACHE_SIZE = 8


def _poisson_lu(grid: Grid):
    key = hash(grid)
    hit = _LU_CACHE.get(key)
    if hit is not None and hit[0] == grid:
        _LU_CACHE.move_to_end(key)
        return hit[1]
    lu = spla.splu(poisson_matrix(grid).tocsc())
    _LU_CACHE[key] = (grid, lu)
    if len(_LU_CACHE) > _LU_CACHE_SIZE:
        _LU_CACHE.popitem(last=False)
    return lu


def solve_poisson_2d(f: Field, method: str = "direct", tol: float = 1e-10, max_iter: int = 500_000) -> Field:
    """Solve ``Δu = f`` with ``u = 0`` on the boundary of the unit square.

    Parameters
    ----------
    f : Field
        Source term on a 2-D grid of any geometry.
    method : {"direct", "jacobi"}
        Sparse LU (factorization cached per grid) or Jacobi iteration.
    tol : float
        Jacobi stops once ``max |A u - f| < tol``.
    """
    method = method.lower()
    if method == "direct":
        u = _poisson_lu(f.grid).solve(f.values)
        return Field(f.grid, u)
    if method != "jacobi":
        raise InvalidArgumentError(f"unknown Poisson method {method!r}")
    if tol <= 0:
        raise InvalidArgumentError("Jacobi tolerance must be positive")
    a = poisson_matrix(f.grid)
    d = a.diagonal()
    off = a - sp.diags(d)
    b = f.values
    u = np.zeros_like(b)
    res = np.max(np.abs(b)) if b.size else 0.0
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Jacobi did not reach {tol:g} in {max_iter} iterations (residual {res:.3e})", res, it
            )
        u = (b - off @ u) / d
        it += 1
        if it % 10 == 0:
            res = np.max(np.abs(a @ u - b))
    logger.debug("Jacobi converged in %d iterations (residual %.3e)", it, res)
    return Field(f.grid, u)


def sample_forcing_2d(spec: RandomFieldSpec, grid: Grid, index: int = 0) -> Field:
    """Random zero-mean sum of ``n_modes`` plane waves on the unit square.

    Wavevectors are integers in ``[-max_wavenumber, max_wavenumber]^2`` without
    the origin, so the continuous field has zero mean; it is evaluated at the
    cell centers of any 2-D grid.
    """
    if grid.dim != 2:
        raise InvalidArgumentError("forcing sampling needs a 2-D grid")
    rng = stream(spec.seed, "forcing", index)
    kmax = spec.max_wavenumber
    x, y = grid.mesh()
    out = np.zeros(grid.shape)
    for _ in range(spec.n_modes):
        while True:
            kx, ky = rng.integers(-kmax, kmax + 1, size=2)
            if kx or ky:
                break
        amp = rng.standard_normal() * (1.0 + kx * kx + ky * ky) ** (-0.5 * spec.amplitude_decay)
        phase = rng.uniform(0.0, 2 * np.pi)
        out += amp * np.sin(2 * np.pi * (kx * x + ky * y) + phase)
    return Field(grid, spec.amplitude * out)


def _wavenumbers(n: int):
    k = np.fft.fftfreq(n, d=1.0 / n)
    kr = np.fft.rfftfreq(n, d=1.0 / n)
    return k[:, None], kr[None, :]


def sample_grf_2d(spec: RandomFieldSpec, grid: Grid, index: int = 0) -> Field:
    """Zero-mean periodic Gaussian random field with unit expected variance (times amplitude).

    White noise is filtered by ``(1 + |k|^2) ** (-amplitude_decay)`` and
    truncated to ``|k| <= n_modes`` (integer wavenumbers); the mean mode is
    removed.
    """
    n = _square_power_of_two(grid)
    rng = stream(spec.seed, "grf", index)
    noise = rng.standard_normal((n, n))
    kx, ky = _wavenumbers(n)
    k2 = kx**2 + ky**2
    filt = (1.0 + k2) ** (-float(spec.amplitude_decay))
    filt[k2 > spec.n_modes**2] = 0.0
    filt[0, 0] = 0.0
    # rfft halves the spectrum; count interior columns twice for the variance
    mult = np.full(filt.shape, 2.0)
    mult[:, 0] = 1.0
    if n % 2 == 0:
        mult[:, -1] = 1.0
    total = np.sum(mult * filt**2)
    if total == 0.0:
        raise InvalidArgumentError("the random field spectrum is empty")
    filt *= n / math.sqrt(total)
    values = np.fft.irfft2(np.fft.rfft2(noise) * filt, s=(n, n))
    return Field(grid, spec.amplitude * values)


# --------------------------------------------------------------------------- Navier-Stokes


@dataclass(frozen=True)
class NSConfig:
    """Settings of the periodic vorticity solver.

    The forcing is ``forcing_amplitude * sin(2 pi (kx x + ky y))`` with
    ``(kx, ky) = forcing_wavenumber``. With ``dt=None`` the step is chosen from
    an advective CFL estimate on the initial state and rounded so that an
    integer number of steps spans each snapshot interval.
    """

    grid_size: int = 64
    viscosity: float = 1e-3
    forcing_amplitude: float = 0.1
    forcing_wavenumber: tuple[int, int] = (1, 1)
    dt: float | None = None
    horizon: float = 50.0
    snapshots: int = 200
    dealias: bool = True
    cfl: float = 0.5

    def __post_init__(self):
        n = self.grid_size
        if n < 4 or n & (n - 1):
            raise InvalidArgumentError(f"grid_size must be a power of two >= 4, got {n}")
        if self.viscosity <= 0:
            raise InvalidArgumentError("viscosity must be positive")
        if self.dt is not None and self.dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        if self.snapshots < 1:
            raise InvalidArgumentError("snapshots must be >= 1")
        if self.horizon <= 0:
            raise InvalidArgumentError("horizon must be positive")

    @property
    def grid(self) -> Grid:
        return make_grid(GridKind.UNIFORM, (self.grid_size, self.grid_size))

    @property
    def snapshot_interval(self) -> float:
        return self.horizon / max(self.snapshots - 1, 1)


def _square_power_of_two(grid: Grid) -> int:
    if grid.dim != 2 or grid.shape[0] != grid.shape[1] or not grid.is_uniform:
        raise InvalidArgumentError("periodic spectral fields need a square uniform 2-D grid")
    n = grid.shape[0]
    if n & (n - 1):
        raise InvalidArgumentError(f"grid size must be a power of two, got {n}")
    return n


def ns_forcing(cfg: NSConfig) -> Field:
    grid = cfg.grid
    x, y = grid.mesh()
    kx, ky = cfg.forcing_wavenumber
    return Field(grid, cfg.forcing_amplitude * np.sin(2 * np.pi * (kx * x + ky * y)))


class _Spectral:
    """Precomputed spectral operators for an ``n x n`` periodic unit square."""

    def __init__(self, n: int, dealias: bool):
        kx, ky = _wavenumbers(n)
        self.n = n
        self.ikx = 2j * np.pi * kx
        self.iky = 2j * np.pi * ky
        self.k2 = (2 * np.pi) ** 2 * (kx**2 + ky**2)
        inv = np.zeros_like(self.k2)
        np.divide(1.0, self.k2, out=inv, where=self.k2 > 0)
        self.inv_k2 = inv
        if dealias:
            cut = n / 3.0
            self.mask = (np.abs(kx) < cut) & (np.abs(ky) < cut)
        else:
            self.mask = np.ones(self.k2.shape, dtype=bool)

    def velocity(self, w_hat):
        psi_hat = -w_hat * self.inv_k2
        u = np.fft.irfft2(-self.iky * psi_hat, s=(self.n, self.n))
        v = np.fft.irfft2(self.ikx * psi_hat, s=(self.n, self.n))
        return u, v

    def tendency(self, w_hat, f_hat):
        w_hat = w_hat * self.mask
        u, v = self.velocity(w_hat)
        wx = np.fft.irfft2(self.ikx * w_hat, s=(self.n, self.n))
        wy = np.fft.irfft2(self.iky * w_hat, s=(self.n, self.n))
        adv = np.fft.rfft2(u * wx + v * wy)
        return -adv * self.mask + f_hat


def _cfl_dt(ops: _Spectral, w_hat, cfg: NSConfig) -> float:
    u, v = ops.velocity(w_hat)
    speed = max(float(np.max(np.abs(u)) + np.max(np.abs(v))), 1e-12)
    return cfg.cfl * (1.0 / ops.n) / speed


def ns_advance(omega: Field, cfg: NSConfig, duration: float, dt: float | None = None) -> Field:
    """Advance vorticity by ``duration`` with the integrating-factor RK2 scheme."""
    return _integrate(omega, cfg, [duration], dt)[-1]


def ns_rollout(omega0: Field, cfg: NSConfig) -> list[Field]:
    """Trajectory of ``cfg.snapshots`` equally spaced states, starting with ``omega0``.

    Viscous diffusion is integrated exactly through an integrating factor;
    advection and forcing use Heun's method on the transformed variable. The
    nonlinear term is dealiased by the 2/3 rule and the stream function uses
    the zero-mean gauge.
    """
    interval = cfg.snapshot_interval
    return _integrate(omega0, cfg, [interval] * (cfg.snapshots - 1), cfg.dt)


def _integrate(omega0: Field, cfg: NSConfig, durations, dt):
    n = _square_power_of_two(omega0.grid)
    if n != cfg.grid_size:
        raise InvalidArgumentError(f"field is {n}x{n} but config expects {cfg.grid_size}")
    ops = _Spectral(n, cfg.dealias)
    f_hat = np.fft.rfft2(ns_forcing(cfg).as_array())
    w_hat = np.fft.rfft2(omega0.as_array())
    if dt is None:
        dt = cfg.dt if cfg.dt is not None else _cfl_dt(ops, w_hat, cfg)
    out = [omega0]
    step = 0
    for duration in durations:
        nsub = max(1, math.ceil(duration / dt - 1e-9))
        h = duration / nsub
        decay = np.exp(-cfg.viscosity * ops.k2 * h)
        for _ in range(nsub):
            n1 = ops.tendency(w_hat, f_hat)
            pred = decay * (w_hat + h * n1)
            n2 = ops.tendency(pred, f_hat)
            w_hat = decay * (w_hat + 0.5 * h * n1) + 0.5 * h * n2
            step += 1
            if not np.all(np.isfinite(w_hat)):
                raise NumericError(f"vorticity blew up at step {step}")
        out.append(Field(omega0.grid, np.fft.irfft2(w_hat, s=(n, n))))
    return out


def kinetic_energy(omega: Field) -> float:
    """``0.5 * mean(|u|^2)`` of the velocity induced by ``omega``."""
    n = _square_power_of_two(omega.grid)
    u, v = _Spectral(n, False).velocity(np.fft.rfft2(omega.as_array()))
    return float(0.5 * np.mean(u**2 + v**2))


def enstrophy(omega: Field) -> float:
    """``0.5 * mean(omega^2)``."""
    return float(0.5 * np.mean(omega.values**2))
