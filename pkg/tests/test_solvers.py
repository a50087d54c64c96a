import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funcp.errors import ConvergenceError, InvalidArgumentError
from funcp.grid import Field, discretize, make_grid, relative_weighted_error
from funcp.solvers import (
    NSConfig,
    RandomFieldSpec,
    darcy_face_values,
    enstrophy,
    kinetic_energy,
    ns_advance,
    ns_rollout,
    poisson_matrix,
    sample_forcing_2d,
    sample_grf_2d,
    sample_permeability_1d,
    solve_darcy_1d,
    solve_poisson_2d,
)

KINDS = ["uniform", "center", "boundary"]


def _exact_poisson(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y) * x


def _poisson_rhs(x, y):
    # Lap(x sin(pi x) sin(pi y)) for the manufactured solution above
    s = np.sin(np.pi * y)
    return (2 * np.pi * np.cos(np.pi * x) - 2 * np.pi**2 * x * np.sin(np.pi * x)) * s


def _poisson_error(kind, n):
    g = make_grid(kind, (n, n))
    u = solve_poisson_2d(discretize(_poisson_rhs, g))
    return relative_weighted_error(discretize(_exact_poisson, g), u)


@pytest.mark.parametrize("kind", KINDS)
def test_poisson_second_order(kind):
    e1, e2 = _poisson_error(kind, 32), _poisson_error(kind, 64)
    assert math.log2(e1 / e2) >= 1.9


def test_poisson_matrix_symmetric_on_uniform_grid():
    a = poisson_matrix(make_grid("uniform", (5, 5)))
    assert abs(a - a.T).max() < 1e-12


def test_poisson_jacobi_agrees_with_direct():
    g = make_grid("center", (8, 8))
    f = discretize(_poisson_rhs, g)
    d = solve_poisson_2d(f)
    j = solve_poisson_2d(f, method="jacobi", tol=1e-11)
    np.testing.assert_allclose(j.values, d.values, atol=1e-9)


def test_poisson_jacobi_budget():
    g = make_grid("uniform", (16, 16))
    with pytest.raises(ConvergenceError) as info:
        solve_poisson_2d(discretize(_poisson_rhs, g), method="jacobi", max_iter=10)
    assert info.value.iterations == 10


def test_poisson_bad_method_and_dim():
    g = make_grid("uniform", (4, 4))
    with pytest.raises(InvalidArgumentError):
        solve_poisson_2d(Field(g, np.ones(16)), method="multigrid")
    with pytest.raises(InvalidArgumentError):
        solve_poisson_2d(Field(make_grid("uniform", 4), np.ones(4)))


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(KINDS), n=st.integers(3, 16), seed=st.integers(0, 1000))
def test_poisson_maximum_principle(kind, n, seed):
    # Lap u = f <= 0 with zero boundary data gives u >= 0
    g = make_grid(kind, (n, n))
    f = -np.abs(np.random.default_rng(seed).normal(size=g.size))
    u = solve_poisson_2d(Field(g, f))
    assert np.all(u.values >= -1e-12)


def test_darcy_constant_permeability_is_linear():
    for kind in KINDS:
        g = make_grid(kind, 17)
        u = solve_darcy_1d(Field(g, np.full(17, 3.0)))
        np.testing.assert_allclose(u.values, g.centers[0], atol=1e-12)


def test_darcy_piecewise_interface_value():
    g = make_grid("uniform", 256)
    k = Field(g, np.where(g.centers[0] < 0.5, 1.0, 2.0))
    u = solve_darcy_1d(k)
    faces = darcy_face_values(k, u)
    assert faces[128] == pytest.approx(2 / 3, abs=1e-12)
    # exact piecewise linear solution at the centers
    x = g.centers[0]
    exact = np.where(x < 0.5, x / 0.75, 2 / 3 + (x - 0.5) / 1.5)
    np.testing.assert_allclose(u.values, exact, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(4, 64))
def test_darcy_monotone_and_bounded(seed, n):
    g = make_grid("uniform", n)
    k = sample_permeability_1d(RandomFieldSpec(seed=seed), g)
    u = solve_darcy_1d(k).values
    assert np.all(np.diff(u) > 0)
    assert 0 < u[0] and u[-1] < 1


def test_darcy_rejects_nonpositive():
    g = make_grid("uniform", 4)
    with pytest.raises(InvalidArgumentError):
        solve_darcy_1d(Field(g, [1.0, 0.0, 1.0, 1.0]))


def test_permeability_clip_and_determinism():
    g = make_grid("uniform", 64)
    spec = RandomFieldSpec(seed=3, amplitude=5.0)
    a = sample_permeability_1d(spec, g, 7)
    b = sample_permeability_1d(spec, g, 7)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.min() >= 0.01 and a.values.max() <= 10.0
    c = sample_permeability_1d(spec, g, 8)
    assert not np.array_equal(a.values, c.values)


def test_permeability_resolution_consistent():
    # the same sample index gives the same continuous field at every resolution
    spec = RandomFieldSpec(seed=1)
    a = sample_permeability_1d(spec, make_grid("uniform", 4), 2)
    b = sample_permeability_1d(spec, make_grid("uniform", 8), 2)
    np.testing.assert_allclose(a.values, 0.5 * (b.values[0::2] + b.values[1::2]), rtol=0.2)


def test_forcing_zero_mean_and_reproducible():
    g = make_grid("uniform", (32, 32))
    spec = RandomFieldSpec(seed=5)
    f = sample_forcing_2d(spec, g, 0)
    assert abs(np.sum(g.weights * f.values)) < 1e-12
    np.testing.assert_array_equal(f.values, sample_forcing_2d(spec, g, 0).values)


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        RandomFieldSpec(n_modes=0)
    with pytest.raises(InvalidArgumentError):
        RandomFieldSpec(clip=(1.0, 1.0))


def test_grf_properties():
    g = make_grid("uniform", (32, 32))
    f = sample_grf_2d(RandomFieldSpec(n_modes=6, seed=2), g, 1)
    assert abs(f.values.mean()) < 1e-12
    with pytest.raises(InvalidArgumentError):
        sample_grf_2d(RandomFieldSpec(), make_grid("uniform", (24, 24)))
    with pytest.raises(InvalidArgumentError):
        sample_grf_2d(RandomFieldSpec(), make_grid("center", (32, 32)))


def test_grf_unit_variance_on_average():
    g = make_grid("uniform", (32, 32))
    spec = RandomFieldSpec(n_modes=8, seed=0)
    var = np.mean([np.var(sample_grf_2d(spec, g, i).values) for i in range(200)])
    assert var == pytest.approx(1.0, rel=0.1)


def test_taylor_green_decay():
    cfg = NSConfig(grid_size=32, viscosity=1e-2, forcing_amplitude=0.0, dt=1e-2)
    g = cfg.grid
    w0 = discretize(lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y), g)
    t = 1.0
    w = ns_advance(w0, cfg, t)
    rate = 2 * (2 * np.pi) ** 2 * cfg.viscosity
    expected = math.exp(-2 * rate * t) * kinetic_energy(w0)
    assert kinetic_energy(w) == pytest.approx(expected, rel=1e-2)
    np.testing.assert_allclose(w.values, math.exp(-rate * t) * w0.values, atol=1e-10)


def test_ns_rollout_shape_and_interval():
    cfg = NSConfig(grid_size=16, horizon=1.0, snapshots=5, forcing_amplitude=0.0)
    w0 = sample_grf_2d(RandomFieldSpec(n_modes=3, seed=0), cfg.grid)
    traj = ns_rollout(w0, cfg)
    assert len(traj) == 5
    assert traj[0] is w0
    assert cfg.snapshot_interval == 0.25
    # unforced flow loses enstrophy
    assert enstrophy(traj[-1]) <= enstrophy(traj[0]) + 1e-12


def test_ns_config_validation():
    for bad in (dict(grid_size=48), dict(viscosity=0.0), dict(dt=-1.0), dict(snapshots=0), dict(horizon=0.0)):
        with pytest.raises(InvalidArgumentError):
            NSConfig(**bad)


def test_ns_grid_mismatch():
    cfg = NSConfig(grid_size=16)
    w = Field(make_grid("uniform", (32, 32)), np.zeros(32 * 32))
    with pytest.raises(InvalidArgumentError):
        ns_advance(w, cfg, 0.1)


def test_unforced_flow_invariants():
    cfg = NSConfig(grid_size=32, viscosity=1e-3, forcing_amplitude=0.0, horizon=2.0, snapshots=11)
    w0 = sample_grf_2d(RandomFieldSpec(n_modes=6, seed=4, amplitude=2.0), cfg.grid)
    traj = ns_rollout(w0, cfg)
    ke = [kinetic_energy(w) for w in traj]
    ens = [enstrophy(w) for w in traj]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(ke, ke[1:]))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(ens, ens[1:]))
    for w in traj:
        assert abs(w.values.mean() - w0.values.mean()) < 1e-10


def test_darcy_converges_to_quadrature_formula():
    # k(x) = 1 + x/2 has u(x) = log(1 + x/2) / log(1.5)
    def err(n):
        g = make_grid("uniform", n)
        x = g.centers[0]
        u = solve_darcy_1d(discretize(lambda s: 1 + s / 2, g))
        return np.max(np.abs(u.values - np.log1p(x / 2) / np.log(1.5)))

    assert math.log2(err(32) / err(64)) >= 1.0


def test_strong_decay_concentrates_energy_in_lowest_modes():
    g = make_grid("uniform", (32, 32))
    f = sample_grf_2d(RandomFieldSpec(n_modes=10, amplitude_decay=8.0, seed=1), g)
    spec = np.abs(np.fft.rfft2(f.as_array())) ** 2
    low = spec[[1, -1, 0, 1, -1], [0, 0, 1, 1, 1]].sum()
    assert low / spec.sum() > 0.9
