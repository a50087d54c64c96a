import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from funcp.errors import InvalidArgumentError
from funcp.grid import Field, discretize, make_grid
from funcp.surrogates import SpectralOperator
from funcp.transport import decompose_radius, extrapolate_tau, fit_log_linear, resolution_sweep


@settings(max_examples=80, deadline=None)
@given(
    slope=st.floats(-0.1, 0.1),
    intercept=st.floats(-5, 1),
    rs=st.lists(st.integers(8, 512), min_size=2, max_size=8, unique=True),
)
def test_fit_recovers_exact_line(slope, intercept, rs):
    fit = fit_log_linear([(r, math.exp(slope * r + intercept)) for r in rs])
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.intercept == pytest.approx(intercept, abs=1e-8)
    assert fit.residual_rms < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(2, 10))
def test_fit_matches_lstsq(seed, m):
    rng = np.random.default_rng(seed)
    r = rng.choice(np.arange(8, 300), size=m, replace=False).astype(float)
    tau = rng.uniform(0.01, 1.0, size=m)
    fit = fit_log_linear(list(zip(r, tau)))
    a = np.column_stack([r, np.ones(m)])
    (s, b), *_ = np.linalg.lstsq(a, np.log(tau), rcond=None)
    assert fit.slope == pytest.approx(s, rel=1e-9, abs=1e-12)
    assert fit.intercept == pytest.approx(b, rel=1e-9, abs=1e-10)


def test_fit_errors():
    with pytest.raises(InvalidArgumentError):
        fit_log_linear([(32, 0.1)])
    with pytest.raises(InvalidArgumentError):
        fit_log_linear([(32, 0.1), (32, 0.2)])
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(InvalidArgumentError):
            fit_log_linear([(32, 0.1), (64, bad)])


def test_extrapolate():
    fit = fit_log_linear([(32, math.exp(-1.0)), (64, math.exp(-2.0))])
    t = extrapolate_tau(fit, 128)
    assert t.tau == pytest.approx(math.exp(-4.0))
    assert t.extrapolated
    assert float(t) == t.tau
    assert not extrapolate_tau(fit, 48).extrapolated


def test_resolution_sweep_with_callable():
    data = {}
    for r in (8, 16):
        g = make_grid("uniform", r)
        y = discretize(lambda x: 1 + x, g)
        data[r] = [(y, y)] * 5
    pts = resolution_sweep(lambda x: x * (1.0 + 1.0 / x.grid.size), data, 0.2)
    assert [r for r, _ in pts] == [8, 16]
    assert pts[0][1] == pytest.approx(1 / 9)
    assert pts[1][1] == pytest.approx(1 / 17)


def test_resolution_sweep_checks():
    op = SpectralOperator(1, 6, np.eye(11), np.zeros(11))
    g = make_grid("uniform", 8)
    pair = (Field(g, np.ones(8)), Field(g, np.ones(8)))
    with pytest.raises(InvalidArgumentError):
        resolution_sweep(op, {8: [pair]}, 0.1)
    with pytest.raises(InvalidArgumentError):
        resolution_sweep(op, {8: [pair], 16: [pair]}, 0.1)


def test_decompose_callable_reference():
    grid = make_grid("uniform", (8, 8))
    d = decompose_radius(0.5, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), grid, n_cal=100)
    assert d.eps_cal == pytest.approx(0.1)
    assert 0 < d.eps_disc < 0.1
    assert d.tau == pytest.approx(d.eps_disc + d.eps_cal + d.eps_misspec)


def test_decompose_shrinks_with_resolution():
    f = lambda x: np.sin(3 * x)  # noqa: E731
    coarse = decompose_radius(0.2, f, make_grid("uniform", 8), 50).eps_disc
    fine = decompose_radius(0.2, f, make_grid("uniform", 32), 50).eps_disc
    assert fine < coarse


def test_decompose_field_reference():
    ref = discretize(lambda x: 1 + x, make_grid("uniform", 64))
    d = decompose_radius(0.1, ref, make_grid("uniform", 8), 25)
    assert d.eps_disc < 1e-2
    with pytest.raises(InvalidArgumentError):
        decompose_radius(0.1, ref, make_grid("uniform", 64), 25)
    with pytest.raises(InvalidArgumentError):
        decompose_radius(0.1, ref, make_grid("uniform", 8), 0)
    with pytest.raises(InvalidArgumentError):
        decompose_radius(0.1, lambda x: x, make_grid("uniform", 8), 5, fine_factor=1)
    with pytest.raises(InvalidArgumentError):
        decompose_radius(0.1, lambda x: 0 * x, make_grid("uniform", 8), 5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_fit_is_least_squares_minimum(seed):
    rng = np.random.default_rng(seed)
    r = rng.choice(np.arange(16, 200), size=6, replace=False).astype(float)
    tau = np.exp(-0.01 * r + 0.2 * rng.normal(size=6))
    fit = fit_log_linear(list(zip(r, tau)))
    y = np.log(tau)

    def rms(s, b):
        return np.sqrt(np.mean((y - s * r - b) ** 2))

    base = rms(fit.slope, fit.intercept)
    for ds, db in ((1e-3, 0), (-1e-3, 0), (0, 1e-3), (0, -1e-3), (1e-3, 1e-3), (-1e-3, -1e-3)):
        assert rms(fit.slope + ds, fit.intercept + db) >= base


def test_extrapolation_continuity():
    pts = [(r, math.exp(-0.02 * r - 1.0)) for r in (40, 48, 56)]
    fit = fit_log_linear(pts)
    assert extrapolate_tau(fit, 56).tau == pytest.approx(pts[-1][1], abs=1e-12)


def test_eps_disc_against_analytic_interpolation_error():
    n = 8
    centers = (np.arange(n) + 0.5) / n
    vals = np.sin(2 * np.pi * centers)

    def err2(x):
        return (np.interp(x, centers, vals) - np.sin(2 * np.pi * x)) ** 2

    breaks = np.concatenate([[0.0], centers, [1.0]])
    num = sum(quad(err2, a, b)[0] for a, b in zip(breaks[:-1], breaks[1:]))
    oracle = math.sqrt(num / 0.5)
    ref = discretize(lambda x: np.sin(2 * np.pi * x), make_grid("uniform", 256))
    d = decompose_radius(0.3, ref, make_grid("uniform", n), 100)
    assert d.eps_disc == pytest.approx(oracle, rel=0.05)


def test_representable_reference_has_no_discretization_error():
    ref = Field(make_grid("uniform", 32), np.full(32, 1.5))
    d = decompose_radius(0.3, ref, make_grid("uniform", 8), 100)
    assert d.eps_disc < 1e-12
    assert d.eps_misspec == pytest.approx(0.3 - 0.1)
