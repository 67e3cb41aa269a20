import math

import numpy as np
import pytest

from blowup_lab.evolve import ground_state_1d
from blowup_lab.grid_field import (ComplexField, GridMismatchError, NonFiniteFieldError, SpatialGrid,
                                   inner, laplacian, norms, real_field)

Q_MASS = math.sqrt(3) * math.pi / 2


def test_laplacian_sine_eigenfunction():
    # round-off in the spectral Laplacian grows like eps * k_max^2, hence a coarse grid
    g = SpatialGrid.line(256, 16.0)
    k = math.pi / g.half_width
    f = real_field(g, np.sin(k * g.x))
    assert np.max(np.abs(laplacian(f).values + k**2 * np.sin(k * g.x))) < 1e-12


def test_laplacian_constant_is_zero(line_grid):
    f = real_field(line_grid, np.full(line_grid.points, 3.7))
    assert np.max(np.abs(laplacian(f).values)) < 1e-12


def test_laplacian_gaussian():
    g = SpatialGrid.line(1024, 16.0)
    x = g.x
    f = real_field(g, np.exp(-x**2))
    assert np.max(np.abs(laplacian(f).values - (4 * x**2 - 2) * np.exp(-x**2))) < 1e-10


def test_radial_laplacian_gaussian():
    g = SpatialGrid.radial(2, 256, 16.0)
    r = g.r
    f = real_field(g, np.exp(-r**2))
    exact = (4 * r**2 - 4) * np.exp(-r**2)  # f'' + f'/r in two dimensions
    assert np.max(np.abs(laplacian(f).values - exact)) < 1e-8


def test_norms_zero_field(line_grid):
    n = norms(real_field(line_grid, np.zeros(line_grid.points)))
    assert all(v == 0 for v in n)


def test_norm_of_ground_state(line_grid):
    q = real_field(line_grid, ground_state_1d(line_grid.x))
    assert abs(norms(q).l2**2 - Q_MASS) / Q_MASS < 1e-8


def test_norm_of_gaussian(line_grid):
    f = real_field(line_grid, np.exp(-line_grid.x**2 / 2))
    assert abs(norms(f).l2**2 - math.sqrt(math.pi)) < 1e-12


def test_norm_relations(line_grid):
    x = line_grid.x
    f = real_field(line_grid, np.exp(-x**2 / 2))
    n = norms(f)
    # |f'|^2 = sqrt(pi)/2, |x f|^2 = sqrt(pi)/2
    assert abs(n.h1**2 - 1.5 * math.sqrt(math.pi)) < 1e-12
    assert abs(n.weighted_l2**2 - 0.5 * math.sqrt(math.pi)) < 1e-12
    assert abs(n.sigma1**2 - 2 * math.sqrt(math.pi)) < 1e-12


def test_inner_properties(line_grid):
    x = line_grid.x
    q = real_field(line_grid, ground_state_1d(x))
    f = ComplexField(line_grid, np.exp(-x**2) * (1 + 0.3j * x))
    assert abs(inner(f, f) - norms(f).l2**2) < 1e-14
    assert abs(inner(q, q.with_values(x * q.values))) < 1e-12
    assert abs(inner(f.with_values(1j * f.values), f)) < 1e-14


def test_parseval(line_grid):
    x = line_grid.x
    v = np.exp(-x**2) * np.exp(0.5j * x)
    phys = line_grid.l2sq(v)
    spec = line_grid.spacing / line_grid.points * np.sum(np.abs(np.fft.fft(v)) ** 2)
    assert abs(phys - spec) < 1e-12


def test_laplacian_symmetric(line_grid):
    x = line_grid.x
    f = real_field(line_grid, np.exp(-x**2) * (1 + x))
    h = real_field(line_grid, np.exp(-(x - 0.5) ** 2 / 2))
    assert abs(inner(laplacian(f), h) - inner(f, laplacian(h))) < 1e-10


def test_norm_refinement_converges():
    vals = []
    for n in (64, 128, 256):
        g = SpatialGrid.line(n, 20.0)
        vals.append(norms(real_field(g, ground_state_1d(g.x))).h1)
    assert abs(vals[2] - vals[1]) <= abs(vals[1] - vals[0])


def test_non_finite_rejected(line_grid):
    v = np.zeros(line_grid.points)
    v[3] = np.nan
    with pytest.raises(NonFiniteFieldError):
        real_field(line_grid, v)


def test_grid_mismatch():
    a = real_field(SpatialGrid.line(256, 20.0), np.zeros(256))
    b = real_field(SpatialGrid.line(512, 20.0), np.zeros(512))
    with pytest.raises(GridMismatchError):
        inner(a, b)


def test_grid_invariants():
    with pytest.raises(ValueError):
        SpatialGrid.line(1000, 20.0)
    with pytest.raises(ValueError):
        SpatialGrid.line(1024, 5.0)
    g = SpatialGrid.line(1024, 16.0)
    assert g.spacing == 2 * 16.0 / 1024


def test_sample_uniform_matches_band_limited_function():
    g = SpatialGrid.line(512, 20.0)
    f = np.exp(-g.x**2)
    pts = -3.1 + 0.013 * np.arange(400)
    got = g.sample_uniform(f, -3.1, 0.013, 400)
    assert np.max(np.abs(got - np.exp(-pts**2))) < 1e-12
