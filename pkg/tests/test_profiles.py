import math
import time

import numpy as np
import pytest

from blowup_lab.grid_field import SpatialGrid, real_field
from blowup_lab.profiles import (GroundStateError, build_bundle, check_decay, check_gn_constant,
                                 ground_state_residual, solve_ground_state)

Q_MASS = math.sqrt(3) * math.pi / 2


@pytest.fixture(scope="module")
def q1(line_grid):
    return solve_ground_state(line_grid, return_history=True)


def test_ground_state_peak(q1):
    Q, _ = q1
    assert abs(Q.real.max() - 3**0.25) < 1e-8


def test_ground_state_mass(q1, line_grid):
    Q, _ = q1
    assert abs(line_grid.l2sq(Q.values) - Q_MASS) < 1e-8


def test_ground_state_closed_form(q1, line_grid):
    Q, _ = q1
    assert np.max(np.abs(Q.real - 3**0.25 / np.sqrt(np.cosh(2 * line_grid.x)))) < 1e-8


def test_ground_state_residual_and_positivity(q1, line_grid):
    Q, _ = q1
    assert ground_state_residual(Q.real, line_grid) < 1e-10
    assert np.all(Q.real > 0)


def test_ground_state_even(q1, line_grid):
    Q, _ = q1
    assert np.max(np.abs(Q.real - Q.real[line_grid.mirror])) < 1e-12


def test_residual_decreases_after_transient(q1):
    _, hist = q1
    tail = np.array(hist[-10:])
    assert np.all(np.diff(tail) < 0)


def test_mass_grid_converged():
    a = solve_ground_state(SpatialGrid.line(1024, 20.0))
    b = solve_ground_state(SpatialGrid.line(2048, 20.0))
    na = math.sqrt(a.grid.l2sq(a.values))
    nb = math.sqrt(b.grid.l2sq(b.values))
    assert abs(na - nb) < 1e-9


def test_radial_two_dimensions():
    g = SpatialGrid.radial(2)
    Q = solve_ground_state(g)
    q = Q.real
    assert ground_state_residual(q, g) < 1e-10
    e_crit = 0.5 * g.grad_sq(q) - float(g.integrate(q**4)) / 4
    assert abs(e_crit) < 1e-8


def test_non_convergence_reports_history(line_grid):
    with pytest.raises(GroundStateError) as err:
        solve_ground_state(line_grid, tol=1e-30, max_iter=5)
    assert len(err.value.history) == 5


def test_bundle_orthogonality(bundle):
    g = bundle.grid
    q = bundle.Q.real
    assert abs(g.inner(bundle.lamQ.real, q)) < 1e-10
    assert abs(g.inner(bundle.yQ[0].real, q)) < 1e-12
    assert bundle.ip_table["(Q,rho)"] == g.inner(q, bundle.rho.real)
    assert bundle.ip_table["(LamQ,Q)"] == g.inner(bundle.lamQ.real, q)


def test_gn_constant(bundle):
    g = bundle.grid
    Q = bundle.Q
    gauss = real_field(g, np.exp(-g.x**2))
    twice = Q.with_values(2 * Q.values)
    at_q, at_gauss, at_2q = check_gn_constant(Q, [Q, gauss, twice])
    assert abs(at_q.ratio - 1) < 1e-8
    assert at_gauss.holds and at_gauss.ratio < 1 - 1e-3
    assert at_2q.holds and abs(at_2q.ratio - at_q.ratio) < 1e-10


def test_gn_rejects_zero_trial(bundle):
    with pytest.raises(ValueError):
        check_gn_constant(bundle.Q, [bundle.Q.with_values(np.zeros(bundle.grid.points))])


def test_decay_bounds(bundle):
    rep = check_decay(bundle)
    assert rep.bounded
    assert 0.9 < rep.c_grad < 2.5
    assert np.isfinite(rep.c_lambda) and np.isfinite(rep.c_rho)


def test_ground_state_runtime():
    t = time.perf_counter()
    solve_ground_state(SpatialGrid.line())
    assert time.perf_counter() - t < 5.0
