import math
import warnings

import numpy as np
import pytest
import sympy

from blowup_lab.coeffs import (X, CoefficientSpec, builtin_coefficients, check_assumptions,
                               make_coefficients, psi, psi_bounds_check, q_decay_rate)
from blowup_lab.grid_field import SpatialGrid


@pytest.fixture(scope="module")
def scan_grid():
    return SpatialGrid.line(1024, 20.0)


def test_builtins_present():
    names = {s.name for s in builtin_coefficients()}
    assert {"free", "oscillating_V", "oscillating_g", "affine_quadratic_V"} <= names
    assert all(s.expected for s in builtin_coefficients())


def test_unknown_name():
    with pytest.raises(KeyError):
        make_coefficients("nope")


def test_free_passes_everything(scan_grid):
    rep = check_assumptions(make_coefficients("free"), scan_grid)
    assert rep.all_pass
    assert rep.constants["g(0)-1"] == 0 and rep.constants["g'(0)"] == 0 and rep.constants["g''(0)"] == 0


def test_oscillating_V_gradient_bounds(scan_grid):
    spec = make_coefficients("oscillating_V")
    rep = check_assumptions(spec, scan_grid)
    assert rep.checks["V(0)=0"] and rep.checks["V1growth"]
    assert np.isfinite(rep.constants["sup_dV_near0"])
    assert np.isfinite(rep.constants["C_V1"])
    assert abs(spec.shift - 1.0) < 1e-15


def test_oscillating_g_growth_exponent(scan_grid):
    rep = check_assumptions(make_coefficients("oscillating_g"), scan_grid)
    assert np.isfinite(rep.constants["r_g"])
    assert rep.checks["gflat"] and rep.checks["gint"]


def test_polynomial_g_is_flagged(scan_grid):
    rep = check_assumptions(make_coefficients("poly_g", c=1.0), scan_grid)
    assert not rep.checks["gflat"]
    assert not rep.checks["gint"]
    assert not rep.all_pass


def test_checker_deterministic(scan_grid):
    spec = make_coefficients("oscillating_V", amplitude=0.1)
    a = check_assumptions(spec, scan_grid)
    b = check_assumptions(spec, scan_grid)
    assert a.checks == b.checks and a.constants == b.constants


def test_shift_recorded_for_callable_potential():
    spec = CoefficientSpec("shifted", V_fn=lambda x: np.cos(x))
    assert spec.shift == 1.0
    assert spec.V(np.zeros(1))[0] == 0.0


def test_psi_vanishes_for_free(bundle):
    assert np.all(psi(make_coefficients("free"), 0.1, 0.01, bundle).values == 0)


def test_psi_pairing_with_Q(bundle):
    spec = make_coefficients("affine_quadratic_V", c1=1.0, c2=0.0)
    lam, w = 0.1, 0.01
    got = bundle.grid.inner(psi(spec, lam, w, bundle).real, bundle.Q.real)
    exact = -lam**2 * w * math.sqrt(3) * math.pi / 2
    assert abs(got - exact) / abs(exact) < 1e-6


def test_psi_scales_as_lambda_squared(bundle):
    spec = make_coefficients("affine_quadratic_V", c1=1.0, c2=0.0)
    lams = np.array([1e-3, 5e-4, 2.5e-4, 1.25e-4])
    nrm = [math.sqrt(bundle.grid.l2sq(psi(spec, lam, 0.01, bundle).values)) for lam in lams]
    slope = np.polyfit(np.log(lams), np.log(nrm), 1)[0]
    assert abs(slope - 2) < 0.05


def test_psi_linear_in_amplitude(bundle):
    a = psi(make_coefficients("oscillating_V", amplitude=1.0), 0.05, 0.02, bundle).values
    b = psi(make_coefficients("oscillating_V", amplitude=0.3), 0.05, 0.02, bundle).values
    assert np.max(np.abs(b - 0.3 * a)) < 1e-15 * np.max(np.abs(a)) + 1e-18
    c = psi(make_coefficients("oscillating_V").scaled(0.3), 0.05, 0.02, bundle).values
    assert np.max(np.abs(c - 0.3 * a)) < 1e-15


def test_bounds_free_all_zero(bundle):
    rep = psi_bounds_check(make_coefficients("free"), [0.1, 0.05], [0.0, 0.01], bundle)
    assert rep.sup_ratio == 0 and all(v == 0 for v in rep.sup_pair_ratio.values())


def test_bounds_oscillating_V(bundle):
    lams = [0.1, 0.05, 0.025]
    rep = psi_bounds_check(make_coefficients("oscillating_V"), lams, [0.0], bundle)
    vals = [rep.ratios[(lam, 0.0)] for lam in lams]
    assert np.all(np.isfinite(vals))
    assert vals[2] <= vals[0]


def test_pairing_ratio_limit(bundle):
    spec = make_coefficients("affine_quadratic_V", c1=1.0, c2=0.0)
    w = 1e-3
    mass = bundle.mass
    errs = []
    for lam in (1e-1, 1e-2, 1e-3):
        rep = psi_bounds_check(spec, [lam], [w], bundle)
        errs.append(abs(rep.pair_ratios["Q"][(lam, w)] * (lam**2 * w + lam**4) / (lam**2 * w) - mass))
    assert errs[-1] < 1e-6 * mass


def test_weight_capped_at_half_decay_rate(bundle):
    rate = q_decay_rate(bundle)
    assert abs(rate - 1.0) < 1e-3
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = psi_bounds_check(make_coefficients("oscillating_V"), [0.1], [0.0], bundle, eps_prime=0.9)
    assert rep.eps_prime <= 0.5 * rate
    assert caught


def test_sympy_derivatives_match_finite_differences():
    sym = CoefficientSpec("s", V_expr=sympy.sin(X) * X**2)
    num = CoefficientSpec("n", V_fn=lambda x: np.sin(x) * x**2)
    x = np.linspace(-2, 2, 41)
    assert np.max(np.abs(sym.V(x, 1) - num.V(x, 1))) < 1e-9
