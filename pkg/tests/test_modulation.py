import math

import numpy as np
import pytest

from blowup_lab.coeffs import make_coefficients, psi
from blowup_lab.evolve import exact_pc_solution
from blowup_lab.experiment import ExperimentConfig, energy_params, run_construction
from blowup_lab.grid_field import ComplexField, norms
from blowup_lab.linops import estimate_mu
from blowup_lab.modulation import (EnergyParams, ModulationState, OutsideTube, bootstrap_monitor,
                                   decompose, default_energy_params, energy_H, energy_monotonicity_check,
                                   mod_series, mod_vector, reconstruct, rescaled_time, trajectory_residuals,
                                   tube_point)


def s_states(bundle, grid, s_values):
    out = []
    for s in s_values:
        t = -1.0 / s
        st = decompose(exact_pc_solution(t, grid), ModulationState.guess(1 / s, 1 / s, s, 0.0), bundle)
        out.append(st.with_time(s=s, t=t))
    return out


@pytest.fixture(scope="module")
def s_traj(bundle, phys_grid):
    return s_states(bundle, phys_grid, 10.0 + 0.1 * np.arange(-4, 5))


@pytest.fixture(scope="module")
def mu(bundle):
    return estimate_mu(bundle).mu


# --- decompose -----------------------------------------------------------------------
def test_tube_point_recovery(bundle, phys_grid):
    u = tube_point(phys_grid, bundle, 0.1, 0.05, 0.3, 0.0)
    st = decompose(u, ModulationState.guess(0.11, 0.04, 0.25, 0.001), bundle)
    assert np.max(np.abs(st.params - [0.1, 0.05, 0.3, 0.0])) < 1e-10
    assert norms(st.eps).h1 < 1e-10
    assert max(abs(v) for v in st.ortho) < 1e-10


def test_translated_tube_point(bundle, phys_grid):
    u = tube_point(phys_grid, bundle, 0.1, 0.05, 0.3, 0.02)
    st = decompose(u, ModulationState.guess(0.11, 0.04, 0.25, 0.0), bundle)
    assert np.max(np.abs(st.params - [0.1, 0.05, 0.3, 0.02])) < 1e-10


def test_exact_solution_decomposition(bundle, phys_grid):
    st = decompose(exact_pc_solution(-0.5, phys_grid), ModulationState.guess(0.5, 0.5, 0.0, 0.0), bundle)
    assert abs(st.lam - 0.5) < 1e-6 and abs(st.b - 0.5) < 1e-6 and abs(st.w[0]) < 1e-6
    assert norms(st.eps).h1 < 1e-6
    # phase of S(-0.5) is e^{2i}
    assert abs(st.gamma_mod - 2.0) < 1e-6


def test_reconstruction_identity(bundle, phys_grid):
    u = exact_pc_solution(-0.4, phys_grid)
    st = decompose(u, ModulationState.guess(0.4, 0.4, 2.5, 0.0), bundle)
    back = reconstruct(st, phys_grid, bundle)
    assert math.sqrt(phys_grid.l2sq(back.values - u.values)) < 1e-10


def test_mass_identity_for_perturbed_field(bundle, phys_grid):
    u = tube_point(phys_grid, bundle, 0.2, 0.1, 0.0, 0.0).values
    x = phys_grid.x
    u = u + 1e-2 * np.exp(-(x / 0.2 - 0.5) ** 2) * (1 + 1j) / math.sqrt(0.2)
    u = u * math.sqrt(bundle.mass / phys_grid.l2sq(u))
    st = decompose(ComplexField(phys_grid, u), ModulationState.guess(0.2, 0.1, 0.0, 0.0), bundle)
    assert norms(st.eps).l2 > 1e-4
    assert abs(st.eps_q_defect) < 1e-8


def test_gauge_invariance(bundle, phys_grid):
    u = tube_point(phys_grid, bundle, 0.1, 0.05, 0.3, 0.01)
    x = phys_grid.x
    u = u.with_values(u.values + 1e-3 * np.exp(-(x / 0.1) ** 2) / math.sqrt(0.1))
    a = decompose(u, ModulationState.guess(0.1, 0.05, 0.3, 0.01), bundle)
    theta = 0.7
    b = decompose(u.with_values(u.values * np.exp(1j * theta)), ModulationState.guess(0.1, 0.05, 1.0, 0.01), bundle)
    assert abs((b.gamma - a.gamma - theta + math.pi) % (2 * math.pi) - math.pi) < 1e-10
    assert abs(b.lam - a.lam) < 1e-10 and abs(b.b - a.b) < 1e-10 and abs(b.w[0] - a.w[0]) < 1e-10
    assert abs(norms(b.eps).h1 - norms(a.eps).h1) < 1e-10


def test_outside_tube(bundle, phys_grid):
    x = phys_grid.x
    u = ComplexField(phys_grid, (np.exp(-x**2) + np.exp(-(x - 3) ** 2)).astype(complex))
    with pytest.raises(OutsideTube):
        decompose(u, ModulationState.guess(1.0, 0.0, 0.0, 0.0), bundle)


# --- rescaled time ---------------------------------------------------------------------
def test_rescaled_time_linear_lambda():
    t = np.linspace(-0.5, -0.05, 2001)
    s = rescaled_time(t, np.abs(t))
    assert np.max(np.abs(s * np.abs(t) - 1)) < 1e-8


def test_rescaled_time_constant_lambda():
    t = np.linspace(-1, -0.2, 50)
    s = rescaled_time(t, np.ones_like(t), t1=-0.2)
    assert np.max(np.abs(s - (5.0 + (t + 0.2)))) < 1e-12


def test_rescaled_time_on_exact_trajectory(bundle, phys_grid):
    t = -1.0 / (10.0 + 0.5 * np.arange(9))
    states = [decompose(exact_pc_solution(tt, phys_grid), ModulationState.guess(-tt, -tt, -1 / tt, 0.0), bundle)
              for tt in t]
    lam = np.array([st.lam for st in states])
    s = rescaled_time(t, lam)
    assert np.max(np.abs(s * lam - 1)) < 1e-6


def test_rescaled_time_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        rescaled_time([-1.0, -0.5], [1.0, 0.0])


# --- Mod -------------------------------------------------------------------------------------
def test_mod_vanishes_on_exact_trajectory(s_traj):
    _, vecs = mod_series(s_traj, 5)
    assert max(max(abs(c) for c in v.as_array()) for v in vecs) < 1e-6


def test_mod_is_an_s_domain_object(s_traj):
    shifted = [st.with_time(t=st.t * 3.0 + 1.0) for st in s_traj]
    a, b = mod_vector(s_traj), mod_vector(shifted)
    assert np.array_equal(a.as_array(), b.as_array())


def test_mod_rejects_non_monotone_s(s_traj):
    states = list(s_traj[:5])
    states[2], states[3] = states[3], states[2]
    with pytest.raises(ValueError):
        mod_series(states, 5)


def test_mod_needs_enough_states(s_traj):
    with pytest.raises(ValueError):
        mod_vector(s_traj[:3], 5)


# --- epsilon equation ---------------------------------------------------------------------
def test_epsilon_residual_on_exact_trajectory(s_traj, bundle, free):
    _, res = trajectory_residuals(s_traj, free, bundle, 3)
    assert np.max(res) < 1e-5


@pytest.fixture(scope="module")
def potential_run():
    spec = make_coefficients("oscillating_V", amplitude=1.0)
    cfg = ExperimentConfig(spec=spec, t1=-0.2, t0=-0.35, phys_points=4096, snapshot_ds=0.05, s0=100.0)
    return spec, run_construction(cfg)


def test_dropping_psi_matches_its_norm(potential_run, bundle):
    spec, rec = potential_run
    states = rec.states[4:9]
    idx, with_psi = trajectory_residuals(states, spec, bundle, 3)
    _, without = trajectory_residuals(states, spec, bundle, 3, include_psi=False)
    for i, r0, r1 in zip(idx, with_psi, without):
        st = states[i]
        p = math.sqrt(bundle.grid.l2sq(psi(spec, st.lam, st.w, bundle).values))
        assert r0 < 0.05 * p
        assert abs(r1 - p) / p < 0.2


# --- modified energy ------------------------------------------------------------------------
def test_energy_zero_for_zero_eps(bundle, mu, free):
    st = ModulationState.guess(0.1, 0.1, eps=ComplexField(bundle.grid, np.zeros(bundle.grid.points, complex)))
    e = energy_H(st, free, default_energy_params(mu), bundle)
    assert e.H == 0 and e.S == 0


def _orthogonal_eps(bundle, rng, size):
    g = bundle.grid
    w = g.form_weights
    y = g.x
    env = np.exp(-(y**2) / 8)
    re = env * sum(rng.normal() * np.cos(k * y + rng.uniform(0, 6)) for k in np.linspace(0.2, 3, 8))
    im = env * sum(rng.normal() * np.cos(k * y + rng.uniform(0, 6)) for k in np.linspace(0.2, 3, 8))

    def project(v, basis):
        for _ in range(2):
            for b in basis:
                v = v - (np.sum(w * v * b) / np.sum(w * b * b)) * b
        return v

    cons = [bundle.Q.real, bundle.yQ[0].real, bundle.y2Q.real]
    ortho = []
    for c in cons:
        ortho.append(project(c, ortho))
    re = project(re, ortho)
    im = project(im, [bundle.rho.real])
    v = re + 1j * im
    return size * v / math.sqrt(g.l2sq(v))


def test_coercivity_for_random_orthogonal_eps(bundle, mu, free):
    rng = np.random.default_rng(7)
    params = default_energy_params(mu)
    for _ in range(5):
        eps = ComplexField(bundle.grid, _orthogonal_eps(bundle, rng, 1e-3))
        e = energy_H(ModulationState.guess(0.1, 0.1, eps=eps), free, params, bundle)
        assert e.coercive
        assert e.H <= 2 * (e.eps_h1_sq + 0.01 * e.weighted_sq)
        assert abs(e.S * 0.1**params.m - e.H) < 1e-15


def test_energy_params_constraints(mu):
    with pytest.raises(ValueError):
        EnergyParams(m=2.5, eps1=0.05, eps2=1.0, L=1.625, mu=mu).validate()
    with pytest.raises(ValueError):
        EnergyParams(m=4.0, eps1=0.05, eps2=1e-5, L=1.625, mu=mu).validate()


def test_monotonicity_on_exact_trajectory(s_traj, bundle, mu, free):
    params = default_energy_params(mu)
    energies = [energy_H(st, free, params, bundle) for st in s_traj]
    rep = energy_monotonicity_check(s_traj, energies)
    assert not rep.skipped
    assert np.max(np.abs(rep.dSds)) < 1e-8


def test_monotonicity_skipped_outside_regime(s_traj, bundle, mu, free):
    params = default_energy_params(mu)
    bad = [ModulationState(lam=2 * st.lam, b=st.b, gamma=st.gamma, w=st.w, eps=st.eps, s=st.s, t=st.t)
           for st in s_traj]
    energies = [energy_H(st, free, params, bundle) for st in bad]
    rep = energy_monotonicity_check(bad, energies)
    assert rep.skipped and rep.reason


# --- bootstrap -------------------------------------------------------------------------------
def test_bootstrap_flags_on_exact_trajectory(s_traj):
    assert all(all(bootstrap_monitor(st).values()) for st in s_traj)


def test_bootstrap_lambda_flag_fails_when_misscaled(s_traj):
    st = s_traj[0]
    bad = ModulationState(lam=2 * st.lam, b=st.b, gamma=st.gamma, w=st.w, eps=st.eps, s=st.s, t=st.t)
    flags = bootstrap_monitor(bad)
    assert not flags["lambda"] and flags["b"]


def test_bootstrap_rejects_bad_M(s_traj):
    with pytest.raises(ValueError):
        bootstrap_monitor(s_traj[0], K=8, M=1.3)
