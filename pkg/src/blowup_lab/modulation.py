"""Modulation decomposition u -> (lambda, b, gamma, w, eps) and the diagnostics built on it.

Convention:
    u(x) = lambda^{-N/2} (Q + eps)(y) exp(-i b |y|^2 / 4 + i gamma),  y = (x + w) / lambda,
so eps lives on the profile grid in y and the coefficients are evaluated at
x = lambda y - w.  Only the periodic line (N = 1) is supported here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .coeffs import CoefficientSpec
from .grid_field import ComplexField, SpatialGrid, norms

ORTHO_NAMES = ("(eps,iLamQ)", "(eps,y2Q)", "(eps,irho)", "(eps,yQ)")


class OutsideTube(RuntimeError):
    pass


class NewtonStagnation(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class ModulationState:
    lam: float
    b: float
    gamma: float
    w: tuple[float, ...] = (0.0,)
    eps: ComplexField | None = field(default=None, repr=False)
    s: float = math.nan
    t: float = math.nan
    ortho: tuple[float, ...] = ()
    eps_q_defect: float = math.nan
    iterations: int = 0

    @property
    def params(self) -> np.ndarray:
        return np.array([self.lam, self.b, self.gamma, *self.w], dtype=float)

    @classmethod
    def guess(cls, lam: float, b: float, gamma: float = 0.0, w: float = 0.0, **kw) -> "ModulationState":
        return cls(lam=lam, b=b, gamma=gamma, w=(float(w),), **kw)

    def with_time(self, s: float | None = None, t: float | None = None) -> "ModulationState":
        return replace(self, s=self.s if s is None else s, t=self.t if t is None else t)

    @property
    def gamma_mod(self) -> float:
        return self.gamma % (2 * math.pi)

    def eps_norms(self):
        return norms(self.eps)


@dataclass(frozen=True)
class ModVector:
    m1: float
    m2: float
    m3: float
    m4: tuple[float, ...]

    @property
    def norm(self) -> float:
        return math.sqrt(self.m1**2 + self.m2**2 + self.m3**2 + sum(v * v for v in self.m4))

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3, *self.m4])


# --- decomposition --------------------------------------------------------------
class Decomposer:
    """Holds the profile-grid arrays used by the Newton solve."""

    def __init__(self, bundle):
        g = bundle.grid
        if not g.periodic:
            raise NotImplementedError("decomposition is implemented for the periodic line (N=1)")
        self.bundle = bundle
        self.grid = g
        self.y = g.x
        self.q = bundle.Q.real
        self.tests = [1j * bundle.lamQ.real, bundle.y2Q.real.astype(complex),
                      1j * bundle.rho.real, bundle.yQ[0].real.astype(complex)]
        self.offsets = np.array([0.0, g.inner(self.q, bundle.y2Q.real), 0.0, 0.0])

    def pull_back(self, u: ComplexField, lam: float, w: float) -> np.ndarray:
        """lambda^{1/2} u(lambda y - w) on the profile grid, zero outside the physical box."""
        pg = u.grid
        y = self.y
        start = lam * y[0] - w
        vals = pg.sample_uniform(u.values, start, lam * self.grid.spacing, len(y))
        x = lam * y - w
        vals[(x < pg.x[0]) | (x > pg.x[-1] + pg.spacing)] = 0.0
        vals[np.abs(x) >= pg.half_width] = 0.0
        return math.sqrt(lam) * vals

    def profile(self, u: ComplexField, p: np.ndarray) -> np.ndarray:
        lam, b, gamma, w = p
        y = self.y
        return self.pull_back(u, lam, w) * np.exp(1j * (b * y**2 / 4 - gamma))

    def functionals(self, U: np.ndarray) -> np.ndarray:
        g = self.grid
        return np.array([g.inner(U, t) for t in self.tests]) - self.offsets

    def jacobian(self, U: np.ndarray, p: np.ndarray) -> np.ndarray:
        lam, b = p[0], p[1]
        g, y = self.grid, self.y
        dU = g.deriv(U)
        cols = [
            (0.5 * U + y * dU - 0.5j * b * y**2 * U) / lam,
            0.25j * y**2 * U,
            -1j * U,
            -(dU - 0.5j * b * y * U) / lam,
        ]
        return np.array([[g.inner(c, t) for c in cols] for t in self.tests])

    def solve(self, u: ComplexField, guess: ModulationState, ortho_tol: float = 1e-10,
              delta: float = 0.2, max_iter: int = 40) -> ModulationState:
        p = guess.params.copy()
        if p[0] <= 0 or not np.all(np.isfinite(p)):
            raise ValueError("guess must be finite with lambda > 0")
        U = self.profile(u, p)
        # Move gamma to the best-matching phase on the branch nearest the guess.
        shift = float(np.angle(np.sum(U * self.q)))
        if shift != 0.0:
            p[2] += shift
            U = U * np.exp(-1j * shift)
        F = self.functionals(U)
        history = [float(np.abs(F).max())]
        it = 0
        while history[-1] >= ortho_tol:
            if it >= max_iter:
                raise NewtonStagnation(f"Newton did not converge (|F| = {history[-1]:.3e})", history)
            J = self.jacobian(U, p)
            try:
                dp = np.linalg.solve(J, F)
            except np.linalg.LinAlgError as exc:
                raise NewtonStagnation(f"singular Jacobian: {exc}", history) from exc
            step = 1.0
            while True:
                trial = p - step * dp
                if trial[0] > 0:
                    Ut = self.profile(u, trial)
                    Ft = self.functionals(Ut)
                    if np.abs(Ft).max() < history[-1] or step < 1e-3:
                        break
                step *= 0.5
            if step < 1e-3 and np.abs(Ft).max() >= history[-1]:
                raise NewtonStagnation("Newton line search failed", history)
            p, U, F = trial, Ut, Ft
            history.append(float(np.abs(F).max()))
            it += 1
        eps = U - self.q
        ef = ComplexField(self.grid, eps)
        h1 = norms(ef).h1
        if h1 >= delta:
            raise OutsideTube(f"||eps||_H1 = {h1:.3e} is outside the tube (delta = {delta})")
        g = self.grid
        defect = g.inner(eps, self.q) + 0.5 * g.l2sq(eps)
        return ModulationState(lam=float(p[0]), b=float(p[1]), gamma=float(p[2]), w=(float(p[3]),),
                               eps=ef, s=guess.s, t=guess.t, ortho=tuple(float(v) for v in F),
                               eps_q_defect=float(defect), iterations=it)


_DECOMPOSERS: dict = {}


def get_decomposer(bundle) -> Decomposer:
    key = id(bundle)
    d = _DECOMPOSERS.get(key)
    if d is None or d.bundle is not bundle:
        if len(_DECOMPOSERS) > 8:
            _DECOMPOSERS.clear()
        d = _DECOMPOSERS[key] = Decomposer(bundle)
    return d


def decompose(u: ComplexField, guess: ModulationState, bundle, ortho_tol: float = 1e-10,
              delta: float = 0.2) -> ModulationState:
    """Newton solve of the four orthogonality conditions over (lambda, b, gamma, w)."""
    return get_decomposer(bundle).solve(u, guess, ortho_tol=ortho_tol, delta=delta)


def reconstruct(state: ModulationState, grid: SpatialGrid, bundle) -> ComplexField:
    """Rebuild u on the physical ``grid`` from a modulation state."""
    yg = bundle.grid
    v = bundle.Q.values if state.eps is None else bundle.Q.values + state.eps.values
    lam, w = state.lam, state.w[0]
    x = grid.x
    y = (x + w) / lam
    vals = yg.sample_uniform(v, y[0], grid.spacing / lam, grid.points)
    vals[np.abs(y) >= yg.half_width] = 0.0
    phase = np.exp(-1j * state.b * y**2 / 4 + 1j * state.gamma)
    return ComplexField(grid, lam**-0.5 * vals * phase)


def tube_point(grid: SpatialGrid, bundle, lam: float, b: float, gamma: float = 0.0,
               w: float = 0.0) -> ComplexField:
    return reconstruct(ModulationState.guess(lam, b, gamma, w), grid, bundle)


# --- rescaled time -----------------------------------------------------------------
def rescaled_time(t: Sequence[float], lam: Sequence[float], t1: float | None = None,
                  s1: float | None = None) -> np.ndarray:
    """s(t) = s1 - int_t^{t1} lambda^{-2} dtau with s1 = -1/t1 by default.

    lambda (close to linear in t near blow-up) is interpolated by a cubic
    spline and 1/lambda^2 is integrated with Gauss-Legendre on each sample
    interval; t1 defaults to the sample closest to zero.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lambda must stay positive")
    order = np.argsort(t)
    ts, ls = t[order], lam[order]
    if t1 is None:
        t1 = ts[-1]
    if s1 is None:
        if t1 >= 0:
            raise ValueError("anchor time must be negative to use s1 = -1/t1")
        s1 = -1.0 / t1
    if len(ts) < 2:
        return np.full_like(t, s1)
    spline = CubicSpline(ts, ls) if len(ts) > 2 else (lambda z: np.interp(z, ts, ls))
    nodes, wts = np.polynomial.legendre.leggauss(8)
    knots = np.union1d(ts, [t1])
    a, b = knots[:-1], knots[1:]
    z = 0.5 * (b - a)[:, None] * nodes[None, :] + 0.5 * (a + b)[:, None]
    pieces = 0.5 * (b - a) * ((1.0 / spline(z) ** 2) @ wts)
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    at_t1 = np.interp(t1, knots, cum)
    s_sorted = s1 - (at_t1 - np.interp(ts, knots, cum))
    out = np.empty_like(t)
    out[order] = s_sorted
    return out


# --- finite differences in s -------------------------------------------------------
def fd_weights(nodes: np.ndarray, at: float, deriv: int = 1) -> np.ndarray:
    """Weights of the interpolatory derivative rule on arbitrary nodes."""
    z = np.asarray(nodes, dtype=float) - at
    scale = np.abs(z).max() or 1.0
    z = z / scale
    m = len(z)
    A = np.vander(z, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(A, rhs) / scale**deriv


def _check_monotone(s: np.ndarray) -> None:
    d = np.diff(s)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("rescaled times must be strictly monotone")


def mod_series(states: Sequence[ModulationState], stencil: int = 5):
    """Mod(s) at every state with a full centred stencil.

    Returns (indices, list of ModVector).
    """
    if stencil < 3 or stencil % 2 == 0:
        raise ValueError("stencil must be odd and at least 3")
    if len(states) < stencil:
        raise ValueError(f"need at least {stencil} states")
    s = np.array([st.s for st in states])
    _check_monotone(s)
    loglam = np.log([st.lam for st in states])
    b = np.array([st.b for st in states])
    gam = np.array([st.gamma for st in states])
    w = np.array([st.w for st in states])
    half = stencil // 2
    idx, out = [], []
    for i in range(half, len(states) - half):
        sl = slice(i - half, i + half + 1)
        c = fd_weights(s[sl], s[i])
        out.append(ModVector(
            m1=float(c @ loglam[sl] + b[i]),
            m2=float(c @ b[sl] + b[i] ** 2),
            m3=float(1.0 - c @ gam[sl]),
            m4=tuple(float(v) for v in c @ w[sl]),
        ))
        idx.append(i)
    return idx, out


def mod_vector(states: Sequence[ModulationState], stencil: int = 5) -> ModVector:
    """Mod at the centre of a window of consecutive states."""
    if len(states) < stencil:
        raise ValueError(f"need at least {stencil} consecutive states")
    mid = len(states) // 2
    half = stencil // 2
    _, vecs = mod_series(states[mid - half: mid + half + 1], stencil)
    return vecs[0]


def eps_derivative(states: Sequence[ModulationState], i: int, stencil: int = 3) -> ComplexField:
    half = stencil // 2
    window = states[i - half: i + half + 1]
    s = np.array([st.s for st in window])
    c = fd_weights(s, states[i].s)
    vals = sum(ci * st.eps.values for ci, st in zip(c, window))
    return states[i].eps.with_values(vals)


# --- epsilon equation ----------------------------------------------------------------
def _coeff_at(spec: CoefficientSpec, x: np.ndarray, which: str) -> np.ndarray | None:
    if which == "V":
        return None if spec.trivial_V else spec.V(x)
    return None if spec.trivial_g else spec.g(x)


def epsilon_residual(state: ModulationState, eps_s: ComplexField, mod: ModVector,
                     spec: CoefficientSpec, bundle, include_psi: bool = True) -> float:
    """L^2 norm of (all terms of the eps equation) - Psi."""
    g = bundle.grid
    y = g.x
    lam, b, w = state.lam, state.b, state.w[0]
    q = bundle.Q.real
    eps = state.eps.values
    v = q + eps
    n_dim = g.dim
    x = lam * y - w
    gx = _coeff_at(spec, x, "g")
    Vx = _coeff_at(spec, x, "V")
    fv = np.abs(v) ** (4 / n_dim) * v
    if gx is not None:
        fv = gx * fv
    fq = q ** (1 + 4 / n_dim)
    dv = g.deriv(v)
    lam_v = 0.5 * n_dim * v + y * dv
    ws = mod.m4[0]
    res = (1j * eps_s.values + g.lap(eps) - eps + fv - fq
           - 1j * mod.m1 * lam_v + mod.m3 * v + mod.m2 * (y**2 / 4) * v
           - mod.m1 * b * (y**2 / 2) * v + 1j * (ws / lam) * dv + 0.5 * (b / lam) * ws * y * v)
    if Vx is not None:
        res = res - lam**2 * Vx * eps
        if include_psi:
            res = res - lam**2 * Vx * q
    return math.sqrt(g.l2sq(res))


def trajectory_residuals(states: Sequence[ModulationState], spec: CoefficientSpec, bundle,
                         stencil: int = 3, include_psi: bool = True):
    idx, mods = mod_series(states, stencil)
    out = []
    for i, m in zip(idx, mods):
        out.append(epsilon_residual(states[i], eps_derivative(states, i, stencil), m, spec, bundle,
                                    include_psi=include_psi))
    return np.array(idx), np.array(out)


# --- modified energies -----------------------------------------------------------------
@dataclass(frozen=True)
class EnergyParams:
    m: float
    eps1: float
    eps2: float
    L: float
    mu: float

    def violations(self) -> list[str]:
        out = []
        if not (1 < 1 + self.eps1 < self.m / 2 < self.L):
            out.append(f"need 1 < 1+eps1 < m/2 < L (eps1={self.eps1}, m={self.m}, L={self.L})")
        cap = self.m * self.mu * self.eps1 / 16
        if not (0 < self.eps2 < cap):
            out.append(f"need 0 < eps2 < m*mu*eps1/16 = {cap:.3e} (eps2={self.eps2})")
        return out

    def validate(self) -> "EnergyParams":
        bad = self.violations()
        if bad:
            raise ValueError("; ".join(bad))
        return self


def bootstrap_exponents(K: int) -> tuple[float, float]:
    """(L, kappa) for the bootstrap parameter K."""
    L = 1.5 + 1.0 / K
    return L, (2 - L) / 2


def default_energy_params(mu: float, K: int = 8, eps1: float = 0.05) -> EnergyParams:
    L, _ = bootstrap_exponents(K)
    m = 0.5 * (2 * (1 + eps1) + 2 * L)
    return EnergyParams(m=m, eps1=eps1, eps2=m * mu * eps1 / 32, L=L, mu=mu).validate()


@dataclass(frozen=True)
class EnergyDiagnostics:
    H: float
    S: float
    coercivity_lhs: float
    coercivity_rhs: float
    params: EnergyParams
    eps_h1_sq: float = 0.0
    weighted_sq: float = 0.0

    @property
    def coercive(self) -> bool:
        return self.coercivity_lhs >= self.coercivity_rhs


def energy_H(state: ModulationState, spec: CoefficientSpec, params: EnergyParams, bundle) -> EnergyDiagnostics:
    params.validate()
    g = bundle.grid
    y = g.x
    n_dim = g.dim
    lam, b, w = state.lam, state.b, state.w[0]
    eps = state.eps.values
    q = bundle.Q.real
    p2 = 2 + 4 / n_dim
    nrm = norms(state.eps)
    h1sq = nrm.h1**2
    ysq = nrm.weighted_l2**2
    Fdef = (np.abs(q + eps) ** p2 - q**p2) / p2 - q ** (p2 - 1) * eps.real
    x = lam * y - w
    gx = _coeff_at(spec, x, "g")
    if gx is not None:
        Fdef = gx * Fdef
    H = 0.5 * h1sq + params.eps2 * b**2 * ysq - float(g.integrate(Fdef))
    Vx = _coeff_at(spec, x, "V")
    if Vx is not None:
        H += 0.5 * lam**2 * float(g.integrate(Vx * np.abs(eps) ** 2))
    rhs = params.mu / 4 * h1sq + params.eps2 * b**2 * ysq
    return EnergyDiagnostics(H=H, S=H / lam**params.m, coercivity_lhs=H, coercivity_rhs=rhs,
                             params=params, eps_h1_sq=h1sq, weighted_sq=ysq)


# --- bootstrap ----------------------------------------------------------------------
def bootstrap_monitor(state: ModulationState, K: int = 8, M: float = 1.1) -> dict[str, bool]:
    """The four bootstrap inequalities at one state."""
    L, _ = bootstrap_exponents(K)
    if not 1 < M < 2 * (L - 1):
        raise ValueError(f"need 1 < M < 2(L-1) = {2 * (L - 1):.4f}")
    s = state.s
    nrm = norms(state.eps)
    q = nrm.h1**2 + state.b**2 * nrm.weighted_l2**2
    return {
        "eps": bool(q < s ** (-2 * L)),
        "lambda": bool(abs(s * state.lam - 1) < s ** (-M)),
        "b": bool(abs(s * state.b - 1) < s ** (-M)),
        "w": bool(np.linalg.norm(state.w) < s ** (-1.5)),
    }


def refined_bootstrap(states: Sequence[ModulationState], K: int = 8) -> dict:
    """One-sided fitted bounds q(s) <= C s^{-(2L+kappa)} and |w| <= C s^{-2} with C = 1."""
    L, kappa = bootstrap_exponents(K)
    s = np.array([st.s for st in states])
    qs = []
    for st in states:
        nrm = norms(st.eps)
        qs.append(nrm.h1**2 + st.b**2 * nrm.weighted_l2**2)
    qs = np.array(qs)
    wn = np.array([np.linalg.norm(st.w) for st in states])
    c_eps = float(np.max(qs * s ** (2 * L + kappa)))
    c_w = float(np.max(wn * s**2))
    slope = math.nan
    sel = wn > 1e-13
    if sel.sum() >= 3:
        slope = float(np.polyfit(np.log(s[sel]), np.log(wn[sel]), 1)[0])
    return {"C_eps": c_eps, "C_w": c_w, "eps_flag": c_eps < 1.0, "w_flag": c_w < 1.0,
            "w_slope": slope, "exponent_eps": 2 * L + kappa}


@dataclass
class MonotonicityReport:
    skipped: bool
    reason: str = ""
    C95: float = math.nan
    fraction_ok: float = math.nan
    dSds: np.ndarray | None = None
    required: np.ndarray | None = None


def energy_monotonicity_check(states: Sequence[ModulationState], energies: Sequence[EnergyDiagnostics],
                              K: int = 8, M: float = 1.1, C_max: float = 1e3,
                              quantile: float = 95.0) -> MonotonicityReport:
    """dS/ds >= -C (b / lambda^m) s^{-(2L+kappa)} along a trajectory."""
    flags = [bootstrap_monitor(st, K, M) for st in states]
    if not all(all(f.values()) for f in flags):
        return MonotonicityReport(skipped=True, reason="bootstrap regime violated")
    L, kappa = bootstrap_exponents(K)
    s = np.array([st.s for st in states])
    _check_monotone(s)
    S = np.array([e.S for e in energies])
    m = energies[0].params.m
    dS = np.empty_like(S)
    for i in range(len(s)):
        lo = min(max(i - 1, 0), len(s) - 3)
        c = fd_weights(s[lo: lo + 3], s[i])
        dS[i] = c @ S[lo: lo + 3]
    scale = np.array([st.b / st.lam**m for st in states]) * s ** (-(2 * L + kappa))
    req = np.maximum(0.0, -dS) / scale
    c95 = float(np.percentile(req, quantile))
    return MonotonicityReport(skipped=False, C95=c95, fraction_ok=float(np.mean(req <= C_max)),
                              dSds=dS, required=req)
