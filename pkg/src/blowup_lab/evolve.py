"""Time integration of i u_t + Delta u + g |u|^{4/N} u - V u = 0 on the periodic line.

Strang splitting: the pointwise flow of g|u|^{4/N}u - Vu keeps |u| fixed and is
integrated exactly as a phase rotation; the free flow is exact in Fourier
space.  Runs toward earlier times use the conjugation symmetry t -> -t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .coeffs import CoefficientSpec, make_coefficients
from .grid_field import ComplexField, SpatialGrid


class BlowupSuspected(RuntimeError):
    """Gradient cap exceeded or non-finite values; ``state`` is the last valid field."""

    def __init__(self, message: str, t: float, state: ComplexField | None):
        super().__init__(message)
        self.t = t
        self.state = state


class StepUnderflow(RuntimeError):
    pass


@dataclass
class EvolveConfig:
    """Integrator settings.

    With ``adapt`` the step is dt0 * (g0/g)^2 where g = ||grad u||_2 and g0 its
    initial value, clipped to at most ``dt_max`` (default dt0, i.e. the step
    can only shrink).
    """

    dt0: float = 1e-4
    t_span: tuple[float, float] = (-1.0, -0.25)
    adapt: bool = True
    dealias: bool = True
    blowup_gradient_cap: float = 1e6
    dt_max: float | None = None
    dt_min: float = 1e-14
    snapshot_times: Sequence[float] | None = None
    record_every: int = 1

    def __post_init__(self):
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if self.t_span[0] == self.t_span[1]:
            raise ValueError("t_start and t_end must differ")
        if self.dt_max is not None and self.dt_max < self.dt0:
            raise ValueError("dt_max must be at least dt0")


@dataclass(frozen=True)
class ConservedReport:
    mass: float
    energy: float
    momentum: tuple[float, ...]
    grad_norm: float = 0.0


class Stepper:
    """Precomputed coefficient samples and Fourier symbols for one (grid, spec)."""

    def __init__(self, grid: SpatialGrid, spec: CoefficientSpec, dealias: bool = True):
        if not grid.periodic:
            raise NotImplementedError("time stepping is implemented for the periodic line (N=1)")
        self.grid = grid
        self.spec = spec
        x = grid.x
        self.V = None if spec.trivial_V else spec.V(x)
        self.g = None if spec.trivial_g else spec.g(x)
        self.power = 2.0 / grid.dim  # |u|^{4/N} = (|u|^2)^{2/N}
        k = grid.k
        self.k2 = k**2
        self.mask = np.abs(k) <= (2.0 / 3.0) * np.abs(k).max() if dealias else None
        self._cache_dt = None

    def potential_phase(self, u: np.ndarray) -> np.ndarray:
        amp = (u.real**2 + u.imag**2) ** self.power
        if self.g is not None:
            amp = self.g * amp
        if self.V is not None:
            amp = amp - self.V
        return amp

    def free_symbol(self, dt: float) -> np.ndarray:
        if self._cache_dt != dt:
            sym = np.exp(-1j * self.k2 * dt)
            if self.mask is not None:
                sym = sym * self.mask
            self._sym = sym
            self._cache_dt = dt
        return self._sym

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        """One forward Strang step of size dt > 0."""
        u = u * np.exp(0.5j * dt * self.potential_phase(u))
        u = sfft.ifft(sfft.fft(u) * self.free_symbol(dt))
        return u * np.exp(0.5j * dt * self.potential_phase(u))

    def grad_norm(self, u: np.ndarray) -> float:
        uh = sfft.fft(u)
        return math.sqrt(self.grid.spacing / self.grid.points * np.sum(self.k2 * np.abs(uh) ** 2))


_STEPPERS: dict = {}


def get_stepper(grid: SpatialGrid, spec: CoefficientSpec, dealias: bool = True) -> Stepper:
    key = (grid, id(spec), dealias)
    st = _STEPPERS.get(key)
    if st is None or st.spec is not spec:
        if len(_STEPPERS) > 16:
            _STEPPERS.clear()
        st = _STEPPERS[key] = Stepper(grid, spec, dealias)
    return st


def step(u: ComplexField, spec: CoefficientSpec, dt: float, dealias: bool = True) -> ComplexField:
    """One Strang step; negative dt steps backward through conjugation."""
    st = get_stepper(u.grid, spec, dealias)
    if dt >= 0:
        new = st.step(u.values, dt)
    else:
        new = np.conj(st.step(np.conj(u.values), -dt))
    if not np.all(np.isfinite(new)):
        raise BlowupSuspected("non-finite values after step", float("nan"), u)
    return u.with_values(new)


# --- exact solutions ------------------------------------------------------------
def ground_state_1d(y: np.ndarray) -> np.ndarray:
    """Closed-form N=1 ground state 3^{1/4} sech(2y)^{1/2}."""
    y = np.asarray(y, dtype=float)
    ay = np.abs(y)
    # sech(2y)^{1/2} written to avoid overflow in cosh for large |y|
    return 3**0.25 * np.sqrt(2.0 * np.exp(-2 * ay) / (1 + np.exp(-4 * ay)))


def exact_pc_solution(t: float, grid: SpatialGrid) -> ComplexField:
    """S(t, x) = |t|^{-N/2} Q(x/t) exp(-i/t) exp(i|x|^2/(4t))."""
    if not t < 0:
        raise ValueError("S(t) is defined for t < 0")
    if not grid.periodic:
        raise NotImplementedError("exact solution sampling is implemented for N=1")
    x = grid.x
    vals = abs(t) ** -0.5 * ground_state_1d(x / t) * np.exp(-1j / t + 1j * x**2 / (4 * t))
    return ComplexField(grid, vals)


def interpolate(u: ComplexField, start: float, step_: float) -> np.ndarray:
    """Band-limited samples of u at start + j*step_, zero outside the box."""
    g = u.grid
    pts = start + step_ * np.arange(g.points)
    vals = g.sample_uniform(u.values, start, step_, g.points)
    vals[np.abs(pts) >= g.half_width] = 0.0
    return vals


def pseudo_conformal(u: ComplexField, t: float, sign: int = 1) -> tuple[ComplexField, float]:
    """Transform a solution sampled at time t into the solution at time -1/t.

    v(-1/t, x) = |t|^{N/2} u(t, sign * x t) exp(-i t |x|^2 / 4).
    Applying it twice returns u(t, x) up to the reflection x -> -x when sign = 1.
    """
    if t == 0:
        raise ValueError("transform undefined at t = 0")
    g = u.grid
    tau = -1.0 / t
    # in terms of the new time tau: |tau|^{-N/2} u(-1/tau, x/tau) e^{i|x|^2/(4 tau)}, x/tau = -x t
    scale = -sign * t
    vals = interpolate(u, scale * g.x[0], scale * g.spacing)
    vals = abs(tau) ** (-g.dim / 2) * vals * np.exp(1j * g.x**2 / (4 * tau))
    return ComplexField(g, vals), tau


# --- conserved quantities -------------------------------------------------------
def conserved(u: ComplexField, spec: CoefficientSpec) -> ConservedReport:
    g = u.grid
    v = u.values
    n_dim = g.dim
    mass = g.l2sq(v)
    grad_sq = g.grad_sq(v)
    x = g.x
    dens = np.abs(v) ** (2 + 4 / n_dim)
    if not spec.trivial_g:
        dens = spec.g(x) * dens
    energy = 0.5 * grad_sq - float(g.integrate(dens)) / (2 + 4 / n_dim)
    if not spec.trivial_V:
        energy += 0.5 * float(g.integrate(spec.V(x) * np.abs(v) ** 2))
    if np.all(v.imag == 0):
        mom = 0.0
    else:
        mom = float(np.imag(g.integrate(v * np.conj(g.deriv(v))))) if g.periodic else 0.0
    return ConservedReport(mass, float(energy), (mom,), math.sqrt(grad_sq))


def momentum_rate(u: ComplexField, spec: CoefficientSpec) -> float:
    """d/dt Im int u grad(conj u) = int (V' |u|^2 - g' |u|^{2+4/N} / (1 + 2/N))."""
    g = u.grid
    x = g.x
    a2 = np.abs(u.values) ** 2
    rate = 0.0
    if not spec.trivial_V:
        rate += float(g.integrate(spec.V(x, 1) * a2))
    if not spec.trivial_g:
        rate -= float(g.integrate(spec.g(x, 1) * a2 ** (1 + 2 / g.dim))) / (1 + 2 / g.dim)
    return rate


# --- driver -------------------------------------------------------------------
@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    snapshots: list[ComplexField] = field(default_factory=list)
    reports: list[ConservedReport] = field(default_factory=list)
    snapshot_dt: list[float] = field(default_factory=list)
    log_t: list[float] = field(default_factory=list)
    log_dt: list[float] = field(default_factory=list)
    log_grad: list[float] = field(default_factory=list)
    steps: int = 0
    terminated: str = "t_end"

    def drift(self) -> dict:
        if not self.reports:
            return {"mass": 0.0, "energy": 0.0}
        m0, e0 = self.reports[0].mass, self.reports[0].energy
        return {
            "mass": max(abs(r.mass - m0) for r in self.reports) / m0,
            "energy": max(abs(r.energy - e0) for r in self.reports) / max(abs(e0), 1e-300),
        }


def evolve_interval(u0: ComplexField, spec: CoefficientSpec, cfg: EvolveConfig) -> Trajectory:
    """Integrate from t_span[0] to t_span[1] (either direction).

    Snapshots are taken at the start, at every requested snapshot time inside
    the span (steps are shortened to land on them) and at the end.
    """
    t_start, t_end = cfg.t_span
    direction = 1.0 if t_end > t_start else -1.0
    st = get_stepper(u0.grid, spec, cfg.dealias)
    # Work with the forward-oriented variable: conj(u) when going backward.
    u = u0.values if direction > 0 else np.conj(u0.values)
    targets = sorted(
        (tt for tt in (cfg.snapshot_times or []) if (tt - t_start) * direction > 0
         and (t_end - tt) * direction > 0),
        key=lambda tt: (tt - t_start) * direction,
    )
    targets.append(t_end)
    traj = Trajectory()

    last_dt = [cfg.dt0]

    def record(t, vals):
        f = ComplexField(u0.grid, vals if direction > 0 else np.conj(vals))
        traj.snapshot_dt.append(last_dt[0])
        traj.times.append(t)
        traj.snapshots.append(f)
        traj.reports.append(conserved(f, spec))

    record(t_start, u)
    g0 = st.grad_norm(u)
    dt_max = cfg.dt_max if cfg.dt_max is not None else cfg.dt0
    tau, tau_end = 0.0, abs(t_end - t_start)
    tgt = 0
    while tgt < len(targets):
        gn = st.grad_norm(u)
        if not np.isfinite(gn) or gn > cfg.blowup_gradient_cap:
            traj.terminated = "blowup_cap"
            raise BlowupSuspected(f"gradient norm {gn:.3e} exceeds cap", t_start + direction * tau,
                                  traj.snapshots[-1])
        dt = cfg.dt0 * (g0 / gn) ** 2 if cfg.adapt else cfg.dt0
        dt = min(dt, dt_max)
        if dt < cfg.dt_min:
            raise StepUnderflow(f"step size {dt:.3e} below dt_min")
        goal = abs(targets[tgt] - t_start)
        hit = False
        if tau + dt >= goal - 1e-14 * max(1.0, goal):
            dt = goal - tau
            hit = True
        if dt > 0:
            u = st.step(u, dt)
            traj.steps += 1
            if traj.steps % cfg.record_every == 0:
                traj.log_t.append(t_start + direction * (tau + dt))
                traj.log_dt.append(dt)
                traj.log_grad.append(gn)
        tau = goal if hit else tau + dt
        if not hit:
            last_dt[0] = dt
        if hit:
            if not np.all(np.isfinite(u)):
                raise BlowupSuspected("non-finite values", t_start + direction * tau, traj.snapshots[-1])
            record(targets[tgt], u)
            tgt += 1
    return traj


def default_spec() -> CoefficientSpec:
    return make_coefficients("free")
