"""The backward-integration construction as a numerical experiment.

A run starts from the exact modulated profile at t1 < 0 (lambda = b = -t1),
integrates toward t0 < t1, decomposes every snapshot and records the
modulation parameters, Mod(s), modified energies and bootstrap flags.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .coeffs import CoefficientSpec, make_coefficients
from .evolve import EvolveConfig, conserved, evolve_interval, exact_pc_solution, ConservedReport
from .grid_field import ComplexField, SpatialGrid, norms
from .linops import estimate_mu
from .modulation import (EnergyDiagnostics, EnergyParams, ModulationState, ModVector, OutsideTube,
                         bootstrap_exponents, bootstrap_monitor, decompose, energy_H,
                         energy_monotonicity_check, mod_series, refined_bootstrap, rescaled_time)
from .profiles import build_bundle

log = logging.getLogger(__name__)


class InsufficientWindow(ValueError):
    pass


@dataclass
class ExperimentConfig:
    spec: CoefficientSpec = field(default_factory=lambda: make_coefficients("free"))
    t1: float = -0.025
    t0: float = -0.5
    K: int = 8
    M: float = 1.1
    s0: float = 10.0
    phys_points: int = 8192
    phys_half_width: float = 12.8
    phys_decay_scale: float = 0.5
    profile_points: int = 1024
    profile_half_width: float = 32.0
    ds: float = 5e-4
    snapshot_ds: float = 0.25
    dealias: bool = True
    delta: float = 0.2
    ortho_tol: float = 1e-10
    eps1: float = 0.05
    m: float | None = None
    eps2: float | None = None
    mod_stencil: int = 5
    tn_schedule: tuple[float, ...] = (-0.1, -0.07, -0.049, -0.0343)
    threads: int = 1

    def __post_init__(self):
        if not self.t0 < self.t1 < 0:
            raise ValueError("need t0 < t1 < 0")
        if self.K < 4:
            raise ValueError("K must be at least 4")
        L, _ = bootstrap_exponents(self.K)
        if not 1 < self.M < 2 * (L - 1):
            raise ValueError(f"need 1 < M < 2(L-1) = {2 * (L - 1):.4f}")

    @property
    def s1(self) -> float:
        return -1.0 / self.t1

    def phys_grid(self) -> SpatialGrid:
        return SpatialGrid.line(self.phys_points, self.phys_half_width, decay_scale=self.phys_decay_scale)

    def profile_grid(self) -> SpatialGrid:
        return SpatialGrid.line(self.profile_points, self.profile_half_width)

    def with_anchor(self, t1: float) -> "ExperimentConfig":
        d = dict(self.__dict__)
        d["t1"] = t1
        return ExperimentConfig(**d)


@lru_cache(maxsize=4)
def _bundle_and_mu(grid: SpatialGrid):
    bundle = build_bundle(grid)
    mu = estimate_mu(bundle).mu
    return bundle, mu


def profile_setup(cfg: ExperimentConfig):
    return _bundle_and_mu(cfg.profile_grid())


def energy_params(cfg: ExperimentConfig, mu: float) -> EnergyParams:
    L, _ = bootstrap_exponents(cfg.K)
    m = cfg.m if cfg.m is not None else (1 + cfg.eps1) + L
    eps2 = cfg.eps2 if cfg.eps2 is not None else m * mu * cfg.eps1 / 32
    return EnergyParams(m=m, eps1=cfg.eps1, eps2=eps2, L=L, mu=mu).validate()


def initial_data(t1: float, grid: SpatialGrid) -> ComplexField:
    """lambda1^{-N/2} Q(x/lambda1) exp(-i b1 |x|^2 / (4 lambda1^2)) with lambda1 = b1 = -t1."""
    if not t1 < 0:
        raise ValueError("t1 must be negative")
    lam = -t1
    x = grid.x
    from .evolve import ground_state_1d

    vals = lam**-0.5 * ground_state_1d(x / lam) * np.exp(-1j * lam * x**2 / (4 * lam**2))
    return ComplexField(grid, vals)


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    s: np.ndarray
    states: list[ModulationState]
    mods: list[ModVector | None]
    conserved: list[ConservedReport]
    energies: list[EnergyDiagnostics]
    flags: list[dict]
    refined: dict
    mu: float
    params: EnergyParams
    s_star: float | None = None
    stop_reason: str = "t0"
    steps: int = 0
    drift: dict = field(default_factory=dict)
    final_field: ComplexField | None = None
    fields: list[ComplexField] | None = None
    label: str = ""

    def __len__(self) -> int:
        return len(self.states)

    def column(self, name: str) -> np.ndarray:
        getters = {
            "lambda": lambda st: st.lam,
            "b": lambda st: st.b,
            "gamma": lambda st: st.gamma,
            "w": lambda st: st.w[0],
        }
        return np.array([getters[name](st) for st in self.states])

    def mod_norms(self) -> np.ndarray:
        return np.array([m.norm if m is not None else math.nan for m in self.mods])

    def regime_mask(self, s0: float) -> np.ndarray:
        return self.s >= s0 - 1e-12

    def rows(self) -> list[dict]:
        out = []
        for i, st in enumerate(self.states):
            nrm = norms(st.eps)
            m = self.mods[i]
            row = {
                "t": self.t[i], "s": self.s[i], "lambda": st.lam, "b": st.b,
                "gamma_unwrapped": st.gamma, "w": st.w[0],
                "eps_h1": nrm.h1, "eps_weighted_l2": nrm.weighted_l2,
                "mod_norm": m.norm if m is not None else math.nan,
                "H": self.energies[i].H, "S": self.energies[i].S,
                "mass": self.conserved[i].mass, "energy": self.conserved[i].energy,
                "flags": "".join("1" if v else "0" for v in self.flags[i].values()),
            }
            out.append(row)
        return out


def _snapshot_times(cfg: ExperimentConfig) -> list[float]:
    s_end = -1.0 / cfg.t0
    n = int(math.floor((cfg.s1 - s_end) / cfg.snapshot_ds + 1e-9))
    s_vals = cfg.s1 - cfg.snapshot_ds * np.arange(1, n + 1)
    return [float(-1.0 / s) for s in s_vals if s > s_end + 1e-9]


def run_construction(cfg: ExperimentConfig, keep_fields: bool = False) -> TrajectoryRecord:
    """Integrate from t1 back to t0 and decompose at a cadence uniform in s."""
    bundle, mu = profile_setup(cfg)
    params = energy_params(cfg, mu)
    pg = cfg.phys_grid()
    u1 = initial_data(cfg.t1, pg)
    dt0 = cfg.ds * cfg.t1**2
    ev = EvolveConfig(dt0=dt0, t_span=(cfg.t1, cfg.t0), adapt=True, dealias=cfg.dealias,
                      dt_max=1.0, snapshot_times=_snapshot_times(cfg), record_every=100)
    traj = evolve_interval(u1, cfg.spec, ev)

    states: list[ModulationState] = []
    guess = ModulationState.guess(-cfg.t1, -cfg.t1, 0.0, 0.0)
    stop = "t0"
    for k, (t, u) in enumerate(zip(traj.times, traj.snapshots)):
        if len(states) >= 2:
            # linear extrapolation in t of the previous two parameter sets
            a, b_ = states[-2], states[-1]
            r = (t - b_.t) / (b_.t - a.t)
            p = b_.params + r * (b_.params - a.params)
            guess = ModulationState(lam=max(p[0], 0.5 * b_.lam), b=p[1], gamma=p[2], w=(p[3],))
        try:
            st = decompose(u, guess.with_time(t=t), bundle, ortho_tol=cfg.ortho_tol, delta=cfg.delta)
        except OutsideTube as exc:
            log.warning("tube exit at t=%.5f: %s", t, exc)
            stop = "tube_exit"
            break
        states.append(st.with_time(t=t))
        guess = st
    n = len(states)
    t_arr = np.array([st.t for st in states])
    s_arr = rescaled_time(t_arr, [st.lam for st in states], t1=cfg.t1, s1=cfg.s1)
    states = [st.with_time(s=float(s)) for st, s in zip(states, s_arr)]

    flags = [bootstrap_monitor(st, cfg.K, cfg.M) for st in states]
    s_star = None
    for i, f in enumerate(flags):
        if s_arr[i] >= cfg.s0 and not all(f.values()):
            s_star = float(s_arr[i])
            stop = "bootstrap_exit"
            n = i
            break
    states, flags, t_arr, s_arr = states[:n], flags[:n], t_arr[:n], s_arr[:n]
    reports = traj.reports[:n]

    mods: list[ModVector | None] = [None] * n
    if n >= cfg.mod_stencil:
        idx, vecs = mod_series(states, cfg.mod_stencil)
        for i, v in zip(idx, vecs):
            mods[i] = v
    energies = [energy_H(st, cfg.spec, params, bundle) for st in states]
    in_regime = [st for st in states if st.s >= cfg.s0]
    refined = refined_bootstrap(in_regime, cfg.K) if in_regime else {}
    rec = TrajectoryRecord(
        t=t_arr, s=s_arr, states=states, mods=mods, conserved=reports, energies=energies,
        flags=flags, refined=refined, mu=mu, params=params, s_star=s_star, stop_reason=stop,
        steps=traj.steps, drift=traj.drift(), final_field=traj.snapshots[n - 1] if n else None,
        fields=traj.snapshots[:n] if keep_fields else None, label=cfg.spec.name,
    )
    return rec


# --- fits --------------------------------------------------------------------------
@dataclass
class RateFit:
    name: str
    exponent: float
    window: tuple[float, float]
    residual: float
    samples: int


def _fit(name: str, xfit: np.ndarray, yfit: np.ndarray, s: np.ndarray, discard: float = 0.1,
         min_decades: float = 0.5) -> RateFit:
    """Weighted log-log fit; drops the ``discard`` fraction of the window nearest s1."""
    ok = np.isfinite(xfit) & np.isfinite(yfit) & (xfit > 0) & (yfit > 0)
    xfit, yfit, s = xfit[ok], yfit[ok], s[ok]
    if len(s) < 3:
        raise InsufficientWindow(f"{name}: too few samples")
    lo, hi = s.min(), s.max()
    cut = hi - discard * (hi - lo)
    keep = s <= cut
    xfit, yfit, s = xfit[keep], yfit[keep], s[keep]
    if len(s) < 3 or math.log10(s.max() / s.min()) < min_decades:
        raise InsufficientWindow(f"{name}: window spans less than {min_decades} decades of s")
    lx, ly = np.log(xfit), np.log(yfit)
    order = np.argsort(lx)
    lx, ly = lx[order], ly[order]
    wts = np.gradient(lx) if len(lx) > 1 else np.ones_like(lx)
    wts = np.abs(wts) + 1e-300
    coef = np.polyfit(lx, ly, 1, w=np.sqrt(wts))
    resid = float(np.sqrt(np.average((np.polyval(coef, lx) - ly) ** 2, weights=wts)))
    return RateFit(name, float(coef[0]), (float(s.min()), float(s.max())), resid, int(len(s)))


def rate_fits(record: TrajectoryRecord, s_min: float | None = None, noise_floor: float = 1e-12) -> list[RateFit]:
    s = record.s
    sel = np.ones(len(s), bool) if s_min is None else s >= s_min
    t = np.abs(record.t)
    out = [
        _fit("lambda_vs_t", t[sel], record.column("lambda")[sel], s[sel]),
        _fit("b_vs_t", t[sel], record.column("b")[sel], s[sel]),
    ]
    mod = record.mod_norms()
    out.append(_fit("mod_vs_s", s[sel], mod[sel], s[sel]))
    eh = np.array([norms(st.eps).h1 for st in record.states])
    good = sel & (eh > noise_floor)
    if good.sum() >= 3:
        try:
            out.append(_fit("eps_h1_vs_s", s[good], eh[good], s[good]))
        except InsufficientWindow:
            pass
    w = np.abs(record.column("w"))
    good = sel & (w > noise_floor)
    if good.sum() >= 3:
        try:
            out.append(_fit("w_vs_s", s[good], w[good], s[good]))
        except InsufficientWindow:
            pass
    return out


@dataclass
class MomentumReport:
    values: np.ndarray
    s: np.ndarray
    C: float
    slope: float
    below_floor: bool
    passed: bool


def momentum_diagnostic(record: TrajectoryRecord, bundle=None, floor: float = 1e-12,
                        C_max: float = 1e2) -> MomentumReport:
    """(Im eps, grad Q)_2 along the run with a one-sided s^{-2} fit."""
    if bundle is None:
        bundle = _bundle_for(record)
    g = bundle.grid
    dq = bundle.gradQ[0].real
    vals = np.array([g.inner(st.eps.imag, dq) for st in record.states])
    s = record.s
    C = float(np.max(np.abs(vals) * s**2)) if len(s) else 0.0
    big = np.abs(vals) > floor
    slope = math.nan
    if big.sum() >= 3 and math.log10(s[big].max() / s[big].min()) > 0.3:
        slope = float(np.polyfit(np.log(s[big]), np.log(np.abs(vals[big])), 1)[0])
    below = not np.any(big)
    passed = C < C_max and (below or (np.isfinite(slope) and slope <= -1.5))
    return MomentumReport(vals, s, C, slope, below, bool(passed))


def _bundle_for(record: TrajectoryRecord):
    st = record.states[0]
    return _bundle_and_mu(st.eps.grid)[0]


@dataclass
class IntervalReport:
    sandwich_ok: bool
    defect: np.ndarray
    max_defect: float
    slope: float
    slope_ok: bool


def interval_conversion_check(record: TrajectoryRecord, M: float = 1.1, floor: float = 1e-11) -> IntervalReport:
    t = np.abs(record.t)
    inv = 1.0 / record.s
    sandwich = bool(np.all((0.5 * t <= inv) & (inv <= 2 * t)))
    defect = np.abs(inv - t)
    big = defect > floor * t
    slope = math.nan
    if big.sum() >= 3:
        slope = float(np.polyfit(np.log(t[big]), np.log(defect[big]), 1)[0])
    slope_ok = bool((not big.any()) or (np.isfinite(slope) and slope >= M + 1 - 0.5))
    return IntervalReport(sandwich, defect, float(defect.max()) if len(defect) else 0.0, slope, slope_ok)


# --- limit sequence ------------------------------------------------------------------
@dataclass
class LimitReport:
    t_n: list[float]
    t0: float
    distances_to_S: list[float] | None
    aligned_distances_to_S: list[float] | None
    successive: list[float]
    ratios: list[float]
    pairwise: np.ndarray
    limit_mass: float
    q_mass: float
    limit_field: ComplexField | None
    failed: list[tuple[float, str]]
    monotone: bool
    cauchy: bool


def _aligned_distance(a: np.ndarray, b: np.ndarray, grid: SpatialGrid) -> float:
    """min over theta of ||a - e^{i theta} b||_2."""
    z = np.sum(grid.weights * a * np.conj(b))
    theta = np.angle(z)
    return math.sqrt(grid.l2sq(a - np.exp(1j * theta) * b))


def limit_sequence(cfg: ExperimentConfig, t_n=None) -> LimitReport:
    """Run the construction from each anchor t_n back to t0 and compare the fields at t0."""
    t_n = list(t_n if t_n is not None else cfg.tn_schedule)
    if len(t_n) < 4:
        raise ValueError("limit sequence needs at least 4 anchors")
    pg = cfg.phys_grid()

    def member(tn):
        return run_construction(cfg.with_anchor(tn))

    results, failed = {}, []
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            futs = {tn: ex.submit(member, tn) for tn in t_n}
            for tn, f in futs.items():
                try:
                    results[tn] = f.result()
                except Exception as exc:  # partial report
                    failed.append((tn, repr(exc)))
    else:
        for tn in t_n:
            try:
                results[tn] = member(tn)
            except Exception as exc:
                failed.append((tn, repr(exc)))
    ok = [tn for tn in t_n if tn in results and results[tn].stop_reason != "tube_exit"
          and abs(results[tn].t[-1] - cfg.t0) < 1e-12]
    for tn in t_n:
        if tn in results and tn not in ok:
            failed.append((tn, results[tn].stop_reason))
    fields = [results[tn].final_field.values for tn in ok]
    ref = None
    if cfg.spec.trivial_V and cfg.spec.trivial_g:
        ref = exact_pc_solution(cfg.t0, pg).values
    dist = [math.sqrt(pg.l2sq(f - ref)) for f in fields] if ref is not None else None
    adist = [_aligned_distance(f, ref, pg) for f in fields] if ref is not None else None
    k = len(fields)
    pair = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            pair[i, j] = pair[j, i] = math.sqrt(pg.l2sq(fields[i] - fields[j]))
    succ = [pair[i, i + 1] for i in range(k - 1)]
    ratios = [succ[i + 1] / succ[i] for i in range(len(succ) - 1) if succ[i] > 0]
    limit = None
    mass = math.nan
    if k >= 2:
        # Geometric (Aitken-type) extrapolation after removing the global phase.
        last = fields[-1]
        prev = fields[-2]
        z = np.sum(pg.weights * last * np.conj(prev))
        prev = prev * np.exp(1j * np.angle(z))
        d_last = math.sqrt(pg.l2sq(last - prev))
        r = 0.0
        if k >= 3:
            pp = fields[-3] * np.exp(1j * np.angle(np.sum(pg.weights * last * np.conj(fields[-3]))))
            d_prev = math.sqrt(pg.l2sq(prev - pp))
            r = d_last / d_prev if d_prev > 0 else 0.0
            r = r if r < 1 else 0.0
        limit_vals = last + (last - prev) * (r / (1 - r))
        limit = ComplexField(pg, limit_vals)
        mass = pg.l2sq(limit_vals)
    bundle, _ = profile_setup(cfg)
    qm = bundle.mass
    monotone = bool(dist is not None and all(dist[i + 1] < dist[i] for i in range(len(dist) - 1)))
    cauchy = bool(ratios and all(r < 1 for r in ratios))
    return LimitReport(ok, cfg.t0, dist, adist, succ, ratios, pair, mass, qm, limit, failed,
                       monotone, cauchy)
