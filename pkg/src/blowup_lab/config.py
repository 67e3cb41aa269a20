"""Run configuration: a single TOML document with six sections.

[grid]          dim, points, half_width, tail_tol
[coefficients]  name plus any parameters of that builtin (e.g. amplitude)
[evolve]        dt0, t_start, t_end, adapt, dealias, blowup_gradient_cap, dt_max
[modulation]    K, M, delta, ortho_tol, m, eps1, eps2, mu
[experiment]    t1, t0, t_n, s0, ds, snapshot_ds, physical/profile grids, sweep_amplitudes
[output]        directory, snapshot_cadence, plots

Every section is optional; omitted keys take the defaults below.  Optional
numeric keys (m, eps2, mu, dt_max) are simply left out when unset.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .coeffs import BUILTINS, CoefficientSpec, make_coefficients


class ConfigError(ValueError):
    """Raised with every violation found, not just the first."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass
class GridSection:
    dim: int = 1
    points: int = 1024
    half_width: float = 32.0
    tail_tol: float = 1e-6


@dataclass
class CoefficientSection:
    name: str = "free"
    params: dict = field(default_factory=dict)


@dataclass
class EvolveSection:
    dt0: float = 1e-4
    t_start: float = -1.0
    t_end: float = -0.25
    adapt: bool = True
    dealias: bool = True
    blowup_gradient_cap: float = 1e6
    dt_max: float | None = None


@dataclass
class ModulationSection:
    K: int = 8
    M: float = 1.1
    delta: float = 0.2
    ortho_tol: float = 1e-10
    m: float | None = None
    eps1: float = 0.05
    eps2: float | None = None
    mu: float | None = None


@dataclass
class ExperimentSection:
    t1: float = -0.025
    t0: float = -0.5
    t_n: list = field(default_factory=lambda: [-0.1, -0.07, -0.049, -0.0343])
    s0: float = 10.0
    ds: float = 5e-4
    snapshot_ds: float = 0.25
    phys_points: int = 8192
    phys_half_width: float = 12.8
    phys_decay_scale: float = 0.5
    profile_points: int = 1024
    profile_half_width: float = 32.0
    limit_sequence: bool = False
    sweep_amplitudes: list = field(default_factory=lambda: [0.05, 0.1, 0.2])


@dataclass
class OutputSection:
    directory: str = "out"
    snapshot_cadence: float = 0.05
    plots: bool = True


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    coefficients: CoefficientSection = field(default_factory=CoefficientSection)
    evolve: EvolveSection = field(default_factory=EvolveSection)
    modulation: ModulationSection = field(default_factory=ModulationSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    output: OutputSection = field(default_factory=OutputSection)

    def spec(self) -> CoefficientSpec:
        return make_coefficients(self.coefficients.name, **self.coefficients.params)

    def experiment_config(self, threads: int = 1, spec: CoefficientSpec | None = None):
        from .experiment import ExperimentConfig

        e, mo = self.experiment, self.modulation
        return ExperimentConfig(
            spec=spec if spec is not None else self.spec(), t1=e.t1, t0=e.t0, K=mo.K, M=mo.M,
            s0=e.s0, phys_points=e.phys_points, phys_half_width=e.phys_half_width,
            phys_decay_scale=e.phys_decay_scale, profile_points=e.profile_points,
            profile_half_width=e.profile_half_width, ds=e.ds, snapshot_ds=e.snapshot_ds,
            delta=mo.delta, ortho_tol=mo.ortho_tol, eps1=mo.eps1, m=mo.m, eps2=mo.eps2,
            tn_schedule=tuple(e.t_n), threads=threads,
        )


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}
_SECTION_CLASSES = {
    "grid": GridSection, "coefficients": CoefficientSection, "evolve": EvolveSection,
    "modulation": ModulationSection, "experiment": ExperimentSection, "output": OutputSection,
}


@lru_cache(maxsize=1)
def reference_mu() -> float:
    """Coercivity constant on a moderate N=1 grid, used when the config does not set mu."""
    from .grid_field import SpatialGrid
    from .linops import estimate_mu
    from .profiles import build_bundle

    return estimate_mu(build_bundle(SpatialGrid.line(512, 20.0))).mu


def _coerce(cls, raw: dict, section: str, errors: list[str]):
    known = {f.name: f for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    if cls is CoefficientSection:
        kwargs["name"] = raw.get("name", "free")
        kwargs["params"] = {k: v for k, v in raw.items() if k != "name"}
        return cls(**kwargs)
    for key, val in raw.items():
        if key not in known:
            errors.append(f"[{section}] unknown key {key!r}")
            continue
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(val, bool):
                errors.append(f"[{section}] {key} must be a boolean")
                continue
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(val, int) or isinstance(val, bool):
                errors.append(f"[{section}] {key} must be an integer")
                continue
        elif isinstance(default, float) or default is None:
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                errors.append(f"[{section}] {key} must be a number")
                continue
            val = float(val)
        elif isinstance(default, list):
            if not isinstance(val, list):
                errors.append(f"[{section}] {key} must be an array")
                continue
        kwargs[key] = val
    return cls(**kwargs)


def validate(cfg: RunConfig) -> list[str]:
    """All constraint violations of a config (empty when valid)."""
    from .modulation import bootstrap_exponents

    errs: list[str] = []
    g = cfg.grid
    if g.dim < 1:
        errs.append("[grid] dim must be a positive integer")
    if g.points < 16:
        errs.append("[grid] points must be at least 16")
    if not g.half_width > 0:
        errs.append("[grid] half_width must be positive")
    if not 0 < g.tail_tol < 1:
        errs.append("[grid] tail_tol must lie in (0, 1)")

    c = cfg.coefficients
    if c.name not in BUILTINS:
        errs.append(f"[coefficients] unknown coefficient spec {c.name!r} (known: {', '.join(sorted(BUILTINS))})")
    else:
        try:
            make_coefficients(c.name, **c.params)
        except (TypeError, ValueError) as exc:
            errs.append(f"[coefficients] bad parameters for {c.name!r}: {exc}")

    ev = cfg.evolve
    if not ev.dt0 > 0:
        errs.append("[evolve] dt0 must be positive")
    if ev.t_start == ev.t_end:
        errs.append("[evolve] t_start and t_end must differ")
    if ev.dt_max is not None and ev.dt_max < ev.dt0:
        errs.append("[evolve] dt_max must be at least dt0")
    if not ev.blowup_gradient_cap > 0:
        errs.append("[evolve] blowup_gradient_cap must be positive")

    mo = cfg.modulation
    L = None
    if mo.K < 4:
        errs.append("[modulation] K must be an integer >= 4")
    else:
        L, _ = bootstrap_exponents(mo.K)
        if not 1 < mo.M < 2 * (L - 1):
            errs.append(f"[modulation] M = {mo.M} violates 1 < M < 2(L-1) = {2 * (L - 1):.6g} (L = 3/2 + 1/K)")
    if not 0 < mo.delta < 1:
        errs.append("[modulation] delta must lie in (0, 1)")
    if not mo.ortho_tol > 0:
        errs.append("[modulation] ortho_tol must be positive")
    if not 0 < mo.eps1 < 1:
        errs.append("[modulation] eps1 must lie in (0, 1)")
    if mo.mu is not None and not mo.mu > 0:
        errs.append("[modulation] mu must be positive")
    if L is not None and 0 < mo.eps1 < 1:
        m = mo.m if mo.m is not None else (1 + mo.eps1) + L
        if not 1 + mo.eps1 < m / 2 < L:
            errs.append(f"[modulation] m = {m} violates 1 + eps1 < m/2 < L with eps1 = {mo.eps1}, "
                        f"L = {L:.6g}")
        if mo.eps2 is not None:
            mu = mo.mu if mo.mu is not None else reference_mu()
            bound = m * mu * mo.eps1 / 16
            if not 0 < mo.eps2 < bound:
                errs.append(f"[modulation] eps2 = {mo.eps2} violates 0 < eps2 < m*mu*eps1/16 = {bound:.6g} "
                            f"(mu = {mu:.6g})")

    ex = cfg.experiment
    if not ex.t0 < ex.t1 < 0:
        errs.append("[experiment] need t0 < t1 < 0")
    tn = ex.t_n
    if not all(isinstance(v, (int, float)) and v < 0 for v in tn):
        errs.append("[experiment] t_n entries must be negative numbers")
    elif len(tn) < 4:
        errs.append("[experiment] t_n needs at least 4 members")
    elif not all(abs(tn[i + 1]) < abs(tn[i]) for i in range(len(tn) - 1)):
        errs.append("[experiment] t_n must increase toward 0")
    elif any(v <= ex.t0 for v in tn):
        errs.append("[experiment] t_n entries must lie after t0")
    if not ex.s0 > 0:
        errs.append("[experiment] s0 must be positive")
    if not ex.ds > 0 or not ex.snapshot_ds > 0:
        errs.append("[experiment] ds and snapshot_ds must be positive")
    if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in ex.sweep_amplitudes):
        errs.append("[experiment] sweep_amplitudes must be numbers")

    if not cfg.output.snapshot_cadence > 0:
        errs.append("[output] snapshot_cadence must be positive")
    return errs


def from_dict(doc: dict) -> RunConfig:
    errors: list[str] = []
    sections = {}
    for name, raw in doc.items():
        if name not in _SECTION_CLASSES:
            errors.append(f"unknown section [{name}]")
            continue
        if not isinstance(raw, dict):
            errors.append(f"[{name}] must be a table")
            continue
        sections[name] = _coerce(_SECTION_CLASSES[name], raw, name, errors)
    if errors:
        raise ConfigError(errors)
    cfg = RunConfig(**sections)
    errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def loads(text: str) -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli messages end with "(at line L, column C)"
        raise ConfigError([f"parse error: {exc}"]) from exc
    return from_dict(doc)


def parse_config(path) -> RunConfig:
    return loads(Path(path).read_text())


def to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in _SECTION_CLASSES:
        sec = asdict(getattr(cfg, name))
        if name == "coefficients":
            sec = {"name": sec["name"], **sec["params"]}
        out[name] = {k: v for k, v in sec.items() if v is not None}
    return out


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
