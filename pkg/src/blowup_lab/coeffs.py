"""Potentials V and inhomogeneities g, their assumption checks, and the error term Psi.

Coefficients are one-variable closed forms in x (the line) or r = |x| (radial
grids).  Derivatives come from sympy when an expression is available and from
fourth-order central differences otherwise.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy

from .grid_field import ComplexField, SpatialGrid

log = logging.getLogger(__name__)

X = sympy.Symbol("x", real=True)


def _fd_derivative(f: Callable, order: int, h: float) -> Callable:
    """Fourth-order central difference, applied ``order`` times."""
    if order == 0:
        return f
    inner = _fd_derivative(f, order - 1, h)

    def d(x):
        x = np.asarray(x, dtype=float)
        return (-inner(x + 2 * h) + 8 * inner(x + h) - 8 * inner(x - h) + inner(x - 2 * h)) / (12 * h)

    return d


def _lambdify(expr) -> Callable:
    fn = sympy.lambdify(X, expr, "numpy")

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy()

    return f


@dataclass
class CoefficientSpec:
    """A named pair (V, g).

    Either sympy expressions in ``x`` or plain callables may be supplied; the
    derivative tables are filled accordingly.  ``shift`` is the constant that
    was subtracted from V to make V(0) = 0.
    """

    name: str
    V_expr: object = None
    g_expr: object = None
    V_fn: Callable | None = None
    g_fn: Callable | None = None
    params: dict = field(default_factory=dict)
    shift: float = 0.0
    fd_step: float = 1e-3
    expected: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.V_expr is None and self.V_fn is None:
            self.V_expr = sympy.Integer(0)
        if self.g_expr is None and self.g_fn is None:
            self.g_expr = sympy.Integer(1)
        if self.V_expr is not None:
            v0 = float(self.V_expr.subs(X, 0))
            if v0 != 0.0:
                self.shift += v0
                self.V_expr = self.V_expr - v0
        elif self.V_fn is not None:
            v0 = float(self.V_fn(np.zeros(1))[0])
            if v0 != 0.0:
                base = self.V_fn
                self.shift += v0
                self.V_fn = lambda x: base(x) - v0
        self._cache: dict = {}

    def _derivs(self, which: str, order: int) -> Callable:
        key = (which, order)
        if key not in self._cache:
            expr = self.V_expr if which == "V" else self.g_expr
            if expr is not None:
                self._cache[key] = _lambdify(sympy.diff(expr, X, order))
            else:
                base = self.V_fn if which == "V" else self.g_fn
                self._cache[key] = _fd_derivative(base, order, self.fd_step)
        return self._cache[key]

    def V(self, x, order: int = 0) -> np.ndarray:
        return self._derivs("V", order)(x)

    def g(self, x, order: int = 0) -> np.ndarray:
        return self._derivs("g", order)(x)

    @property
    def trivial_V(self) -> bool:
        return self.V_expr is not None and self.V_expr == 0

    @property
    def trivial_g(self) -> bool:
        return self.g_expr is not None and self.g_expr == 1

    def scaled(self, factor: float) -> "CoefficientSpec":
        """Same g, potential multiplied by ``factor``."""
        if self.V_expr is None:
            base = self.V_fn
            return CoefficientSpec(self.name, g_expr=self.g_expr, g_fn=self.g_fn,
                                   V_fn=lambda x: factor * base(x), params=dict(self.params),
                                   shift=factor * self.shift, expected=dict(self.expected))
        return CoefficientSpec(self.name, V_expr=factor * self.V_expr, g_expr=self.g_expr,
                               g_fn=self.g_fn, params=dict(self.params),
                               shift=factor * self.shift, expected=dict(self.expected))


def _free():
    return CoefficientSpec("free", expected={"all": True})


def _oscillating_V(amplitude: float = 1.0):
    expr = amplitude * sympy.cos(X**4) / (1 + X**2)
    return CoefficientSpec("oscillating_V", V_expr=expr, params={"amplitude": amplitude},
                           expected={"all": True})


def _oscillating_g():
    return CoefficientSpec("oscillating_g", g_expr=sympy.cos(X**4) / (1 + X**4), expected={"all": True})


def _affine_quadratic_V(c1: float = 0.0, c2: float = 1.0, truncation: float | None = None):
    if truncation:
        t = sympy.Float(truncation)
        z = t * sympy.tanh(X / t)
    else:
        z = X
    expr = c1 * z + sympy.Rational(1, 2) * c2 * z**2
    return CoefficientSpec("affine_quadratic_V", V_expr=expr,
                           params={"c1": c1, "c2": c2, "truncation": truncation},
                           expected={"all": True})


def _poly_g(c: float = 1.0):
    return CoefficientSpec("poly_g", g_expr=1 + c * X**2, params={"c": c},
                           expected={"all": False, "gflat": False, "gint": False})


BUILTINS: dict[str, Callable[..., CoefficientSpec]] = {
    "free": _free,
    "oscillating_V": _oscillating_V,
    "oscillating_g": _oscillating_g,
    "affine_quadratic_V": _affine_quadratic_V,
    "poly_g": _poly_g,
}


def make_coefficients(name: str, **params) -> CoefficientSpec:
    if name not in BUILTINS:
        raise KeyError(f"unknown coefficient set {name!r}; choose from {sorted(BUILTINS)}")
    return BUILTINS[name](**params)


def builtin_coefficients() -> list[CoefficientSpec]:
    return [
        _free(),
        _oscillating_V(),
        _oscillating_g(),
        _affine_quadratic_V(c2=0.5, truncation=4.0),
        _poly_g(),
    ]


# --- assumption checks ------------------------------------------------------------
def growth_exponent(x: np.ndarray, values: np.ndarray, x_min: float = 1.0, bins: int = 24) -> float:
    """Slope of log(envelope) vs log|x| over [x_min, max|x|].

    The envelope is the maximum of |values| in logarithmic bins.  A field that
    vanishes on the whole window returns -inf.
    """
    ax = np.abs(x)
    top = ax.max()
    if top <= x_min:
        raise ValueError("scan window too small for a growth fit")
    edges = np.geomspace(x_min, top, bins + 1)
    cx, cy = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (ax >= lo) & (ax <= hi)
        if not np.any(sel):
            continue
        m = np.abs(values[sel]).max()
        if m > 0:
            cx.append(math.log(math.sqrt(lo * hi)))
            cy.append(math.log(m))
    if len(cx) < 3:
        return -math.inf
    return float(np.polyfit(cx, cy, 1)[0])


@dataclass
class AssumptionReport:
    name: str
    checks: dict
    constants: dict

    @property
    def all_pass(self) -> bool:
        return all(self.checks.values())


def check_assumptions(spec: CoefficientSpec, grid: SpatialGrid, oversample: int = 8,
                      flat_tol: float = 1e-8, growth_slack: float = 0.3) -> AssumptionReport:
    """Windowed scans of the growth and flatness conditions on V and g."""
    R = grid.half_width
    x = np.linspace(0.0 if not grid.periodic else -R, R, oversample * grid.points + 1)
    dV = spec.V(x, 1)
    d2V = spec.V(x, 2)
    near = np.abs(x) <= 1.0
    const = {
        "V(0)": float(spec.V(np.zeros(1))[0]),
        "shift": spec.shift,
        "C_V1": float(np.max(np.abs(dV) / (1 + np.abs(x)))),
        "V1_exponent": growth_exponent(x, dV),
        "V2_exponent": growth_exponent(x, d2V),
        "sup_dV_near0": float(np.abs(dV[near]).max()),
        "sup_d2V_near0": float(np.abs(d2V[near]).max()),
    }
    z = np.zeros(1)
    g0 = float(spec.g(z)[0])
    flat = [abs(g0 - 1.0), abs(float(spec.g(z, 1)[0])), abs(float(spec.g(z, 2)[0]))]
    gv, dg = spec.g(x), spec.g(x, 1)
    xdg = x * dg
    const.update({
        "g(0)-1": flat[0],
        "g'(0)": flat[1],
        "g''(0)": flat[2],
        "sup_g": float(np.abs(gv).max()),
        "sup_dg": float(np.abs(dg).max()),
        "sup_xdg": float(np.abs(xdg).max()),
        "g_bounded_exponent": max(growth_exponent(x, gv), growth_exponent(x, dg),
                                  growth_exponent(x, xdg)),
        "r_g": max(growth_exponent(x, spec.g(x, 3)), growth_exponent(x, spec.g(x, 4))),
    })

    def ok(v):
        return bool(np.isfinite(v) or v == -math.inf)

    checks = {
        "V(0)=0": abs(const["V(0)"]) <= flat_tol,
        "V1growth": const["V1_exponent"] <= 1.0 + growth_slack and np.isfinite(const["sup_dV_near0"]),
        "V2growth": ok(const["V2_exponent"]) and np.isfinite(const["sup_d2V_near0"]),
        "gflat": max(flat) <= flat_tol,
        "gint": const["g_bounded_exponent"] <= growth_slack,
        "ggrowth": ok(const["r_g"]),
    }
    return AssumptionReport(spec.name, {k: bool(v) for k, v in checks.items()}, const)


# --- Psi --------------------------------------------------------------------------
def _physical_arg(grid: SpatialGrid, lam: float, w) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if not grid.periodic and np.any(w != 0):
        raise ValueError("radial grids only support w = 0")
    return lam * grid.x - (w[0] if grid.periodic else 0.0)


def psi(spec: CoefficientSpec, lam: float, w, bundle) -> ComplexField:
    """Psi(y) = lambda^2 V(lambda y - w) Q(y)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    arg = _physical_arg(bundle.grid, lam, w)
    return bundle.Q.with_values(lam**2 * spec.V(arg) * bundle.Q.real)


def psi_gradient(spec: CoefficientSpec, lam: float, w, bundle) -> np.ndarray:
    arg = _physical_arg(bundle.grid, lam, w)
    q = bundle.Q.real
    return lam**2 * (lam * spec.V(arg, 1) * q + spec.V(arg) * bundle.gradQ[0].real)


def q_decay_rate(bundle) -> float:
    """Exponential decay rate of Q fitted on the outer half of the grid interior."""
    r = bundle.grid.r
    q = bundle.Q.real
    R = bundle.grid.half_width
    sel = (r > R / 4) & (r < R / 2) & (q > 1e-300)
    return float(-np.polyfit(r[sel], np.log(q[sel]), 1)[0])


@dataclass
class PsiBoundsReport:
    eps_prime: float
    sup_ratio: float
    ratios: dict
    sup_pair_ratio: dict
    pair_ratios: dict


def psi_bounds_check(spec: CoefficientSpec, lambda_grid, w_grid, bundle,
                     eps_prime: float = 0.4) -> PsiBoundsReport:
    """Weighted norms of Psi against lambda^2 (lambda + |w|), pairings against lambda^2 |w| + lambda^4."""
    g = bundle.grid
    rate = q_decay_rate(bundle)
    if eps_prime > 0.5 * rate:
        warnings.warn(f"eps' = {eps_prime} exceeds half the decay rate of Q; using {0.5 * rate:.3f}")
        eps_prime = 0.5 * rate
    weight = np.exp(eps_prime * g.r)
    if not np.all(np.isfinite(weight)):
        eps_prime = 0.5 * rate
        warnings.warn("exponential weight overflowed; eps' reduced")
        weight = np.exp(eps_prime * g.r)
    tests = {"Q": bundle.Q.real, "y2Q": bundle.y2Q.real, "rho": bundle.rho.real}
    ratios, pairs = {}, {k: {} for k in tests}
    for lam in lambda_grid:
        for w in w_grid:
            p = psi(spec, lam, w, bundle).real
            dp = psi_gradient(spec, lam, w, bundle)
            num = math.sqrt(g.l2sq(weight * p)) + math.sqrt(g.l2sq(weight * dp))
            wn = float(np.linalg.norm(np.atleast_1d(w)))
            ratios[(lam, wn)] = num / (lam**2 * (lam + wn))
            for k, phi in tests.items():
                pairs[k][(lam, wn)] = abs(g.inner(p, phi)) / (lam**2 * wn + lam**4)
    return PsiBoundsReport(
        eps_prime=eps_prime,
        sup_ratio=max(ratios.values()) if ratios else 0.0,
        ratios=ratios,
        sup_pair_ratio={k: max(v.values()) if v else 0.0 for k, v in pairs.items()},
        pair_ratios=pairs,
    )
