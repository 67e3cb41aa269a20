"""Spatial grids and the spectral/quadrature calculus used by every other module.

Two geometries are supported:

* ``periodic_line`` -- N = 1, x_j = -R + j h on [-R, R) with h = 2R/n, Fourier
  pseudospectral derivatives and the periodic rectangle rule.
* ``radial`` -- N >= 2 radial functions sampled at cell centres r_j = (j + 1/2) h
  of [0, R], h = R/n.  Derivatives use the cosine (even-extension) collocation
  basis, so the regularity condition f'(0) = 0 is built in; quadrature is the
  midpoint rule with weight |S^{N-1}| r^{N-1}, plus endpoint corrections at r = 0
  when the integrand r^{N-1} f is odd (N even).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma as gamma_fn

PERIODIC = "periodic_line"
RADIAL = "radial"


class NonFiniteFieldError(ValueError):
    """Raised when a field contains NaN or Inf samples."""


class GridMismatchError(ValueError):
    """Raised when two fields living on different grids are combined."""


@dataclass(frozen=True)
class SpatialGrid:
    """Discretization of R^N.

    ``decay_scale`` is the widest profile scale the grid is meant to carry; the
    domain must satisfy exp(-R / decay_scale) < tail_tol so that exponentially
    decaying profiles are negligible at the boundary.
    """

    dim: int = 1
    half_width: float = 20.0
    points: int = 2048
    geometry: str = PERIODIC
    tail_tol: float = 1e-6
    decay_scale: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be a positive integer")
        if self.points < 8:
            raise ValueError("need at least 8 grid points")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.geometry == PERIODIC:
            if self.dim != 1:
                raise ValueError("periodic_line geometry is only defined for N=1")
            if self.points & (self.points - 1):
                raise ValueError(f"periodic grids need a power-of-two size, got {self.points}")
        elif self.geometry == RADIAL:
            if self.dim < 2:
                raise ValueError("radial geometry requires N >= 2")
        else:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if math.exp(-self.half_width / self.decay_scale) >= self.tail_tol:
            raise ValueError(
                f"half_width={self.half_width} too small: exp(-R/scale) = "
                f"{math.exp(-self.half_width / self.decay_scale):.2e} >= tail_tol={self.tail_tol:.1e}"
            )

    @classmethod
    def line(cls, points: int = 2048, half_width: float = 20.0, **kw) -> "SpatialGrid":
        return cls(dim=1, half_width=half_width, points=points, geometry=PERIODIC, **kw)

    @classmethod
    def radial(cls, dim: int, points: int = 512, half_width: float = 20.0, **kw) -> "SpatialGrid":
        return cls(dim=dim, half_width=half_width, points=points, geometry=RADIAL, **kw)

    @property
    def periodic(self) -> bool:
        return self.geometry == PERIODIC

    @property
    def spacing(self) -> float:
        if self.periodic:
            return 2.0 * self.half_width / self.points
        return self.half_width / self.points

    h = spacing

    @cached_property
    def x(self) -> np.ndarray:
        """Sample coordinates (x for the line, r for radial grids)."""
        j = np.arange(self.points)
        if self.periodic:
            return -self.half_width + self.spacing * j
        return (j + 0.5) * self.spacing

    @cached_property
    def r(self) -> np.ndarray:
        return np.abs(self.x)

    @cached_property
    def k(self) -> np.ndarray:
        if not self.periodic:
            raise ValueError("wavenumbers only exist on the periodic grid")
        return 2.0 * np.pi * sfft.fftfreq(self.points, self.spacing)

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: integral of f ~ sum(weights * f)."""
        h = self.spacing
        if self.periodic:
            return np.full(self.points, h)
        n_dim = self.dim
        area = 2.0 * math.pi ** (n_dim / 2) / gamma_fn(n_dim / 2)
        w = h * self.x ** (n_dim - 1)
        if n_dim % 2 == 0:
            corr = _midpoint_left_corrections(12)
            w[: len(corr)] += h * corr * self.x[: len(corr)] ** (n_dim - 1)
        return area * w

    @cached_property
    def form_weights(self) -> np.ndarray:
        """Positive quadrature weights for assembling quadratic forms.

        The end-corrected radial rule has negative weights near the origin
        when N is even; plain midpoint weights keep Gram matrices definite.
        """
        if self.periodic:
            return self.weights
        area = 2.0 * math.pi ** (self.dim / 2) / gamma_fn(self.dim / 2)
        return area * self.spacing * self.x ** (self.dim - 1)

    @cached_property
    def mirror(self) -> np.ndarray:
        """Index map of the reflection x -> -x (periodic grid)."""
        if not self.periodic:
            raise ValueError("mirror index only defined for the periodic grid")
        return (-np.arange(self.points)) % self.points

    def check_same(self, other: "SpatialGrid") -> None:
        if self != other:
            raise GridMismatchError("fields live on different grids")

    # --- array-level calculus -------------------------------------------------
    def integrate(self, values: np.ndarray) -> float | complex:
        return np.sum(self.weights * values)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Real L^2 pairing Re int a conj(b)."""
        return float(np.real(np.sum(self.weights * a * np.conj(b))))

    def l2sq(self, a: np.ndarray) -> float:
        return float(np.sum(self.weights * (a.real**2 + a.imag**2)))

    def lap(self, values: np.ndarray) -> np.ndarray:
        if self.periodic:
            return sfft.ifft(-(self.k**2) * sfft.fft(values))
        return self.lap_matrix @ values

    def deriv(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        """d/dx (periodic) or d/dr (radial) of the given order."""
        if self.periodic:
            symbol = (1j * self.k) ** order
            if order % 2:
                symbol[self.points // 2] = 0.0
            return sfft.ifft(symbol * sfft.fft(values))
        if order == 1:
            return self.d1_matrix @ values
        if order == 2:
            return self.d2_matrix @ values
        return self.d1_matrix @ self.deriv(values, order - 1)

    def grad_sq(self, values: np.ndarray) -> float:
        """||grad f||_2^2; spectral Parseval form on the periodic grid."""
        if self.periodic:
            fh = sfft.fft(values)
            return float(self.spacing / self.points * np.sum(self.k**2 * np.abs(fh) ** 2))
        return self.l2sq(self.deriv(values))

    def radial_grad_dot(self, values: np.ndarray) -> np.ndarray:
        """x . grad f; equal to r f'(r) for both geometries."""
        return self.x * self.deriv(values)

    # --- dense operators --------------------------------------------------------
    @cached_property
    def d2_matrix(self) -> np.ndarray:
        if self.periodic:
            col = np.real(sfft.ifft(-(self.k**2)))
            idx = (np.arange(self.points)[:, None] - np.arange(self.points)[None, :]) % self.points
            return col[idx]
        basis, dbasis, ddbasis, inv = self._cosine_basis
        return ddbasis @ inv

    @cached_property
    def d1_matrix(self) -> np.ndarray:
        if self.periodic:
            col = np.real(sfft.ifft(1j * self.k * (np.abs(self.k) < np.pi / self.spacing - 1e-12)))
            idx = (np.arange(self.points)[:, None] - np.arange(self.points)[None, :]) % self.points
            return col[idx]
        basis, dbasis, ddbasis, inv = self._cosine_basis
        return dbasis @ inv

    @cached_property
    def lap_matrix(self) -> np.ndarray:
        if self.periodic:
            return self.d2_matrix
        return self.d2_matrix + (self.dim - 1) * (self.d1_matrix / self.x[:, None])

    @cached_property
    def _cosine_basis(self):
        n = self.points
        kk = np.pi * np.arange(n) / self.half_width
        arg = np.outer(self.x, kk)
        basis = np.cos(arg)
        dbasis = -np.sin(arg) * kk
        ddbasis = -basis * kk**2
        # DCT-II orthogonality on cell centres gives the inverse in closed form.
        inv = (2.0 / n) * basis.T
        inv[0] *= 0.5
        return basis, dbasis, ddbasis, inv

    # --- interpolation ----------------------------------------------------------
    def sample_uniform(self, values: np.ndarray, start: float, step: float, count: int) -> np.ndarray:
        """Evaluate the trigonometric interpolant at start + j*step, j < count."""
        if not self.periodic:
            raise ValueError("band-limited resampling needs the periodic grid")
        n = self.points
        period = 2.0 * self.half_width
        coef = sfft.fft(values) / n
        # Symmetric mode set -n/2..n/2 with the Nyquist coefficient split in half.
        modes = np.empty(n + 1, dtype=complex)
        modes[: n // 2] = coef[n // 2:]
        modes[n // 2: n] = coef[: n // 2]
        modes[0] *= 0.5
        modes[n] = modes[0]
        q = np.arange(n + 1) - n // 2
        offset = (start - self.x[0]) / period
        modes = modes * _cis_cycles(np.longdouble(offset) * q.astype(np.longdouble))
        return _chirp_sum(modes, q[0], step / period, count)


class Norms(NamedTuple):
    l2: float
    h1: float
    sigma1: float
    sigma2: float
    weighted_l2: float


@dataclass(frozen=True)
class ComplexField:
    """Complex samples on a SpatialGrid; immutable and always finite."""

    grid: SpatialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.grid.points,):
            raise ValueError(f"expected {self.grid.points} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteFieldError("field contains NaN or Inf samples")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "ComplexField":
        return ComplexField(self.grid, values)

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def __add__(self, other: "ComplexField") -> "ComplexField":
        self.grid.check_same(other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        self.grid.check_same(other.grid)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar) -> "ComplexField":
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


def laplacian(f: ComplexField) -> ComplexField:
    return f.with_values(f.grid.lap(f.values))


def gradient(f: ComplexField) -> ComplexField:
    """d/dx on the line, d/dr on radial grids."""
    return f.with_values(f.grid.deriv(f.values))


def norms(f: ComplexField) -> Norms:
    g = f.grid
    v = f.values
    l2sq = g.l2sq(v)
    grad_sq = g.grad_sq(v)
    lap_sq = g.l2sq(g.lap(v))
    xsq = g.l2sq(g.r * v)
    x2sq = g.l2sq(g.r**2 * v)
    h1sq = l2sq + grad_sq
    h2sq = l2sq + 2 * grad_sq + lap_sq
    return Norms(
        l2=math.sqrt(l2sq),
        h1=math.sqrt(h1sq),
        sigma1=math.sqrt(h1sq + xsq),
        sigma2=math.sqrt(h2sq + x2sq),
        weighted_l2=math.sqrt(xsq),
    )


def inner(f: ComplexField, g: ComplexField) -> float:
    f.grid.check_same(g.grid)
    return f.grid.inner(f.values, g.values)


def real_field(grid: SpatialGrid, values: np.ndarray) -> ComplexField:
    return ComplexField(grid, np.asarray(values, dtype=float).astype(complex))


# --- helpers -----------------------------------------------------------------------
def _cis_cycles(cycles) -> np.ndarray:
    """exp(2 pi i * cycles), reducing the argument in extended precision."""
    frac = np.asarray(cycles, dtype=np.longdouble)
    frac = frac - np.round(frac)
    return np.exp(2j * np.pi * frac.astype(float))


def _chirp_sum(coeffs: np.ndarray, q0: int, beta: float, count: int) -> np.ndarray:
    """X_j = sum_q c_q exp(2 pi i beta (q0 + q) j) for j < count (Bluestein)."""
    n = len(coeffs)
    j = np.arange(count)
    q = np.arange(n)
    b = np.longdouble(beta)
    # (q0+q) j = q0 j + (q^2 + j^2 - (j-q)^2) / 2
    pre = coeffs * _cis_cycles(b * q.astype(np.longdouble) ** 2 / 2)
    d = np.arange(-(n - 1), count)
    kern = _cis_cycles(-b * d.astype(np.longdouble) ** 2 / 2)
    size = sfft.next_fast_len(n + count - 1 + n)
    conv = sfft.ifft(sfft.fft(pre, size) * sfft.fft(kern, size))
    out = conv[n - 1: n - 1 + count]
    jl = j.astype(np.longdouble)
    return out * _cis_cycles(b * jl**2 / 2 + b * q0 * jl)


@lru_cache(maxsize=None)
def _midpoint_left_corrections_cached(m: int) -> tuple[float, ...]:
    import sympy

    nodes = [Fraction(2 * j + 1, 2) for j in range(m)]
    rows = [[sympy.Rational(nd.numerator, nd.denominator) ** k for nd in nodes] for k in range(m)]
    rhs = [sympy.bernoulli(k + 1, sympy.Rational(1, 2)) / (k + 1) for k in range(m)]
    sol = sympy.Matrix(rows).LUsolve(sympy.Matrix(rhs))
    return tuple(float(v) for v in sol)


def _midpoint_left_corrections(m: int) -> np.ndarray:
    """Endpoint weights making the midpoint rule exact for degree < m at the left end."""
    return np.array(_midpoint_left_corrections_cached(m))
