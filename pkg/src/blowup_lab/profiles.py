"""Ground state Q and the fixed profiles built from it.

Q solves -Delta Q + Q - Q^{1+4/N} = 0 (Q > 0, radial).  It is computed by the
Petviashvili spectral-renormalization iteration; everything else in the bundle
(Lambda Q, |y|^2 Q, y Q, grad Q, rho) is derived from it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.linalg import lu_factor, lu_solve

from .grid_field import ComplexField, SpatialGrid, real_field

log = logging.getLogger(__name__)


class GroundStateError(RuntimeError):
    """Petviashvili iteration failed; carries the residual history."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


def nonlinear_power(dim: int) -> float:
    return 1.0 + 4.0 / dim


def ground_state_residual(Q: np.ndarray, grid: SpatialGrid) -> float:
    p = nonlinear_power(grid.dim)
    res = -grid.lap(Q) + Q - np.abs(Q) ** (p - 1) * Q
    return math.sqrt(grid.l2sq(res))


def solve_ground_state(grid: SpatialGrid, tol: float = 5e-11, max_iter: int = 2000,
                       return_history: bool = False):
    """Petviashvili fixed point for the ground state on ``grid``.

    The stabilizing exponent is p/(p-1) for the degree-p nonlinearity.
    Returns the real, positive, even profile as a ComplexField (and the
    residual history if requested).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = nonlinear_power(grid.dim)
    expo = p / (p - 1.0)
    r = grid.r
    u = 1.5 * np.exp(-(r**2) / 2)

    if grid.periodic:
        symbol = 1.0 + grid.k**2

        def apply_inverse(v):
            return np.real(sfft.ifft(sfft.fft(v) / symbol))

        def apply_op(v):
            return np.real(sfft.ifft(sfft.fft(v) * symbol))
    else:
        op = np.eye(grid.points) - grid.lap_matrix
        lu = lu_factor(op)

        def apply_inverse(v):
            return lu_solve(lu, v)

        def apply_op(v):
            return op @ v

    history: list[float] = []
    for _ in range(max_iter):
        nl = np.abs(u) ** (p - 1) * u
        m = grid.inner(apply_op(u), u) / grid.inner(nl, u)
        u = m**expo * apply_inverse(nl)
        if grid.periodic:
            u = 0.5 * (u + u[grid.mirror])
        res = ground_state_residual(u, grid)
        history.append(res)
        if not np.isfinite(res):
            raise GroundStateError("ground-state iteration diverged", history)
        if res < tol:
            break
    else:
        raise GroundStateError(
            f"no convergence in {max_iter} iterations (last residual {history[-1]:.3e})", history)
    if u.min() < 0:
        # Tail samples can dip below zero at roundoff level only.
        if u.min() < -1e-12 * u.max():
            raise GroundStateError("iteration converged to a sign-changing profile", history)
        u = np.abs(u)
    Q = real_field(grid, u)
    return (Q, history) if return_history else Q


@dataclass(frozen=True)
class ProfileBundle:
    """Q and its derived profiles on one grid, plus their inner-product table.

    On radial grids ``yQ`` and ``gradQ`` hold the radial profiles r Q(r) and
    Q'(r) of the vector fields y Q and grad Q (each component is that profile
    times y_j/r).
    """

    grid: SpatialGrid
    Q: ComplexField
    lamQ: ComplexField
    y2Q: ComplexField
    yQ: tuple[ComplexField, ...]
    rho: ComplexField
    gradQ: tuple[ComplexField, ...]
    ip_table: dict[str, float] = field(default_factory=dict)
    residual: float = 0.0

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def mass(self) -> float:
        return self.ip_table["|Q|^2"]


def scaling_generator(values: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Lambda f = N/2 f + y . grad f."""
    return 0.5 * grid.dim * values + np.real(grid.radial_grad_dot(values))


def build_bundle(grid: SpatialGrid, Q: ComplexField | None = None, tol: float = 5e-11) -> ProfileBundle:
    from .linops import solve_rho

    if Q is None:
        Q = solve_ground_state(grid, tol=tol)
    q = Q.real
    n_dim = grid.dim
    lam = scaling_generator(q, grid)
    y2 = grid.r**2 * q
    yq = grid.x * q
    dq = np.real(grid.deriv(q))
    rho = solve_rho(Q)

    inner = grid.inner
    table = {
        "|Q|^2": inner(q, q),
        "(Q,rho)": inner(q, rho.real),
        "|yQ|^2": inner(yq, yq),
        "|yQ|^2/4": 0.25 * inner(yq, yq),
        "|y_jQ|^2": inner(yq, yq) / n_dim,
        "(dQ,yQ)": inner(dq, yq) / n_dim,
        "(LamQ,Q)": inner(lam, q),
        "(LamQ,y2Q)": inner(lam, y2),
        "(LamQ,rho)": inner(lam, rho.real),
        "(y2Q,rho)": inner(y2, rho.real),
        "(Q,y2Q)": inner(q, y2),
        "|gradQ|^2": grid.l2sq(dq),
        "int Q^(2+4/N)": float(grid.integrate(q ** (2 + 4 / n_dim))),
    }
    return ProfileBundle(
        grid=grid,
        Q=Q,
        lamQ=real_field(grid, lam),
        y2Q=real_field(grid, y2),
        yQ=(real_field(grid, yq),),
        rho=rho,
        gradQ=(real_field(grid, dq),),
        ip_table=table,
        residual=ground_state_residual(q, grid),
    )


@dataclass
class GNTrial:
    lhs: float
    rhs: float
    ratio: float
    holds: bool


def check_gn_constant(Q: ComplexField, trials: list[ComplexField], rtol: float = 1e-8) -> list[GNTrial]:
    """Gagliardo-Nirenberg inequality ||v||_{2+4/N}^{2+4/N} <= (1+2/N)(|v|_2/|Q|_2)^{4/N} |grad v|_2^2."""
    grid = Q.grid
    n_dim = grid.dim
    q_mass = grid.l2sq(Q.values)
    out = []
    for v in trials:
        grid.check_same(v.grid)
        vals = v.values
        mass = grid.l2sq(vals)
        if mass == 0:
            raise ValueError("Gagliardo-Nirenberg trial must be nonzero")
        lhs = float(grid.integrate(np.abs(vals) ** (2 + 4 / n_dim)))
        rhs = (1 + 2 / n_dim) * (mass / q_mass) ** (2 / n_dim) * grid.grad_sq(vals)
        out.append(GNTrial(lhs, rhs, lhs / rhs, lhs <= rhs * (1 + rtol)))
    return out


@dataclass
class DecayReport:
    c_grad: float
    c_hess: float
    c_lambda: float
    c_rho: float
    kappa_rho: float
    bounded: bool


def envelope_ratio(values: np.ndarray, Q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not np.any(values[mask]):
        raise ValueError("cannot fit a decay bound to a zero field")
    return np.abs(values[mask]) / Q[mask]


def check_decay(bundle: ProfileBundle, floor: float = 1e-10, margin: float = 2.0) -> DecayReport:
    """Ratio scans behind |d^a Q| <= C_a Q and |rho| <= C (1+|y|)^kappa Q."""
    grid = bundle.grid
    q = bundle.Q.real
    r = grid.r
    mask = (q > floor * q.max()) & (r < grid.half_width - margin)
    dq = bundle.gradQ[0].real
    d2q = np.real(grid.deriv(q, 2))
    c_grad = envelope_ratio(dq, q, mask).max()
    hess = np.abs(d2q)
    if not grid.periodic:
        hess = np.maximum(hess, np.abs(dq / r))
    c_hess = envelope_ratio(hess, q, mask).max()
    c_lambda = (envelope_ratio(bundle.lamQ.real, q, mask) / (1 + r[mask])).max()

    ratio = envelope_ratio(bundle.rho.real, q, mask)
    rr = r[mask]
    tail = rr > 2.0
    kappa = float(np.polyfit(np.log1p(rr[tail]), np.log(ratio[tail]), 1)[0]) if tail.sum() > 3 else 0.0
    kappa = max(kappa, 0.0)
    c_rho = float((ratio / (1 + rr) ** kappa).max())
    vals = [c_grad, c_hess, c_lambda, c_rho]
    return DecayReport(float(c_grad), float(c_hess), float(c_lambda), c_rho, kappa,
                       bool(np.all(np.isfinite(vals))))
