"""Linearized operators L+ and L- about the ground state.

L+ = -Delta + 1 - (1 + 4/N) Q^{4/N},   L- = -Delta + 1 - Q^{4/N}.

Besides application this module solves L+ rho = |y|^2 Q on the even/radial
subspace, evaluates the kernel identities, and estimates the coercivity
constant mu of the constrained quadratic form against the H^1 norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, null_space

from .grid_field import ComplexField, SpatialGrid, real_field

LPLUS = "Lplus"
LMINUS = "Lminus"


class RhoSolveError(RuntimeError):
    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class LinearizedOperator:
    kind: str
    grid: SpatialGrid
    potential_profile: ComplexField

    @classmethod
    def build(cls, kind: str, Q: ComplexField) -> "LinearizedOperator":
        n_dim = Q.grid.dim
        coef = {LPLUS: 1.0 + 4.0 / n_dim, LMINUS: 1.0}
        if kind not in coef:
            raise ValueError(f"unknown operator kind {kind!r}")
        pot = coef[kind] * np.abs(Q.real) ** (4.0 / n_dim)
        return cls(kind, Q.grid, real_field(Q.grid, pot))

    def matrix(self) -> np.ndarray:
        """Dense collocation matrix of the operator."""
        g = self.grid
        return -g.lap_matrix + np.diag(1.0 - self.potential_profile.real)

    def weak_form(self) -> np.ndarray:
        """Symmetric matrix of the quadratic form (L v, v) = |v'|^2 + (1 - c Q^{4/N}) v^2."""
        g = self.grid
        d1 = g.d1_matrix
        w = g.form_weights
        return d1.T @ (w[:, None] * d1) + np.diag(w * (1.0 - self.potential_profile.real))


def apply(op: LinearizedOperator, f: ComplexField) -> ComplexField:
    op.grid.check_same(f.grid)
    v = f.values
    return f.with_values(-op.grid.lap(v) + v - op.potential_profile.real * v)


def lplus(Q: ComplexField) -> LinearizedOperator:
    return LinearizedOperator.build(LPLUS, Q)


def lminus(Q: ComplexField) -> LinearizedOperator:
    return LinearizedOperator.build(LMINUS, Q)


def solve_rho(Q: ComplexField, max_condition: float = 1e12) -> ComplexField:
    """Radial solution of L+ rho = |y|^2 Q.

    On the line the system is restricted to even vectors (u_j = u_{n-j}), which
    removes the odd kernel spanned by Q'.
    """
    g = Q.grid
    q = Q.real
    rhs = g.r**2 * q
    mat = lplus(Q).matrix()
    if g.periodic:
        n = g.points
        half = n // 2 + 1
        fold = np.zeros((n, half))
        fold[np.arange(half), np.arange(half)] = 1.0
        idx = np.arange(half, n)
        fold[idx, n - idx] = 1.0
        mat = (mat @ fold)[:half]
        rhs = rhs[:half]
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > max_condition:
        raise RhoSolveError(f"rho system is ill-conditioned (cond ~ {cond:.2e})", cond)
    sol = np.linalg.solve(mat, rhs)
    if g.periodic:
        sol = sol @ fold.T
    return real_field(g, sol)


def dipole_lminus(Q: ComplexField) -> np.ndarray:
    """L- applied to y Q, as the profile multiplying y_j/r (y_j on the line)."""
    g = Q.grid
    q = Q.real
    dq = np.real(g.deriv(q))
    d2q = np.real(g.deriv(q, 2))
    pot = np.abs(q) ** (4.0 / g.dim)
    r = g.x
    # (y Q)'' for the l=1 component reduces to r Q'' + (N+1) Q'.
    return -(r * d2q + (g.dim + 1) * dq) + r * (1.0 - pot) * q


def identity_residuals(bundle) -> dict[str, float]:
    """Discrete L^2 residuals of the kernel identities.

    ``L-(yQ)+gradQ`` is the identity as usually quoted; the exact relation is
    L-(yQ) = -2 grad Q, reported as ``L-(yQ)+2gradQ``.
    """
    g = bundle.grid
    Q = bundle.Q
    lp, lm = lplus(Q), lminus(Q)

    def norm(v):
        return math.sqrt(g.l2sq(np.asarray(v)))

    dip = dipole_lminus(Q)
    dq = bundle.gradQ[0].real
    return {
        "L-Q": norm(apply(lm, Q).values),
        "L+LamQ+2Q": norm(apply(lp, bundle.lamQ).values + 2 * Q.values),
        "L-(y2Q)+4LamQ": norm(apply(lm, bundle.y2Q).values + 4 * bundle.lamQ.values),
        "L+rho-y2Q": norm(apply(lp, bundle.rho).values - bundle.y2Q.values),
        "L-(yQ)+gradQ": norm(dip + dq),
        "L-(yQ)+2gradQ": norm(dip + 2 * dq),
    }


def quadratic_form(op: LinearizedOperator, f: np.ndarray) -> float:
    """(L f, f)_2 for a real profile f."""
    return float(f @ op.weak_form() @ f)


def h1_gram(grid: SpatialGrid) -> np.ndarray:
    d1 = grid.d1_matrix
    w = grid.form_weights
    return d1.T @ (w[:, None] * d1) + np.diag(w)


def _constrained_min(form: np.ndarray, gram: np.ndarray, constraints: list[np.ndarray],
                     weights: np.ndarray) -> float:
    if constraints:
        basis = null_space(np.array([weights * c for c in constraints]))
        form = basis.T @ form @ basis
        gram = basis.T @ gram @ basis
    vals = eigh(form, gram, subset_by_index=[0, 0], eigvals_only=True)
    return float(vals[0])


@dataclass
class CoercivityReport:
    mu: float
    mu_plus: float
    mu_minus: float
    unconstrained_plus: float
    form_at_Q: float


def estimate_mu(bundle, constrained: bool = True) -> CoercivityReport:
    """Smallest generalized eigenvalue of the constrained form against the H^1 Gram matrix.

    Real parts are taken orthogonal to Q, yQ, |y|^2 Q and imaginary parts
    orthogonal to rho.  The two blocks decouple, so mu is the smaller of the
    two block minima.  On radial grids only the radial sector is probed.
    """
    g = bundle.grid
    lp, lm = lplus(bundle.Q), lminus(bundle.Q)
    gram = h1_gram(g)
    w = g.form_weights
    real_cons = [bundle.Q.real, bundle.y2Q.real]
    if g.periodic:
        real_cons.append(bundle.yQ[0].real)
    imag_cons = [bundle.rho.real]
    if not constrained:
        real_cons, imag_cons = [], []
    form_p = lp.weak_form()
    mu_p = _constrained_min(form_p, gram, real_cons, w)
    mu_m = _constrained_min(lm.weak_form(), gram, imag_cons, w)
    free_p = mu_p if not constrained else _constrained_min(form_p, gram, [], w)
    q = bundle.Q.real
    return CoercivityReport(
        mu=min(mu_p, mu_m),
        mu_plus=mu_p,
        mu_minus=mu_m,
        unconstrained_plus=free_p,
        form_at_Q=float(q @ form_p @ q),
    )
