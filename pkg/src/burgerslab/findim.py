"""Finite-dimensional analogues: a controlled linear chain a driving a quadratic b.

    a' = M a + u m,    b' = L b + Q(a, a)

The chain a1' = a2, a2' = a3, a3' = u is flat: with u = theta''' the state is
a = (theta, theta', theta''), so polynomial profiles vanishing to third order at
both ends steer a from 0 back to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .spectral_core import Control


class DimensionError(ValueError):
    pass


class EndConditionError(ValueError):
    """theta or its first two derivatives do not vanish at the ends."""


@dataclass
class FinDimSystem:
    M: np.ndarray
    m: np.ndarray
    L: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, float))
        self.m = np.asarray(self.m, float).ravel()
        self.L = np.atleast_2d(np.asarray(self.L, float))
        Q = np.asarray(self.Q, float)
        n, p = self.M.shape[0], self.L.shape[0]
        if self.M.shape != (n, n) or self.m.shape != (n,):
            raise DimensionError("M must be n x n and m an n-vector")
        if self.L.shape != (p, p) or Q.shape != (p, n, n):
            raise DimensionError("L must be p x p and Q p x n x n")
        self.Q = 0.5 * (Q + Q.transpose(0, 2, 1))

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def p(self) -> int:
        return self.L.shape[0]

    def quad_term(self, a: np.ndarray) -> np.ndarray:
        return np.einsum("kij,i,j->k", self.Q, a, a)


def chain_system(Q: np.ndarray, L=None) -> FinDimSystem:
    """The chain a1' = a2, a2' = a3, a3' = u with scalar b."""
    M = np.diag([1.0, 1.0], k=1)
    Q = np.asarray(Q, float).reshape(1, 3, 3)
    return FinDimSystem(M, [0.0, 0.0, 1.0], np.zeros((1, 1)) if L is None else L, Q)


def example_system(example: int) -> FinDimSystem:
    """Q(a, a) = a2^2 + a1 a3 (1), a3^2 (2) or a2^2 (3)."""
    Q = np.zeros((3, 3))
    if example == 1:
        Q[1, 1] = 1.0
        Q[0, 2] = 1.0
    elif example == 2:
        Q[2, 2] = 1.0
    elif example == 3:
        Q[1, 1] = 1.0
    else:
        raise ValueError(f"unknown example {example}")
    return chain_system(Q)


def kalman_rank(M: np.ndarray, m: np.ndarray) -> int:
    M = np.asarray(M, float)
    cols = [np.asarray(m, float)]
    for _ in range(M.shape[0] - 1):
        cols.append(M @ cols[-1])
    return int(np.linalg.matrix_rank(np.column_stack(cols)))


def default_steps(sys: FinDimSystem, T: float, n_steps: int = 4096) -> int:
    # RK4 local error on a' = M a is about (h |M|)^5 / 120; keep it below 1e-10
    norm = max(np.linalg.norm(sys.M, 2), np.linalg.norm(sys.L, 2), 1e-300)
    h_max = (120 * 1e-10) ** 0.2 / norm
    return max(n_steps, int(np.ceil(T / h_max)))


def simulate_ab(
    sys: FinDimSystem,
    u: Control | Callable | None,
    T: float,
    a0=None,
    b0=None,
    n_steps: int | None = None,
):
    """RK4 for the coupled system. Returns (t, a, b) with a of shape (n_steps+1, n)."""
    a0 = np.zeros(sys.n) if a0 is None else np.asarray(a0, float)
    b0 = np.zeros(sys.p) if b0 is None else np.atleast_1d(np.asarray(b0, float))
    if a0.shape != (sys.n,) or b0.shape != (sys.p,):
        raise DimensionError("initial state does not match the system")
    if u is None:
        ufun = lambda t: 0.0
    else:
        ufun = u
    n_steps = default_steps(sys, T) if n_steps is None else n_steps
    h = T / n_steps
    t = np.linspace(0.0, T, n_steps + 1)
    n = sys.n

    def f(tt, z):
        a, b = z[:n], z[n:]
        return np.concatenate([sys.M @ a + float(ufun(tt)) * sys.m, sys.L @ b + sys.quad_term(a)])

    Z = np.empty((n_steps + 1, n + sys.p))
    Z[0] = np.concatenate([a0, b0])
    z = Z[0]
    for k in range(n_steps):
        tk = t[k]
        k1 = f(tk, z)
        k2 = f(tk + h / 2, z + h / 2 * k1)
        k3 = f(tk + h / 2, z + h / 2 * k2)
        k4 = f(tk + h, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Z[k + 1] = z
    return t, Z[:, :n], Z[:, n:]


def flat_profile(T: float) -> Polynomial:
    """theta(t) = t^3 (T - t)^3."""
    return Polynomial([0, 0, 0, 1]) * Polynomial([T, -1]) ** 3


def _check_ends(theta: Polynomial, T: float, tol: float = 1e-10):
    for k in range(3):
        d = theta.deriv(k) if k else theta
        if abs(d(0.0)) > tol or abs(d(T)) > tol:
            raise EndConditionError(f"derivative {k} of theta does not vanish at the ends")


def conservation_check_example1(u=None, T: float = 1.0, a0=None, b0=0.0, n_steps: int | None = None) -> float:
    """max_t |(b - a1 a2)(t) - (b - a1 a2)(0)| along the Example-1 trajectory."""
    t, a, b = simulate_ab(example_system(1), u, T, a0, b0, n_steps)
    c = b[:, 0] - a[:, 0] * a[:, 1]
    return float(np.max(np.abs(c - c[0])))


def drift_check_examples23(example: int, theta: Polynomial | None = None, T: float = 1.0, n_steps: int | None = None):
    """(b(T) - b(0), weak norm) for u = theta'''.

    The weak norm is int (d^{-1} u)^2 = int theta''^2 for example 2 and
    int (d^{-2} u)^2 = int theta'^2 for example 3, primitives vanishing at 0.
    """
    if example not in (2, 3):
        raise ValueError("example must be 2 or 3")
    theta = flat_profile(T) if theta is None else theta
    _check_ends(theta, T)
    u = theta.deriv(3)
    _, a, b = simulate_ab(example_system(example), u, T, n_steps=n_steps)
    prim = theta.deriv(2) if example == 2 else theta.deriv(1)
    sq = (prim**2).integ()
    return float(b[-1, 0] - b[0, 0]), float(sq(T) - sq(0.0))


# 64-point Gauss-Legendre on (0, 1)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def lie_bracket_q11_check(phis, boundary_tol: float = 1e-12):
    """<Q(1,1), phi> = (1/2) int_0^1 phi_x for each test function.

    Each phi is a Polynomial or a pair (phi, phi_x). Returns a list of dicts
    with the quadrature value, the boundary value (phi(1) - phi(0))/2 and
    whether phi vanishes at both ends.
    """
    out = []
    for phi in phis:
        if isinstance(phi, Polynomial):
            f, df = phi, phi.deriv()
        else:
            f, df = phi
        value = 0.5 * float(np.dot(_GL_W, df(_GL_X)))
        admissible = abs(f(0.0)) <= boundary_tol and abs(f(1.0)) <= boundary_tol
        out.append({"value": value, "boundary": float(0.5 * (f(1.0) - f(0.0))), "admissible": bool(admissible)})
    return out
