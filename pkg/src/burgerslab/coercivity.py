"""Quadratic forms against the Riesz Gram operator and related spectral checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .kernel_lab import KernelMatrix, assemble_K0, midpoint_nodes
from .spectral_core import riesz_cell_matrix, three_halves_power


class IllConditionedError(np.linalg.LinAlgError):
    """The Gram matrix is numerically singular."""


def plus_cell_matrix(M: int) -> np.ndarray:
    """Exact cell-pair integrals of (x+y)^{-1/2} on M uniform cells of (0,1)."""
    h = 1.0 / M
    a = np.arange(M) * h
    s = a[:, None] + a[None, :]
    return three_halves_power(s + 2 * h) - 2 * three_halves_power(s + h) + three_halves_power(s)


def primitive_map(M: int) -> np.ndarray:
    """P with (P u)_i = mean over cell i of the primitive of piecewise-constant u."""
    h = 1.0 / M
    return np.tril(np.ones((M, M)), -1) * h + np.eye(M) * (h / 2)


@dataclass(frozen=True)
class GramOperator:
    matrix: np.ndarray
    P: np.ndarray
    S: np.ndarray

    @property
    def M(self) -> int:
        return self.matrix.shape[0]


def gram_operator(M: int) -> GramOperator:
    """G_R = P^T S P, so that u^T G_R u = R(U) for cell-sampled u."""
    P = primitive_map(M)
    S = riesz_cell_matrix(M)
    return GramOperator(P.T @ S @ P, P, S)


def _samples(u, M: int) -> np.ndarray:
    if callable(u):
        return np.asarray(u(midpoint_nodes(M)), float)
    u = np.asarray(u, float)
    if u.shape != (M,):
        raise ValueError(f"control has {u.shape} samples, kernel has {M} nodes")
    return u


def quadratic_form(K: KernelMatrix, u) -> float:
    """sum_ij K_ij u_i u_j w_i w_j with cell weights w = 1/M."""
    uu = _samples(u, K.M)
    return float(uu @ K.weighted() @ uu)


def k0_identity_check(u, M: int = 256):
    """<K^0 u, u> against (3/4) int [(2-x-y)^{-1/2} + |x-y|^{-1/2}] U(x) U(y).

    Returns (lhs, rhs, relative gap).
    """
    uu = _samples(u, M)
    lhs = quadratic_form(assemble_K0(M), uu)
    U = primitive_map(M) @ uu
    # (2-x-y) on cells is (x'+y') on reversed cells
    singular = riesz_cell_matrix(M) + plus_cell_matrix(M)[::-1, ::-1]
    rhs = float(0.75 * U @ singular @ U)
    gap = abs(lhs - rhs) / max(abs(lhs), 1e-300) if lhs != 0 or rhs != 0 else 0.0
    return lhs, rhs, gap


def plus_kernel_psd_check(M: int) -> float:
    return float(np.linalg.eigvalsh(plus_cell_matrix(M))[0])


def coercivity_constant(K, gram: GramOperator, max_cond: float = 1e13) -> float:
    """Smallest generalized eigenvalue of (K_w, G_R): inf <K u, u> / R(U).

    K may be a KernelMatrix (weighted by 1/M^2) or an already weighted matrix.
    scipy's eigh reduces the pencil through the Cholesky factor of G_R.
    """
    Kw = K.weighted() if isinstance(K, KernelMatrix) else np.asarray(K, float)
    if Kw.shape != gram.matrix.shape:
        raise ValueError("kernel and Gram dimensions differ")
    cond = np.linalg.cond(gram.matrix)
    if not np.isfinite(cond) or cond > max_cond:
        raise IllConditionedError(f"Gram condition number {cond:.3e}")
    return float(sla.eigh(Kw, gram.matrix, eigvals_only=True, subset_by_index=[0, 0])[0])


ASYMPTOTIC_EIGEN_FACTOR = 3 * np.sqrt(2) / (4 * np.pi**2)


def nystrom_eigenvalues(resolution: int) -> np.ndarray:
    """Positive eigenvalues of the -|x-y|^{3/2} operator by midpoint Nystrom, descending."""
    x = midpoint_nodes(resolution)
    A = -np.abs(x[:, None] - x[None, :]) ** 1.5 / resolution
    lam = np.linalg.eigvalsh(A)[::-1]
    return lam[lam > 0]


def eigen_asymptotics(n_max: int, resolution: int = 2048) -> np.ndarray:
    """Ratios lambda_n / [(3 sqrt 2 / 4 pi^2) n^{-5/2}] for n = 1..n_max."""
    if resolution < 8 * n_max:
        raise ValueError("resolution too low for the requested modes")
    lam = nystrom_eigenvalues(resolution)[:n_max]
    n = np.arange(1, n_max + 1)
    return lam / (ASYMPTOTIC_EIGEN_FACTOR * n**-2.5)
