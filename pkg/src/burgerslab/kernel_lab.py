"""The quadratic kernel K^eps, its asymptotic shape K^0, and kernel diagnostics.

K^eps(s1, s2) = int_{s1 v s2}^1 A(t, s1, s2) dt with
A = int_0^{1/2} Phi_x(1-t, x) G(t-s1, x) G(t-s2, x) dx.  By parity this is
half of the same integral over (0, 1), and since Phi_x integrates to zero on
(0, 1/2) the factor G G may be replaced by G G - 1, which is what the
assembly integrates (the integrand then decays away from the boundary layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import erf

from .spectral_core import (
    PHI_MODES,
    Control,
    Phi_x_eval,
    corrector_H,
    elementary_G,
    erf_layer,
    phi_x_eval,
    rho_eval,
)

ASYMPTOTIC_FACTOR = 1.0 / (45.0 * np.sqrt(np.pi))


class QuadratureError(ValueError):
    """Quadrature configuration below the supported minimum."""


class KernelBoundaryError(ValueError):
    """A kernel handed to the integration-by-parts check does not vanish at y = 1."""


@dataclass(frozen=True)
class KernelMatrix:
    nodes: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.nodes)

    def weighted(self) -> np.ndarray:
        """Matrix of the form sum K_ij u_i u_j w_i w_j with w = 1/M."""
        return self.values / self.M**2


@dataclass(frozen=True)
class QuadConfig:
    """Resolution of the K^eps assembly.

    n_t: Gauss-Legendre nodes in v, where t = s_max + (1 - s_max) v^2.
    n_gl: Gauss-Legendre nodes per spatial panel.
    n_uniform: uniform panels on (0, 1/2), refined by breakpoints at multiples
        of the two boundary-layer widths sqrt(4 eps (t - s_i)).
    phi_modes: cosine modes in Phi_x.
    """

    n_t: int = 24
    n_gl: int = 8
    n_uniform: int = 8
    phi_modes: int = PHI_MODES

    def validate(self):
        if self.n_t < 4 or self.n_gl < 3 or self.n_uniform < 2 or self.phi_modes < 16:
            raise QuadratureError(f"quadrature resolution too low: {self}")

    def refined(self) -> "QuadConfig":
        return QuadConfig(2 * self.n_t, 2 * self.n_gl, 2 * self.n_uniform, self.phi_modes)


LAYER_MULTIPLES = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])


def midpoint_nodes(M: int) -> np.ndarray:
    return (np.arange(M) + 0.5) / M


def K0_value(s1, s2):
    s1 = np.asarray(s1, float)
    s2 = np.asarray(s2, float)
    return (2 - s1 - s2) ** 1.5 - np.abs(s1 - s2) ** 1.5


def assemble_K0(M: int | None = None, nodes=None) -> KernelMatrix:
    if nodes is None:
        if M is None or M < 2:
            raise ValueError("need M >= 2 or explicit nodes")
        nodes = midpoint_nodes(M)
    s = np.asarray(nodes, float)
    return KernelMatrix(s, K0_value(s[:, None], s[None, :]), {"eps": "asymptotic"})


def erf_identity(alpha, beta):
    """Closed form of int_0^inf (1 - erf(alpha x) erf(beta x)) dx."""
    alpha = np.asarray(alpha, float)
    beta = np.asarray(beta, float)
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ValueError("rates must be positive")
    return np.sqrt(alpha**2 + beta**2) / (alpha * beta * np.sqrt(np.pi))


# ---------------------------------------------------------------------------
# spatial quadrature adapted to the boundary layers


def _layer_panels(eps, tau1, tau2, n_gl, n_uniform, right=0.5):
    """Gauss-Legendre nodes/weights on (0, right) with panels graded at the layer widths.

    tau1, tau2 are arrays of equal shape; the result has that shape plus one axis.
    """
    gx, gw = np.polynomial.legendre.leggauss(n_gl)
    w1 = np.sqrt(4 * eps * tau1)[..., None] * LAYER_MULTIPLES
    w2 = np.sqrt(4 * eps * tau2)[..., None] * LAYER_MULTIPLES
    uni = np.broadcast_to(np.linspace(0, right, n_uniform + 1), tau1.shape + (n_uniform + 1,))
    bp = np.sort(np.clip(np.concatenate([w1, w2, uni], -1), 0, right), -1)
    a, b = bp[..., :-1], bp[..., 1:]
    half = (b - a)[..., None] / 2
    X = (a + b)[..., None] / 2 + half * gx
    W = half * gw
    shape = tau1.shape + (-1,)
    return X.reshape(shape), W.reshape(shape)


def _t_rule(n_t):
    v, w = np.polynomial.legendre.leggauss(n_t)
    return (v + 1) / 2, w / 2


# ---------------------------------------------------------------------------
# generators


def generator_A(eps: float, t, s1, s2, which="total", quad: QuadConfig | None = None):
    """A(t, s1, s2) or one of its six pieces A_1..A_6.

    total: half the integral over (0,1) of Phi_x(1-t) G(t-s1) G(t-s2), with G from
    the automatic representation.  Pieces use the splitting
    Phi_x = rho_x(0) + (rho_x - rho_x(0)) + eps phi_x and G = erf layer + H on (0,1/2).
    """
    quad = quad or QuadConfig()
    t, s1, s2 = np.broadcast_arrays(*(np.asarray(a, float) for a in (t, s1, s2)))
    if np.any(t <= np.maximum(s1, s2)):
        raise ValueError("need t > max(s1, s2)")
    tau1, tau2 = t - s1, t - s2
    theta = (1 - t)[..., None]
    if which == "total":
        X, W = _layer_panels(eps, tau1, tau2, quad.n_gl, quad.n_uniform)
        # mirror onto (1/2, 1) so the whole interval is integrated
        X = np.concatenate([X, 1 - X], -1)
        W = np.concatenate([W, W], -1)
        g1 = elementary_G(eps, tau1[..., None], X)
        g2 = elementary_G(eps, tau2[..., None], X)
        F = Phi_x_eval(eps, theta, X, quad.phi_modes) * g1 * g2
        return 0.5 * (F * W).sum(-1)
    if which not in (1, 2, 3, 4, 5, 6):
        raise ValueError(f"unknown generator {which!r}")
    X, W = _layer_panels(eps, tau1, tau2, quad.n_gl, quad.n_uniform)
    T1, T2 = tau1[..., None], tau2[..., None]
    e1, e2 = erf_layer(eps, T1, X), erf_layer(eps, T2, X)
    if which == 1:
        F = rho_eval(0.0, 1) * (e1 * e2 - 1)
    elif which == 2:
        F = (rho_eval(X, 1) - rho_eval(0.0, 1)) * (e1 * e2 - 1)
    elif which == 3:
        F = eps * phi_x_eval(eps, theta, X, quad.phi_modes) * (e1 * e2 - 1)
    else:
        px = Phi_x_eval(eps, theta, X, quad.phi_modes)
        if which == 4:
            F = px * corrector_H(eps, T1, X) * e2
        elif which == 5:
            F = px * corrector_H(eps, T2, X) * e1
        else:
            F = px * corrector_H(eps, T1, X) * corrector_H(eps, T2, X)
    return (F * W).sum(-1)


def A1_limit(eps: float, t, s1, s2):
    """eps -> 0 form of A_1: -2 sqrt(eps) rho_x(0) times the erf identity."""
    a = 1 / np.sqrt(np.asarray(t, float) - s1)
    b = 1 / np.sqrt(np.asarray(t, float) - s2)
    return -2 * np.sqrt(eps) * rho_eval(0.0, 1) * erf_identity(a, b)


# ---------------------------------------------------------------------------
# assembly


def _A_minus_one(eps, tau1, tau2, theta, quad):
    """int_0^{1/2} Phi_x(theta, x) (G(tau1, x) G(tau2, x) - 1) dx, batched."""
    X, W = _layer_panels(eps, tau1, tau2, quad.n_gl, quad.n_uniform)
    g1 = elementary_G(eps, tau1[..., None], X)
    g2 = elementary_G(eps, tau2[..., None], X)
    F = Phi_x_eval(eps, theta[..., None], X, quad.phi_modes) * (g1 * g2 - 1)
    return (F * W).sum(-1)


def kernel_entries(eps: float, s1, s2, quad: QuadConfig | None = None) -> np.ndarray:
    """K^eps at arbitrary pairs (vectorized)."""
    quad = quad or QuadConfig()
    quad.validate()
    s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
    lo, hi = np.minimum(s1, s2).ravel(), np.maximum(s1, s2).ravel()
    v, wv = _t_rule(quad.n_t)
    out = np.zeros(lo.size)
    span = 1 - hi
    chunk = max(1, 4096 // quad.n_t)
    for a in range(0, lo.size, chunk):
        sl = slice(a, a + chunk)
        L = span[sl][:, None]
        tau = L * v**2
        dtau = L * 2 * v * wv
        t = hi[sl][:, None] + tau
        tau1 = (hi[sl] - lo[sl])[:, None] + tau
        vals = _A_minus_one(eps, tau1, tau, 1 - t, quad)
        out[sl] = (vals * dtau).sum(-1)
    return out.reshape(s1.shape)


@lru_cache(maxsize=32)
def _assemble_cached(eps: float, M: int, quad: QuadConfig) -> KernelMatrix:
    s = midpoint_nodes(M)
    I, J = np.triu_indices(M)
    vals = kernel_entries(eps, s[I], s[J], quad)
    K = np.zeros((M, M))
    K[I, J] = vals
    K[J, I] = vals
    K.setflags(write=False)
    meta = {"eps": eps, "quad": quad}
    return KernelMatrix(s, K, meta)


def assemble_K_eps(eps: float, M: int = 48, quad: QuadConfig | None = None) -> KernelMatrix:
    """K^eps at midpoint nodes, one evaluation per unordered pair (cached)."""
    if not eps > 0:
        raise ValueError("viscosity must be positive")
    if M < 2:
        raise ValueError("need at least two nodes")
    quad = quad or QuadConfig()
    quad.validate()
    return _assemble_cached(float(eps), int(M), quad)


def residual_matrix(eps: float, M: int = 48, quad: QuadConfig | None = None) -> KernelMatrix:
    K = assemble_K_eps(eps, M, quad)
    K0 = assemble_K0(nodes=K.nodes)
    R = K.values - np.sqrt(eps) * ASYMPTOTIC_FACTOR * K0.values
    return KernelMatrix(K.nodes, R, {"eps": eps, "residual": True})


def residual_ratio(eps: float, M: int = 48, quad: QuadConfig | None = None) -> float:
    """||K^eps - sqrt(eps) K^0 / (45 sqrt(pi))||_F / (sqrt(eps) ||K^0||_F)."""
    R = residual_matrix(eps, M, quad)
    K0 = assemble_K0(nodes=R.nodes)
    return float(np.linalg.norm(R.values) / (np.sqrt(eps) * np.linalg.norm(K0.values)))


def kernel_to_csv(K: KernelMatrix, path) -> None:
    quad = K.meta.get("quad")
    res = "" if quad is None else f"{quad.n_t}x{quad.n_gl}x{quad.n_uniform}x{quad.phi_modes}"
    with open(path, "w") as fh:
        fh.write(f"M={K.M},eps={K.meta.get('eps')},quad={res}\n")
        fh.write(",".join(repr(float(v)) for v in K.nodes) + "\n")
        for row in K.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def kernel_from_csv(path) -> KernelMatrix:
    with open(path) as fh:
        header = fh.readline().strip()
        nodes = np.array([float(v) for v in fh.readline().split(",")])
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    meta = dict(item.split("=", 1) for item in header.split(","))
    return KernelMatrix(nodes, np.array(rows), meta)


# ---------------------------------------------------------------------------
# weakly singular kernel diagnostics


def estimate_wsio_kappa(
    L: Callable,
    delta: float = 0.75,
    samples: int = 2000,
    seed: int = 0,
    box: tuple[float, float] = (0.0, 1.0),
) -> dict:
    """Sampled constants of the three weakly singular bounds.

    Pairs (x, y) are drawn uniformly in box^2; perturbations x' (resp. y') stay
    within half the distance |x - y|.  Draws leaving the box are discarded.
    Row k of the draw only depends on the seed, so larger sample counts extend
    smaller ones.
    """
    if not 0.5 < delta <= 1:
        raise ValueError("delta must lie in (1/2, 1]")
    lo, hi = box
    rng = np.random.default_rng(seed)
    r = rng.random((samples, 4))
    x = lo + (hi - lo) * r[:, 0]
    y = lo + (hi - lo) * r[:, 1]
    d = np.abs(x - y)
    ok = d > 0
    x, y, d, r = x[ok], y[ok], d[ok], r[ok]
    k1 = np.abs(L(x, y)) * np.sqrt(d)
    step = (2 * r[:, 2] - 1) * d / 2
    out = {"est1": float(k1.max(initial=0.0))}
    for key, (xa, ya) in (("est2", (x + step, y)), ("est3", (x, y + step))):
        keep = (xa >= lo) & (xa <= hi) & (ya >= lo) & (ya <= hi) & (step != 0)
        xa, ya = xa[keep], ya[keep]
        diff = np.abs(L(x[keep], y[keep]) - L(xa, ya))
        ratio = diff * d[keep] ** (0.5 + delta) / np.abs(step[keep]) ** delta
        out[key] = float(ratio.max(initial=0.0))
    out["kappa"] = max(out["est1"], out["est2"], out["est3"])
    return out


def mixed_derivative(L: Callable, x, y, h=None):
    """Centered difference for d^2 L / dx dy off the diagonal."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if h is None:
        h = np.minimum(1e-3, np.abs(x - y) / 8)
    return (L(x + h, y + h) - L(x + h, y - h) - L(x - h, y + h) + L(x - h, y - h)) / (4 * h * h)


def kernel_from_matrix(K: KernelMatrix) -> Callable:
    """Bicubic interpolant of a kernel matrix on its nodes, as a callable."""
    from scipy.interpolate import RectBivariateSpline

    spline = RectBivariateSpline(K.nodes, K.nodes, K.values, kx=3, ky=3)
    return lambda x, y: spline.ev(x, y)


# one-sided fourth-order stencil for a first derivative
_ONE_SIDED = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / 12.0


def ibp_transform_check(
    L: Callable,
    u: Control,
    n_quad: int = 64,
    eta: float = 1e-3,
    boundary_tol: float = 1e-10,
):
    """Both sides of the integration-by-parts identity on Gamma = {x <= y}.

    direct      = int_Gamma L u u
    transformed = int_Gamma d12 L U U + (1/2) int (d1 L - d2 L)(x, x) U(x)^2
    Diagonal derivatives use one-sided stencils with points inside Gamma and
    inside the unit square.
    Returns (direct, transformed, boundary_term).
    """
    probe = np.linspace(0, 1, 33)
    if np.abs(L(probe, np.ones_like(probe))).max() > boundary_tol:
        raise KernelBoundaryError("kernel does not vanish on y = 1")
    # Duffy map of the triangle: x = y * xi, Jacobian y
    g, w = np.polynomial.legendre.leggauss(n_quad)
    g, w = (g + 1) / 2, w / 2
    Y, XI = np.meshgrid(g, g, indexing="ij")
    X = Y * XI
    Wt = np.outer(w, w) * Y
    uv = u(X) * u(Y)
    tnodes = u.nodes
    Uf = lambda s: np.interp(s, tnodes, u.primitive)
    direct = float((L(X, Y) * uv * Wt).sum())
    d12 = mixed_derivative(L, X, Y)
    body = float((d12 * Uf(X) * Uf(Y) * Wt).sum())
    s = g
    k = np.arange(5)[:, None] * eta
    # d1 - d2 = 2 d1 - D = D - 2 d2 with D the derivative along the diagonal;
    # take d1 from points to the left, or d2 from points above near x = 0
    hs = np.minimum(eta, np.minimum(s, 1 - s) / 2)
    D = (L(s + hs, s + hs) - L(s - hs, s - hs)) / (2 * hs)
    left = s >= 4 * eta
    sl, sr = s[left], s[~left]
    diff = np.empty_like(s)
    diff[left] = 2 * (_ONE_SIDED[:, None] * L(sl - k, sl + 0 * k)).sum(0) / eta - D[left]
    diff[~left] = D[~left] + 2 * (_ONE_SIDED[:, None] * L(sr + 0 * k, sr + k)).sum(0) / eta
    boundary = float(0.5 * (diff * Uf(s) ** 2 * w).sum())
    return direct, body + boundary, boundary


def kernel_from_generator(a: Callable, n_quad: int = 32) -> Callable:
    """L(s1, s2) = int_{s1 v s2}^1 a(t, s1, s2) dt by Gauss-Legendre in t."""
    g, w = np.polynomial.legendre.leggauss(n_quad)
    g, w = (g + 1) / 2, w / 2

    def L(s1, s2):
        s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
        lo = np.maximum(s1, s2)[..., None]
        t = lo + (1 - lo) * g
        return ((1 - lo) * w * a(t, s1[..., None], s2[..., None])).sum(-1)

    return L


# ---------------------------------------------------------------------------
# extension of a kernel from the unit square to the plane


def extend_kernel(K: Callable, s: float = 0.5) -> Callable:
    """Extension constant along diagonals in the strip |y - x| < 1, power decay outside."""
    k01 = float(K(np.array(0.0), np.array(1.0)))
    k10 = float(K(np.array(1.0), np.array(0.0)))

    def Kbar(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.full(x.shape, np.nan)
        d = y - x
        inside = (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1)
        if inside.any():
            out[inside] = K(x[inside], y[inside])
        rules = [
            (~inside & (d > 0) & (d < 1) & (y >= 1), lambda X, Y: K(1 + X - Y, np.ones_like(X))),
            (~inside & (d > 0) & (d < 1) & (x <= 0), lambda X, Y: K(np.zeros_like(X), Y - X)),
            (~inside & (d < 0) & (d > -1) & (x >= 1), lambda X, Y: K(np.ones_like(X), 1 + Y - X)),
            (~inside & (d < 0) & (d > -1) & (y <= 0), lambda X, Y: K(X - Y, np.zeros_like(X))),
        ]
        for mask, rule in rules:
            mask = mask & np.isnan(out)
            if mask.any():
                out[mask] = rule(x[mask], y[mask])
        up = np.isnan(out) & (d >= 1)
        out[up] = k01 * np.abs(d[up]) ** (-1 + s)
        down = np.isnan(out) & (d <= -1)
        out[down] = k10 * np.abs(d[down]) ** (-1 + s)
        return out

    return Kbar
