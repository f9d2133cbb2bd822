"""Grids, Dirichlet sine-basis machinery, heat solvers and special functions.

Everything lives on the unit interval with homogeneous Dirichlet conditions.
Functions are expanded against e_n(x) = sqrt(2) sin(n pi x), n >= 1, and
sampled at the interior nodes x_i = i / (n_x + 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.fft import dct, dst
from scipy.integrate import cumulative_trapezoid
from scipy.special import erf, erfc

SQRT2 = np.sqrt(2.0)

DEFAULT_N_X = 511
DEFAULT_N_T = 512


class GridMismatchError(ValueError):
    """Raised when samples, modes and grids do not fit together."""


# ---------------------------------------------------------------------------
# grids and containers


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform interior nodes x_i = i*h, i = 1..n_x, with h = 1/(n_x+1)."""

    n_x: int = DEFAULT_N_X

    def __post_init__(self):
        if self.n_x < 1:
            raise ValueError("n_x must be positive")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_x + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.n_x + 1) / (self.n_x + 1)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time nodes t_k = k*T/n_t, k = 0..n_t."""

    n_t: int = DEFAULT_N_T
    T: float = 1.0

    def __post_init__(self):
        if self.n_t < 1 or not self.T > 0:
            raise ValueError("need n_t >= 1 and T > 0")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_t + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass(frozen=True)
class SpectralState:
    """Sine coefficients c_n, n = 1..len(coeffs)."""

    coeffs: np.ndarray
    nu: float | None = None

    @property
    def n_modes(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class Field:
    """Space-time samples values[k, i] at (t_k, x_i)."""

    values: np.ndarray
    time_grid: TimeGrid
    space_grid: SpaceGrid

    def __post_init__(self):
        if self.values.shape != (self.time_grid.n_t + 1, self.space_grid.n_x):
            raise GridMismatchError(
                f"values shape {self.values.shape} does not match grids"
            )

    def at_end(self) -> np.ndarray:
        return self.values[-1]


@dataclass(frozen=True)
class Control:
    """Scalar control sampled on a uniform time grid.

    The primitive U uses the cumulative trapezoid rule with U(0) = 0.
    """

    samples: np.ndarray
    T: float = 1.0
    _primitive: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or len(s) < 2:
            raise GridMismatchError("control needs at least two samples")
        object.__setattr__(self, "samples", s)
        object.__setattr__(
            self, "_primitive", cumulative_trapezoid(s, self.nodes, initial=0.0)
        )

    @classmethod
    def from_function(cls, f: Callable, n_t: int = DEFAULT_N_T, T: float = 1.0):
        t = TimeGrid(n_t, T).nodes
        return cls(np.broadcast_to(np.asarray(f(t), dtype=float), t.shape).copy(), T)

    @classmethod
    def zeros(cls, n_t: int = DEFAULT_N_T, T: float = 1.0):
        return cls(np.zeros(n_t + 1), T)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(len(self.samples) - 1, self.T)

    @property
    def nodes(self) -> np.ndarray:
        return self.time_grid.nodes

    @property
    def primitive(self) -> np.ndarray:
        return self._primitive

    @property
    def weights(self) -> np.ndarray:
        w = np.full(len(self.samples), self.T / (len(self.samples) - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.weights * self.samples**2)))

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.nodes, self.samples)


# ---------------------------------------------------------------------------
# the profile rho and its sine coefficients


def rho_eval(x, order: int = 0):
    """rho(x) = x^5/5 - x^4/2 + x^3/3 - x/30 and its first two derivatives."""
    x = np.asarray(x, dtype=float)
    if order == 0:
        return x**5 / 5 - x**4 / 2 + x**3 / 3 - x / 30
    if order == 1:
        return x**2 * (x - 1) ** 2 - 1.0 / 30
    if order == 2:
        return 2 * x * (x - 1) * (2 * x - 1)
    raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


def rho_sine_coeffs(n) -> np.ndarray:
    """<rho, e_n>; nonzero only for even n since rho is odd about 1/2."""
    n = np.asarray(n, dtype=float)
    return -12 * SQRT2 * (1 + (-1) ** n) / (n**5 * np.pi**5)


def rho_xx_sine_coeffs(n) -> np.ndarray:
    """<rho_xx, e_n>, obtained from rho_xxxx = 24x - 12 and rho_xx = 0 at the ends."""
    n = np.asarray(n, dtype=float)
    return 12 * SQRT2 * (1 + (-1) ** n) / (n**3 * np.pi**3)


def ones_sine_coeffs(n) -> np.ndarray:
    """<1, e_n> = sqrt(2) (1 - (-1)^n) / (n pi)."""
    n = np.asarray(n, dtype=float)
    return SQRT2 * (1 - (-1) ** n) / (n * np.pi)


# ---------------------------------------------------------------------------
# transforms


def sine_analyze(samples, n_modes: int | None = None) -> SpectralState:
    """Discrete sine coefficients of interior samples (exact for n_modes <= n_x modes)."""
    f = np.asarray(samples, dtype=float)
    n_x = f.shape[-1]
    n_modes = n_x if n_modes is None else n_modes
    if n_modes > n_x:
        raise GridMismatchError(f"cannot resolve {n_modes} modes from {n_x} samples")
    c = dst(f, type=1, axis=-1) / (SQRT2 * (n_x + 1))
    return SpectralState(c[..., :n_modes])


def sine_synthesize(state: SpectralState | np.ndarray, grid: SpaceGrid) -> np.ndarray:
    c = state.coeffs if isinstance(state, SpectralState) else np.asarray(state)
    n = c.shape[-1]
    if n > grid.n_x:
        # modes above n_x alias onto the grid; evaluate them directly
        x = grid.nodes
        return c @ (SQRT2 * np.sin(np.outer(np.arange(1, n + 1), np.pi * x)))
    if n < grid.n_x:
        pad = [(0, 0)] * (c.ndim - 1) + [(0, grid.n_x - n)]
        c = np.pad(c, pad)
    return dst(c, type=1, axis=-1) / SQRT2


def cosine_synthesize_derivative(coeffs: np.ndarray, n_x: int) -> np.ndarray:
    """Samples of d/dx sum c_n e_n at the n_x interior nodes of a grid."""
    c = np.asarray(coeffs)
    n = c.shape[-1]
    if n > n_x:
        raise GridMismatchError("derivative synthesis needs n_modes <= n_x")
    k = np.arange(1, n + 1)
    arr = np.zeros(c.shape[:-1] + (n_x + 2,))
    arr[..., 1 : n + 1] = c * (SQRT2 * np.pi * k)
    return dct(arr, type=1, axis=-1)[..., 1:-1] / 2


# small problems are dominated by per-call FFT overhead; use dense transforms instead
_DENSE_FLUX_MAX = 128


@lru_cache(maxsize=8)
def _flux_matrices(n: int):
    n_pad = (3 * (n + 1) + 1) // 2 - 1
    k = np.arange(1, n + 1)[:, None]
    x = np.arange(1, n_pad + 1)[None, :] / (n_pad + 1)
    S = SQRT2 * np.sin(np.pi * k * x)
    D = SQRT2 * np.pi * k * np.cos(np.pi * k * x)
    A = S.T / (n_pad + 1)
    return S, D, A


def dealiased_flux(c: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Sine coefficients of -w * y_x, with y = sum c_n e_n and w = sum w_n e_n.

    w defaults to y, giving the Burgers term -y y_x. The product is formed on a
    grid padded by 3/2 so that no aliased mode lands in 1..n.
    """
    n = c.shape[-1]
    if n <= _DENSE_FLUX_MAX:
        S, D, A = _flux_matrices(n)
        return (-((c if w is None else w) @ S) * (c @ D)) @ A
    n_pad = (3 * (n + 1) + 1) // 2 - 1
    y_x = cosine_synthesize_derivative(c, n_pad)
    pad = [(0, 0)] * (c.ndim - 1) + [(0, n_pad - n)]
    ww = np.pad(c if w is None else w, pad)
    wv = dst(ww, type=1, axis=-1) / SQRT2
    prod = -wv * y_x
    return dst(prod, type=1, axis=-1)[..., :n] / (SQRT2 * (n_pad + 1))


# ---------------------------------------------------------------------------
# heat equation


def heat_eigenvalues(nu: float, n_modes: int) -> np.ndarray:
    k = np.arange(1, n_modes + 1)
    return nu * (k * np.pi) ** 2


def heat_propagate(state: SpectralState, nu: float, dt: float) -> SpectralState:
    if dt < 0:
        raise ValueError("negative time step")
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    lam = heat_eigenvalues(nu, state.n_modes)
    return SpectralState(state.coeffs * np.exp(-lam * dt), nu)


def phi1(z: np.ndarray) -> np.ndarray:
    """(1 - e^{-z}) / z, stable at z = 0."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def psi(z: np.ndarray) -> np.ndarray:
    """(1 - e^{-z}(1 + z)) / z^2, with a series near 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1e-3
    zs = z[small]
    out[small] = 0.5 - zs / 3 + zs**2 / 8 - zs**3 / 30
    zl = z[~small]
    out[~small] = (-np.expm1(-zl) - zl * np.exp(-zl)) / zl**2
    return out


def exp_integrator_weights(lam: np.ndarray, dt: float):
    """Per-mode weights for one step of z' = -lam z + f, f linear over the step.

    Returns (E, w0, w1) with c_new = E c + w0 f_start + w1 f_end.
    """
    z = lam * dt
    p = psi(z)
    return np.exp(-z), dt * p, dt * (phi1(z) - p)


def heat_coefficients(
    nu: float,
    source_coeffs: np.ndarray | None,
    c0: np.ndarray | None,
    time: TimeGrid,
    n_modes: int,
) -> np.ndarray:
    """Coefficient history (n_t+1, ..., n_modes) of z_t - nu z_xx = f.

    source_coeffs holds f_n at the time nodes; between nodes it is taken linear
    and integrated exactly against the exponential.  Extra middle axes are
    treated as independent batch members.
    """
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    lam = heat_eigenvalues(nu, n_modes)
    E, w0, w1 = exp_integrator_weights(lam, time.dt)
    batch = ()
    if source_coeffs is not None:
        batch = source_coeffs.shape[1:-1]
    elif c0 is not None:
        batch = np.shape(c0)[:-1]
    out = np.zeros((time.n_t + 1,) + batch + (n_modes,))
    if c0 is not None:
        out[0] = np.asarray(c0)[..., :n_modes]
    for k in range(time.n_t):
        c = E * out[k]
        if source_coeffs is not None:
            c += w0 * source_coeffs[k] + w1 * source_coeffs[k + 1]
        out[k + 1] = c
    return out


def solve_heat_dirichlet(
    nu: float,
    source=None,
    z0=None,
    space: SpaceGrid | None = None,
    time: TimeGrid | None = None,
    n_modes: int | None = None,
) -> Field:
    """Duhamel solution of z_t - nu z_xx = f, z = 0 on the boundary, z(0) = z0.

    source may be None, a Field, an array (n_t+1, n_x) of samples, an array
    (n_t+1,) of a space-independent source f(t), or a Control.
    """
    space = space or SpaceGrid()
    time = time or TimeGrid()
    n_modes = space.n_x if n_modes is None else n_modes
    if n_modes > space.n_x:
        raise GridMismatchError("n_modes must not exceed n_x")
    f = None
    if source is not None:
        if isinstance(source, Control):
            source = source.samples
        if isinstance(source, Field):
            if source.time_grid != time or source.space_grid != space:
                raise GridMismatchError("source grids differ from solve grids")
            source = source.values
        source = np.asarray(source, dtype=float)
        if source.shape == (time.n_t + 1,):
            f = np.outer(source, ones_sine_coeffs(np.arange(1, n_modes + 1)))
        elif source.shape == (time.n_t + 1, space.n_x):
            f = sine_analyze(source, n_modes).coeffs
        else:
            raise GridMismatchError(f"source shape {source.shape} does not fit grids")
    c0 = None if z0 is None else sine_analyze(np.asarray(z0, dtype=float), n_modes).coeffs
    coeffs = heat_coefficients(nu, f, c0, time, n_modes)
    return Field(sine_synthesize(coeffs, space), time, space)


# ---------------------------------------------------------------------------
# elementary solution G and its boundary-layer pieces

IMAGE_CROSSOVER = 0.02


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("elapsed time must be positive")


def G_sine(eps: float, t, x, tol: float = 1e-17, max_terms: int = 400_001):
    """Sine series sum over odd n of 4/(n pi) exp(-eps n^2 pi^2 t) sin(n pi x).

    The number of terms adapts so that the first omitted exponential is below tol.
    """
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    _check_time(t)
    et_min = eps * t.min() if t.size else 1.0
    n_max = int(np.sqrt(-np.log(tol) / (np.pi**2 * et_min))) + 2
    n_max = min(n_max, max_terms)
    out = np.zeros(t.shape)
    flat_t, flat_x, flat_o = t.ravel(), x.ravel(), out.ravel()
    chunk = max(1, 2_000_000 // max(n_max, 1))
    n = np.arange(1, n_max + 1, 2, dtype=float)
    for s in range(0, flat_t.size, chunk):
        tt, xx = flat_t[s : s + chunk], flat_x[s : s + chunk]
        terms = np.exp(-eps * np.pi**2 * np.outer(tt, n**2)) * np.sin(np.outer(xx, n * np.pi))
        flat_o[s : s + chunk] = terms @ (4 / (n * np.pi))
    return flat_o.reshape(t.shape)


def G_images(eps: float, t, x):
    """Method of images: sum_k erf((x-2k)/s) - erf((x-2k-1)/s)/2 - erf((x-2k+1)/s)/2."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    _check_time(t)
    s = np.sqrt(4 * eps * t)
    xf = np.minimum(x, 1 - x)
    # images beyond |k| = K contribute below erfc(8)
    K = int(np.ceil((8 * s.max() + 1) / 2)) if s.size else 1
    out = erf(xf / s)
    # pair k and -k so the +-1 tails cancel analytically
    out = out - 0.5 * (erf((xf + 1) / s) - erf((1 - xf) / s))
    for k in range(1, K + 1):
        a = erfc((2 * k - xf) / s) - erfc((2 * k + xf) / s)
        b = erfc((2 * k + 1 - xf) / s) - erfc((2 * k + 1 + xf) / s)
        c = erfc((2 * k - 1 - xf) / s) - erfc((2 * k - 1 + xf) / s)
        out = out + a - 0.5 * b - 0.5 * c
    return out


def elementary_G(eps: float, t, x, method: str = "auto"):
    """Heat solution on (0,1) with initial data 1 and zero boundary values."""
    if not eps > 0:
        raise ValueError("viscosity must be positive")
    if method == "sine":
        return G_sine(eps, t, x)
    if method == "images":
        return G_images(eps, t, x)
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    _check_time(t)
    out = np.empty(t.shape)
    small = eps * t < IMAGE_CROSSOVER
    if small.any():
        out[small] = G_images(eps, t[small], x[small])
    if (~small).any():
        out[~small] = G_sine(eps, t[~small], x[~small])
    return out


def erf_layer(eps: float, t, x):
    """Boundary-layer profile erf(x / sqrt(4 eps t))."""
    _check_time(t)
    return erf(np.asarray(x, float) / np.sqrt(4 * eps * np.asarray(t, float)))


def corrector_H(eps: float, t, x, method: str = "auto"):
    """H = G - erf(x / sqrt(4 eps t)) on 0 < x <= 1/2."""
    x = np.asarray(x, float)
    if np.any((x <= 0) | (x > 0.5)):
        raise ValueError("corrector_H is defined for 0 < x <= 1/2")
    return elementary_G(eps, t, x, method) - erf_layer(eps, t, x)


def sigma(s):
    """Trace-balancing profile -(1/sqrt(s pi)) exp(-1/(16 s))."""
    s = np.asarray(s, float)
    return -np.exp(-1.0 / (16 * s)) / np.sqrt(s * np.pi)


# ---------------------------------------------------------------------------
# the adjoint profile Phi and its correction phi

PHI_MODES = 128


def _even_cosines(x, n_even: int):
    """Yield (n, cos(n pi x)) for n = 2, 4, ..., 2*n_even by Chebyshev recurrence."""
    c2 = np.cos(2 * np.pi * np.asarray(x, float))
    prev, cur = np.ones_like(c2), c2
    for j in range(1, n_even + 1):
        yield 2 * j, cur
        prev, cur = cur, 2 * c2 * cur - prev


def _mode_series(eps, theta, x, n_modes, scale):
    theta = np.asarray(theta, float)
    x = np.asarray(x, float)
    out = np.zeros(np.broadcast_shapes(theta.shape, x.shape))
    for n, cn in _even_cosines(x, n_modes // 2):
        amp = rho_sine_coeffs(n) * SQRT2 * n * np.pi * scale
        # the time factor only needs theta's own shape
        out += (amp * np.expm1(-eps * (n * np.pi) ** 2 * theta)) * cn
    return out


def Phi_x_eval(eps: float, theta, x, n_modes: int = PHI_MODES):
    """Phi_x(theta, x) for Phi_t = eps Phi_xx, Phi(0) = rho, Dirichlet ends.

    Written as rho_x plus a cosine correction whose n-th term carries
    expm1(-eps n^2 pi^2 theta), so the truncation error vanishes as theta -> 0.
    """
    return rho_eval(x, 1) + _mode_series(eps, theta, x, n_modes, 1.0)


def phi_x_eval(eps: float, theta, x, n_modes: int = PHI_MODES):
    """phi_x with phi = (Phi - rho)/eps, evaluated without cancellation."""
    return _mode_series(eps, theta, x, n_modes, 1.0 / eps)


def solve_Phi(
    eps: float,
    space: SpaceGrid | None = None,
    time: TimeGrid | None = None,
    n_modes: int | None = None,
):
    """Fields Phi, Phi_x and phi = (Phi - rho)/eps on the given grids.

    Each mode is propagated exactly; Phi_x comes from differentiating the series.
    """
    if not eps > 0:
        raise ValueError("viscosity must be positive")
    space = space or SpaceGrid()
    time = time or TimeGrid()
    n_modes = space.n_x if n_modes is None else n_modes
    n = np.arange(1, n_modes + 1)
    lam = heat_eigenvalues(eps, n_modes)
    decay = np.expm1(-np.outer(time.nodes, lam))
    rn = rho_sine_coeffs(n)
    x = space.nodes
    rho = rho_eval(x)
    phi_c = rn * decay / eps
    phi = sine_synthesize(phi_c, space)
    Phi = rho + eps * phi
    Phi_x = rho_eval(x, 1) + eps * cosine_synthesize_derivative(phi_c, space.n_x)
    return Field(Phi, time, space), Field(Phi_x, time, space), Field(phi, time, space)


# ---------------------------------------------------------------------------
# Riesz form and the weak control norm


def three_halves_power(r):
    return (4.0 / 3.0) * np.abs(r) ** 1.5


def riesz_cell_matrix(M: int) -> np.ndarray:
    """Exact cell-pair integrals of |x-y|^{-1/2} on a uniform partition into M cells."""
    h = 1.0 / M
    d = (np.arange(M)[:, None] - np.arange(M)[None, :]) * h
    return three_halves_power(d + h) - 2 * three_halves_power(d) + three_halves_power(d - h)


def riesz_form(h_values) -> float:
    """Integral of |x-y|^{-1/2} h(x) h(y) for piecewise-constant h on uniform cells."""
    hv = np.asarray(h_values, dtype=float)
    return float(hv @ riesz_cell_matrix(len(hv)) @ hv)


def weak_norm_sq(u: Control) -> float:
    """R(U) with U the primitive of u (U(0) = 0), one cell per time step."""
    U = u.primitive
    cells = 0.5 * (U[1:] + U[:-1])
    # scale cells back to the unit interval when T != 1
    return riesz_form(cells) * u.T**1.5
