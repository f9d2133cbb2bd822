"""Viscous Burgers equation with a scalar control, and its quadratic expansion.

    y_t - nu y_xx + y y_x = u(t)   on (0, T) x (0, 1),   y = 0 at x = 0, 1.

The state is carried as sine coefficients.  The control enters linearly, so the
solver writes y = a + w where a is the exact heat response to u (exponential
integrator, u linear between samples) and w absorbs the initial data and the
nonlinearity; w is advanced with integrating-factor RK4 and a dealiased
product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral_core import (
    Control,
    Field,
    SpaceGrid,
    TimeGrid,
    dealiased_flux,
    heat_coefficients,
    heat_eigenvalues,
    ones_sine_coeffs,
    rho_eval,
    sine_analyze,
    sine_synthesize,
    weak_norm_sq,
)

CFL_TARGET = 0.25


class BlowUpError(RuntimeError):
    """Non-finite values or growth far beyond the maximum-principle bound."""


@dataclass
class BurgersRun:
    coeffs: np.ndarray  # (n_t+1, n_modes) at the control's time nodes
    control: Control
    nu: float
    y0: np.ndarray
    space: SpaceGrid
    diagnostics: dict = field(default_factory=dict)

    @property
    def time_grid(self) -> TimeGrid:
        return self.control.time_grid

    @property
    def trajectory(self) -> Field:
        return Field(sine_synthesize(self.coeffs, self.space), self.time_grid, self.space)

    def final(self) -> np.ndarray:
        return sine_synthesize(self.coeffs[-1], self.space)


def _max_principle_bound(u: Control, y0: np.ndarray) -> float:
    return float(np.abs(y0).max(initial=0.0) + np.sum(u.weights * np.abs(u.samples)))


def forced_heat_coeffs(nu: float, u_samples: np.ndarray, T: float, n_modes: int) -> np.ndarray:
    """Heat response to a space-independent source, at every sample time.

    u_samples may carry leading batch axes; the result is (n_t+1, *batch, n_modes).
    """
    u_samples = np.asarray(u_samples, float)
    time = TimeGrid(u_samples.shape[-1] - 1, T)
    g = ones_sine_coeffs(np.arange(1, n_modes + 1))
    src = np.moveaxis(u_samples, -1, 0)[..., None] * g
    return heat_coefficients(nu, src, None, time, n_modes)


def _refine_samples(samples: np.ndarray, T: float, factor: int) -> np.ndarray:
    n_t = samples.shape[-1] - 1
    coarse = TimeGrid(n_t, T).nodes
    fine = TimeGrid(factor * n_t, T).nodes
    return np.apply_along_axis(lambda s: np.interp(fine, coarse, s), -1, samples)


def integrate_samples(
    nu: float,
    u_samples: np.ndarray,
    T: float,
    c0: np.ndarray,
    substeps: int = 1,
    limit: float | None = None,
) -> np.ndarray:
    """Coefficient history at all substep nodes, shape (substeps*n_t + 1, *batch, n_modes).

    u_samples (*batch, n_t+1) and c0 (*batch, n_modes) may carry batch axes.
    """
    c0 = np.asarray(c0, float)
    n_modes = c0.shape[-1]
    n_fine = substeps * (np.shape(u_samples)[-1] - 1)
    dt = T / n_fine
    # a at the substep nodes and their midpoints
    a = forced_heat_coeffs(nu, _refine_samples(np.asarray(u_samples, float), T, 2 * substeps), T, n_modes)
    lam = heat_eigenvalues(nu, n_modes)
    E = np.exp(-lam * dt)
    E2 = np.exp(-lam * dt / 2)
    w = c0 * np.ones(a.shape[1:])
    out = np.empty((n_fine + 1,) + w.shape)
    out[0] = w + a[0]
    for k in range(n_fine):
        a0, ah, a1 = a[2 * k], a[2 * k + 1], a[2 * k + 2]
        k1 = dealiased_flux(a0 + w)
        k2 = dealiased_flux(ah + E2 * (w + 0.5 * dt * k1))
        k3 = dealiased_flux(ah + E2 * w + 0.5 * dt * k2)
        k4 = dealiased_flux(a1 + E * w + dt * E2 * k3)
        w = E * w + dt / 6 * (E * k1 + 2 * E2 * (k2 + k3) + k4)
        out[k + 1] = w + a1
        if not np.all(np.isfinite(w)):
            raise BlowUpError(f"non-finite state at step {k + 1}")
        if limit is not None and np.sqrt(2) * np.abs(out[k + 1]).sum(-1).max() > limit:
            # the coefficient sum bounds the sup norm; confirm on samples
            y = sine_synthesize(out[k + 1], SpaceGrid(n_modes))
            if np.abs(y).max() > limit:
                raise BlowUpError(f"state exceeds ten times the max-principle bound at step {k + 1}")
    return out


def integrate_burgers(
    nu: float,
    u: Control,
    c0: np.ndarray,
    substeps: int = 1,
    bound: float | None = None,
) -> np.ndarray:
    """Coefficient history at all substep nodes, shape (substeps*n_t + 1, n_modes)."""
    limit = None if bound is None else 10 * bound + 1e-300
    return integrate_samples(nu, u.samples, u.T, c0, substeps, limit)


def _cfl_substeps(u: Control, y0: np.ndarray, n_modes: int) -> int:
    bound = _max_principle_bound(u, y0)
    dt = u.T / (len(u.samples) - 1)
    h = 1.0 / (n_modes + 1)
    return max(1, int(np.ceil(bound * dt / (CFL_TARGET * h))))


def solve_burgers(
    nu: float,
    u: Control,
    y0=None,
    space: SpaceGrid | None = None,
    n_modes: int | None = None,
    substeps: int | None = None,
) -> BurgersRun:
    """Solve on (0, u.T), recording the state at the control's time nodes."""
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    space = space or SpaceGrid()
    n_modes = space.n_x if n_modes is None else n_modes
    y0 = np.zeros(space.n_x) if y0 is None else np.asarray(y0, float)
    if y0.shape != (space.n_x,):
        raise ValueError("initial data does not match the space grid")
    c0 = sine_analyze(y0, n_modes).coeffs
    bound = _max_principle_bound(u, y0)
    if substeps is None:
        substeps = _cfl_substeps(u, y0, n_modes)
    hist = integrate_burgers(nu, u, c0, substeps, bound)
    coeffs = hist[::substeps]
    diag = {
        "steps": substeps * (len(u.samples) - 1),
        "cfl": bound * (u.T / (substeps * (len(u.samples) - 1))) * (n_modes + 1),
        "max_principle_bound": bound,
    }
    return BurgersRun(coeffs, u, nu, y0, space, diag)


# ---------------------------------------------------------------------------
# scaling between small time and small viscosity


def scale_to_unit(T: float, u: Control, y0=None):
    """(eps, u_tilde, y0_tilde) with eps = T, u_tilde(s) = eps^2 u(eps s), y0_tilde = eps y0."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    if not np.isclose(u.T, T):
        raise ValueError("control horizon differs from T")
    eps = T
    ut = Control(eps**2 * u.samples, 1.0)
    yt = None if y0 is None else eps * np.asarray(y0, float)
    return eps, ut, yt


def unscale(eps: float, ut: Control, yt=None):
    """Inverse of scale_to_unit: returns (T, u, y0)."""
    u = Control(ut.samples / eps**2, eps)
    y0 = None if yt is None else np.asarray(yt, float) / eps
    return eps, u, y0


# ---------------------------------------------------------------------------
# quadratic expansion y = a + b + r


def first_order_coeffs(eps: float, u: Control, n_modes: int) -> np.ndarray:
    return forced_heat_coeffs(eps, u.samples, u.T, n_modes)


def second_order_coeffs(eps: float, a_coeffs: np.ndarray, T: float = 1.0) -> np.ndarray:
    n_t = a_coeffs.shape[0] - 1
    src = dealiased_flux(a_coeffs)
    return heat_coefficients(eps, src, None, TimeGrid(n_t, T), a_coeffs.shape[1])


def solve_first_order_a(eps: float, u: Control, space: SpaceGrid | None = None) -> Field:
    """a_t - eps a_xx = u(t), a(0) = 0."""
    space = space or SpaceGrid()
    c = first_order_coeffs(eps, u, space.n_x)
    return Field(sine_synthesize(c, space), u.time_grid, space)


def solve_second_order_b(eps: float, a: Field) -> Field:
    """b_t - eps b_xx = -a a_x, b(0) = 0."""
    ac = sine_analyze(a.values).coeffs
    c = second_order_coeffs(eps, ac, a.time_grid.T)
    return Field(sine_synthesize(c, a.space_grid), a.time_grid, a.space_grid)


def project(profile, samples, space: SpaceGrid | None = None) -> float:
    """Trapezoid inner product on (0,1); boundary samples are zero."""
    profile = np.asarray(profile, float)
    samples = np.asarray(samples, float)
    if profile.shape != samples.shape:
        raise ValueError("profile and field live on different grids")
    h = 1.0 / (samples.shape[-1] + 1) if space is None else space.h
    return float(h * np.sum(profile * samples))


def expansion_residual(eps: float, u: Control, run: BurgersRun) -> tuple[Field, dict]:
    """r = y - a - b on the run's grids, with norms and the rho-projection at the end."""
    n_modes = run.coeffs.shape[1]
    a = first_order_coeffs(eps, u, n_modes)
    b = second_order_coeffs(eps, a, u.T)
    rc = run.coeffs - a - b
    space = run.space
    r = Field(sine_synthesize(rc, space), run.time_grid, space)
    dt = run.time_grid.dt
    # spatial L2 norms are exact in coefficient space
    r_norm = np.sqrt(np.sum(dt * np.sum(rc**2, axis=1)))
    rt = np.diff(rc, axis=0) / dt
    rt_norm = np.sqrt(np.sum(dt * np.sum(rt**2, axis=1)))
    rho = rho_eval(space.nodes)
    report = {
        "r_l2": float(r_norm),
        "r_t_l2": float(rt_norm),
        "rho_r_end": project(rho, r.at_end()),
        "rho_b_end": project(rho, sine_synthesize(b[-1], space)),
    }
    return r, report


def steady_state(ubar: float, eps: float, x):
    """abar = x(1-x) ubar / (2 eps), bbar = rho(x) ubar^2 / (8 eps^3)."""
    x = np.asarray(x, float)
    return x * (1 - x) * ubar / (2 * eps), rho_eval(x) * ubar**2 / (8 * eps**3)


# ---------------------------------------------------------------------------
# experiments


def random_control(
    rng: np.random.Generator,
    amplitude: float,
    n_t: int = 256,
    T: float = 1.0,
    n_terms: int = 8,
) -> Control:
    """Truncated sine series in time, coefficients ~ N(0,1)/k, scaled to an L2 norm."""
    k = np.arange(1, n_terms + 1)
    c = rng.standard_normal(n_terms) / k
    t = TimeGrid(n_t, T).nodes
    u = Control(np.sin(np.outer(t / T, k * np.pi)) @ c, T)
    return Control(u.samples * (amplitude / u.l2_norm()), T)


def drift_experiment(
    eps: float,
    sample_count: int = 100,
    seed: int = 0,
    amplitude_policy: str = "uniform",
    space: SpaceGrid | None = None,
    n_t: int = 256,
    n_terms: int = 8,
) -> dict:
    """Drift of <rho, y(1)> for random controls with |u|_2 <= eps^{3/2}, viscosity eps.

    amplitude_policy: "max" puts every control on the sphere |u|_2 = eps^{3/2};
    "uniform" draws the radius uniformly in (0, eps^{3/2}].
    """
    if not 0 < eps <= 0.1:
        raise ValueError("the drift experiment is meant for 0 < eps <= 0.1")
    space = space or SpaceGrid(255)
    rng = np.random.default_rng(seed)
    rho = rho_eval(space.nodes)
    cap = eps**1.5
    records = []
    for i in range(sample_count):
        radius = cap if amplitude_policy == "max" else cap * (1 - rng.random())
        u = random_control(rng, radius, n_t, 1.0, n_terms)
        rec = {"index": i, "l2": u.l2_norm(), "weak": weak_norm_sq(u)}
        try:
            run = solve_burgers(eps, u, None, space)
        except BlowUpError as exc:
            rec.update(blowup=str(exc), projection=np.nan)
            records.append(rec)
            continue
        rec["projection"] = project(rho, run.final())
        records.append(rec)
    proj = np.array([r["projection"] for r in records])
    weak = np.array([r["weak"] for r in records])
    ok = np.isfinite(proj) & (weak > 0)
    ratios = proj[ok] / (np.sqrt(eps) * weak[ok])
    return {
        "eps": eps,
        "samples": records,
        "projections": proj,
        "weak_norms": weak,
        "all_positive": bool(np.all(proj[np.isfinite(proj)] > 0) and np.all(np.isfinite(proj))),
        "k2_fit": float(ratios.min()) if ratios.size else float("nan"),
    }


def h2_surrogate(y0, space: SpaceGrid | None = None) -> float:
    """||y0||_2 + ||y0''||_2 with the second derivative taken spectrally."""
    c = sine_analyze(np.asarray(y0, float)).coeffs
    n = np.arange(1, len(c) + 1)
    return float(np.sqrt(np.sum(c**2)) + np.sqrt(np.sum((n**2 * np.pi**2 * c) ** 2)))


def persistence_check(
    T: float,
    y0,
    mu,
    nu: float = 1.0,
    space: SpaceGrid | None = None,
    n_t: int = 256,
) -> float:
    """|<mu, y(T)> - <mu, y0>| for the uncontrolled equation."""
    space = space or SpaceGrid()
    y0 = np.asarray(y0, float)
    if h2_surrogate(y0) > 1 + 1e-12:
        raise ValueError("initial data exceeds the unit H2 surrogate bound")
    run = solve_burgers(nu, Control.zeros(n_t, T), y0, space)
    return abs(project(mu, run.final()) - project(mu, y0))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def final_theorem_run(
    delta: float,
    T: float,
    u: Control,
    eta: float = 1.0,
    k2: float = 0.0,
    space: SpaceGrid | None = None,
) -> dict:
    """Split y = ybar + y_u + z for y0 = delta * rho, nu = 1, and report projections."""
    if u.l2_norm() > eta * (1 + 1e-12):
        raise ValueError("control exceeds the budget")
    if not np.isclose(u.T, T):
        raise ValueError("control horizon differs from T")
    space = space or SpaceGrid()
    rho = rho_eval(space.nodes)
    y0 = delta * rho
    full = solve_burgers(1.0, u, y0, space)
    free = solve_burgers(1.0, Control.zeros(len(u.samples) - 1, T), y0, space)
    forced = solve_burgers(1.0, u, None, space)
    zc = full.coeffs - free.coeffs - forced.coeffs
    dt = u.T / (len(u.samples) - 1)
    zt = np.sqrt(np.sum(dt * np.sum((np.diff(zc, axis=0) / dt) ** 2, axis=1)))
    rho_sq = project(rho, rho)
    proj = project(rho, full.final())
    weak = weak_norm_sq(u)
    lower = delta * rho_sq + k2 * weak
    C = max(0.0, lower - proj) / (np.sqrt(T) * delta * (1 + u.l2_norm())) if delta > 0 else 0.0
    return {
        "projection": proj,
        "projection_free": project(rho, free.final()),
        "projection_forced": project(rho, forced.final()),
        "projection_z": project(rho, sine_synthesize(zc[-1], space)),
        "delta_rho_sq": delta * rho_sq,
        "weak_norm": weak,
        "z_t_l2": float(zt),
        "fitted_C": float(C),
        "positive": proj > 0,
    }
