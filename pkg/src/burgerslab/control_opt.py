"""Adjoint-based attempts at null control, and minimal-energy control of reachable modes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .burgers_sim import integrate_samples, project, random_control
from .spectral_core import (
    Control,
    SpaceGrid,
    TimeGrid,
    dealiased_flux,
    exp_integrator_weights,
    heat_eigenvalues,
    ones_sine_coeffs,
    rho_eval,
    sine_analyze,
    sine_synthesize,
)


class OptimizerDivergence(RuntimeError):
    """Line search failed to find any acceptable step."""


class GramianConditionError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# cost and adjoint gradient
#
# Arrays of control samples (*batch, n_t+1) and initial coefficients
# (*batch, n_modes) may carry batch axes; runs in a batch are independent.


def _forward(nu, U, T, c0):
    # two substeps per control interval so the adjoint sees y at half steps
    return integrate_samples(nu, U, T, c0, substeps=2)


def cost_samples(nu: float, U: np.ndarray, T: float, c0: np.ndarray) -> np.ndarray:
    """J = 0.5 ||y(T)||_2^2, computed in coefficient space."""
    J = 0.5 * np.sum(_forward(nu, U, T, c0)[-1] ** 2, axis=-1)
    if not np.all(np.isfinite(J)):
        raise OptimizerDivergence("non-finite cost")
    return J


def cost(nu: float, u: Control, c0: np.ndarray) -> float:
    return float(cost_samples(nu, u.samples, u.T, c0))


def adjoint_samples(nu: float, U: np.ndarray, T: float, c0: np.ndarray):
    """(J, g, y(T) coefficients) with g the L2 gradient at the control nodes."""
    c0 = np.asarray(c0, float)
    n_modes = c0.shape[-1]
    hist = _forward(nu, U, T, c0)
    n_t = np.shape(U)[-1] - 1
    dt = T / n_t
    lam = heat_eigenvalues(nu, n_modes)
    E = np.exp(-lam * dt)
    E2 = np.exp(-lam * dt / 2)
    ones = ones_sine_coeffs(np.arange(1, n_modes + 1))

    # reversed time s = T - t turns p_t + nu p_xx + y p_x = 0 into p_s = nu p_xx + y p_x
    def rhs(p, y):
        return -dealiased_flux(p, y)

    p = hist[-1].copy()
    grad = np.empty(p.shape[:-1] + (n_t + 1,))
    grad[..., -1] = p @ ones
    for k in range(n_t, 0, -1):
        y1, yh, y0 = hist[2 * k], hist[2 * k - 1], hist[2 * k - 2]
        k1 = rhs(p, y1)
        k2 = rhs(E2 * (p + 0.5 * dt * k1), yh)
        k3 = rhs(E2 * p + 0.5 * dt * k2, yh)
        k4 = rhs(E * p + dt * E2 * k3, y0)
        p = E * p + dt / 6 * (E * k1 + 2 * E2 * (k2 + k3) + k4)
        if not np.all(np.isfinite(p)):
            raise OptimizerDivergence("adjoint solve produced non-finite values")
        grad[..., k - 1] = p @ ones
    J = 0.5 * np.sum(hist[-1] ** 2, axis=-1)
    return J, grad, hist[-1]


def adjoint_gradient(nu: float, u: Control, y0=None, n_modes: int = 63, c0=None):
    """L2 gradient of J = 0.5 ||y(T)||^2 with respect to u, at the control's nodes.

    Solves p_t + nu p_xx + y p_x = 0 backward from p(T) = y(T) and returns
    (J, g) with g(t) = int_0^1 p(t, x) dx.
    """
    if c0 is None:
        c0 = np.zeros(n_modes) if y0 is None else sine_analyze(np.asarray(y0, float), n_modes).coeffs
    J, g, _ = adjoint_samples(nu, u.samples, u.T, c0)
    return float(J), g


def heat_adjoint_gradient(nu: float, yT_coeffs: np.ndarray, nodes: np.ndarray, T: float) -> np.ndarray:
    """Linear-regime gradient: sum_n <1, e_n> exp(-nu n^2 pi^2 (T - t)) y_n(T)."""
    n = np.arange(1, len(yT_coeffs) + 1)
    lam = nu * (n * np.pi) ** 2
    return np.exp(-np.outer(T - nodes, lam)) @ (ones_sine_coeffs(n) * yT_coeffs)


def directional_fd(nu, u: Control, direction: np.ndarray, c0, h=1e-5) -> float:
    up = Control(u.samples + h * direction, u.T)
    um = Control(u.samples - h * direction, u.T)
    return (cost(nu, up, c0) - cost(nu, um, c0)) / (2 * h)


# ---------------------------------------------------------------------------
# projected gradient


@dataclass
class OptRun:
    seed: int = 0
    costs: list = field(default_factory=list)
    projections: list = field(default_factory=list)
    control: Control | None = None
    final_norm: float = float("nan")
    final_projection: float = float("nan")
    rejected: int = 0
    status: str = "iterations"

    @property
    def best_cost(self) -> float:
        return min(self.costs)


def _project_ball(U: np.ndarray, w: np.ndarray, eta: float) -> np.ndarray:
    n = np.sqrt(np.sum(w * U**2, axis=-1, keepdims=True))
    return U * np.minimum(1.0, eta / np.maximum(n, 1e-300))


def attempt_null_control_batch(
    delta: float,
    T: float = 1e-2,
    eta: float = 1.0,
    iterations: int = 500,
    seeds=(0,),
    n_modes: int = 63,
    n_t: int = 64,
    nu: float = 1.0,
    step0: float = 1.0,
    max_halvings: int = 30,
) -> list[OptRun]:
    """Projected gradient with Armijo backtracking on J = 0.5 ||y(T)||^2, y0 = delta rho.

    One run per seed; the runs advance in lockstep so that every solve is batched.
    Each run starts from a random control of norm below eta.
    """
    seeds = list(seeds)
    B = len(seeds)
    space = SpaceGrid(n_modes)
    rho = rho_eval(space.nodes)
    c0 = np.tile(sine_analyze(delta * rho).coeffs, (B, 1))
    w = Control.zeros(n_t, T).weights
    U = np.zeros((B, n_t + 1))
    for i, sd in enumerate(seeds):
        if delta != 0:
            rng = np.random.default_rng(sd)
            U[i] = random_control(rng, eta * rng.random(), n_t, T).samples
    runs = [OptRun(seed=sd) for sd in seeds]
    J, G, yT = adjoint_samples(nu, U, T, c0)
    step = np.full(B, step0)
    active = np.array([np.any(G[i]) for i in range(B)])
    for i in np.flatnonzero(~active):
        runs[i].status = "stationary"
    for _ in range(iterations):
        for i in range(B):
            runs[i].costs.append(float(J[i]))
        if not active.any():
            break
        searching = active.copy()
        halvings = np.zeros(B, int)
        moved = np.zeros(B, bool)
        trial = U.copy()
        while searching.any():
            idx = np.flatnonzero(searching)
            cand = _project_ball(U[idx] - step[idx, None] * G[idx], w, eta)
            Jt = cost_samples(nu, cand, T, c0[idx])
            decrease = np.sum(w * G[idx] * (cand - U[idx]), axis=-1)
            ok = (Jt <= J[idx] + 1e-4 * decrease) & (Jt <= J[idx])
            for j, i in enumerate(idx):
                if ok[j]:
                    trial[i] = cand[j]
                    moved[i] = True
                    searching[i] = False
                else:
                    step[i] *= 0.5
                    halvings[i] += 1
                    runs[i].rejected += 1
                    if halvings[i] >= max_halvings:
                        searching[i] = False
                        active[i] = False
                        runs[i].status = "line search exhausted"
        if moved.any():
            m = np.flatnonzero(moved)
            U[m] = trial[m]
            J[m], G[m], yT[m] = adjoint_samples(nu, U[m], T, c0[m])
            step[m] *= 2.0
    for i, run in enumerate(runs):
        run.costs.append(float(J[i]))
        run.control = Control(U[i], T)
        run.final_norm = float(np.sqrt(np.sum(yT[i] ** 2)))
        run.final_projection = project(rho, sine_synthesize(yT[i], space))
        run.projections.append(run.final_projection)
    return runs


def attempt_null_control(delta: float, T: float = 1e-2, eta: float = 1.0, iterations: int = 500, seed: int = 0, **kw) -> OptRun:
    return attempt_null_control_batch(delta, T, eta, iterations, [seed], **kw)[0]


# ---------------------------------------------------------------------------
# minimal-energy control of the reachable (even-symmetric) modes


def mode_response_matrix(eps: float, modes, T: float, n_ctrl: int) -> np.ndarray:
    """R with (R u)_j = a_{n_j}(T) from a(0) = 0 under the piecewise-linear control u.

    Each row is the exact exponential-integrator map from the control samples.
    """
    modes = np.asarray(modes)
    lam = eps * (modes * np.pi) ** 2
    g = ones_sine_coeffs(modes)
    dt = T / n_ctrl
    E, w0, w1 = exp_integrator_weights(lam, dt)
    k = np.arange(n_ctrl)
    # contribution of step k decays over the remaining n_ctrl-1-k steps
    decay = E[:, None] ** (n_ctrl - 1 - k)[None, :]
    R = np.zeros((len(modes), n_ctrl + 1))
    R[:, :-1] += decay * w0[:, None]
    R[:, 1:] += decay * w1[:, None]
    return R * g[:, None]


def even_mode_control(
    eps: float,
    T: float,
    targets: dict,
    n_ctrl: int = 512,
    a0=None,
    max_cond: float = 1e12,
) -> Control:
    """Minimal-L2 control steering the listed odd-index modes of a to their targets.

    targets maps mode index n (odd, i.e. profile even about 1/2) to a_n(T).
    a0 optionally gives starting coefficients (index n -> value).
    """
    modes = np.array(sorted(targets))
    if np.any(modes % 2 == 0):
        raise ValueError("only odd-index modes are reachable by a space-independent control")
    lam = eps * (modes * np.pi) ** 2
    start = np.array([0.0 if a0 is None else a0.get(int(n), 0.0) for n in modes])
    rhs = np.array([targets[n] for n in modes]) - np.exp(-lam * T) * start
    if not np.any(rhs):
        return Control.zeros(n_ctrl, T)
    R = mode_response_matrix(eps, modes, T, n_ctrl)
    w = Control.zeros(n_ctrl, T).weights
    Rw = R / w
    gram = Rw @ R.T
    cond = np.linalg.cond(gram)
    if cond > max_cond:
        raise GramianConditionError(f"Gramian condition number {cond:.3e}")
    mu = np.linalg.solve(gram, rhs)
    return Control(Rw.T @ mu, T)
