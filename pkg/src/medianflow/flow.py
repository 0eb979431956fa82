"""Stochastic Navier-Stokes driver in vorticity form.

The linear part (heat semigroup + white-in-time forcing) is integrated
exactly per mode as an Ornstein-Uhlenbeck update; the nonlinear term is
advanced by first-order integrating-factor Euler.  Unit viscosity is
hard-coded; only the scalar carries kappa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import NoiseModel, ou_variance_factor, standard_increments
from .spectral import (
    SpectralField,
    VectorField,
    WaveGrid,
    biot_savart,
    dealiased_product,
    from_physical,
    grad,
    leray_project,
    sobolev_norm,
    to_physical,
    vector_sobolev_norm,
    zero_vector,
)


class SimulationError(RuntimeError):
    """Blow-up, NaN, or stability-guard violation; aborts the run."""


DEFAULT_CFL = 0.5


def check_cfl(n: int, umax: float, h: float, c_cfl: float, what: str) -> None:
    if umax > 0 and h > c_cfl / (n * umax):
        raise SimulationError(
            f"{what}: step h={h:g} exceeds CFL bound {c_cfl / (n * umax):g} "
            f"(n={n}, max|u|={umax:g}, C_cfl={c_cfl})"
        )


@dataclass
class FlowState:
    """Vorticity plus cached divergence-free velocity at time t."""

    w: SpectralField
    t: float
    u: VectorField

    @property
    def grid(self) -> WaveGrid:
        return self.w.grid


def make_flow_state(w: SpectralField, t: float = 0.0) -> FlowState:
    return FlowState(w=w, t=t, u=biot_savart(w))


def velocity_max(u: VectorField) -> float:
    u1, u2 = to_physical(u.comp1), to_physical(u.comp2)
    return float(np.sqrt(u1 * u1 + u2 * u2).max())


def _vorticity_noise_std(model: NoiseModel, h: float) -> np.ndarray:
    """Per-mode std of the exact OU forcing integral in vorticity form."""
    g = model.grid
    drive = np.zeros((g.n, g.n))
    np.power(g.kabs, 2.0 - model.alpha, out=drive, where=g.active)
    drive *= model.sigma**2
    return np.sqrt(drive * ou_variance_factor(g.ksq, h))


def sns_step(
    state: FlowState,
    model: NoiseModel,
    h: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    c_cfl: float = DEFAULT_CFL,
) -> FlowState:
    """One integrating-factor Euler step of the vorticity equation.

    `noise`, when given, must be a unit-variance Hermitian complex array
    (see noise.standard_increments); it is scaled internally.  Passing the
    same array to an X-process step couples the two trajectories to one
    realization of the forcing.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    g = state.grid
    u1, u2 = to_physical(state.u.comp1), to_physical(state.u.comp2)
    umax = float(np.sqrt(u1 * u1 + u2 * u2).max())
    check_cfl(g.n, umax, h, c_cfl, "sns_step")

    gw = grad(state.w)
    nonlin = from_physical(g, u1 * to_physical(gw.comp1) + u2 * to_physical(gw.comp2))

    decay = np.exp(-g.ksq * h)
    new = decay * (state.w.coeff - h * nonlin.coeff)
    if model.sigma > 0:
        if noise is None:
            noise = standard_increments(g, rng)
        new = new + _vorticity_noise_std(model, h) * noise
    if not np.isfinite(new.view(np.float64)).all():
        raise SimulationError(
            f"sns_step: non-finite vorticity at t={state.t + h:g} (max|u| was {umax:g})"
        )
    w = SpectralField(g, new)
    return FlowState(w=w, t=state.t + h, u=biot_savart(w))


def heat_propagate(f, t: float, nu: float):
    """Multiply each mode by e^(-nu |k|^2 t); accepts scalar or vector fields."""
    if t < 0:
        raise ValueError("heat propagation requires t >= 0")
    if isinstance(f, VectorField):
        return VectorField(
            heat_propagate(f.comp1, t, nu), heat_propagate(f.comp2, t, nu), f.divergence_free
        )
    fac = np.exp(-nu * f.grid.ksq * t)
    return SpectralField(f.grid, fac * f.coeff)


@dataclass
class XProcess:
    """Exact per-mode OU solution of dX = Delta X dt + P xi, X(0) = u0."""

    state: VectorField
    model: NoiseModel
    h: float
    t: float = 0.0

    def step(self, rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> VectorField:
        g = self.state.grid
        m = self.model
        decay = np.exp(-g.ksq * self.h)
        c1 = decay * self.state.comp1.coeff
        c2 = decay * self.state.comp2.coeff
        if m.sigma > 0:
            if noise is None:
                noise = standard_increments(g, rng)
            amp = np.zeros((g.n, g.n))
            np.power(g.kabs, -(1.0 + m.alpha / 2.0), out=amp, where=g.active)
            eta = m.sigma * np.sqrt(ou_variance_factor(g.ksq, self.h)) * amp * noise
            c1 = c1 + 1j * g.k2 * eta
            c2 = c2 - 1j * g.k1 * eta
        self.state = VectorField(SpectralField(g, c1), SpectralField(g, c2), divergence_free=True)
        self.t += self.h
        return self.state


def make_X_process(u0: VectorField, model: NoiseModel, h: float) -> XProcess:
    return XProcess(state=u0.copy(), model=model, h=h)


def _traj_at(traj, i, step):
    if callable(traj):
        return traj(i * step)
    return traj[i]


def _sym_tensor_divergence(w1: VectorField, w2: VectorField) -> VectorField:
    """div(w1 (x)_s w2) with A_ij = (w1_i w2_j + w2_i w1_j)/2, (div A)_j = d_i A_ij."""
    g = w1.grid
    a11 = dealiased_product(w1.comp1, w2.comp1)
    a22 = dealiased_product(w1.comp2, w2.comp2)
    a12 = SpectralField(
        g,
        0.5
        * (
            dealiased_product(w1.comp1, w2.comp2).coeff
            + dealiased_product(w1.comp2, w2.comp1).coeff
        ),
    )
    d1 = SpectralField(g, 1j * (g.k1 * a11.coeff + g.k2 * a12.coeff))
    d2 = SpectralField(g, 1j * (g.k1 * a12.coeff + g.k2 * a22.coeff))
    return VectorField(d1, d2)


def psi_bilinear(w1_traj, w2_traj, t: float, quadrature_step: float) -> VectorField:
    """Trapezoidal quadrature of -int_0^t P_(t-s) P div(w1 (x)_s w2) ds.

    Trajectories are either callables s -> VectorField or sequences sampled
    at the uniform quadrature step; the result is Leray-projected.
    """
    m = int(round(t / quadrature_step))
    if m < 1 or abs(m * quadrature_step - t) > 1e-9 * max(t, 1.0):
        raise ValueError("quadrature step does not evenly cover [0, t]")
    for traj in (w1_traj, w2_traj):
        if not callable(traj) and len(traj) < m + 1:
            raise ValueError("trajectory does not cover [0, t] at the requested step")

    def integrand(i):
        w1 = _traj_at(w1_traj, i, quadrature_step)
        w2 = _traj_at(w2_traj, i, quadrature_step)
        d = leray_project(_sym_tensor_divergence(w1, w2))
        return VectorField(
            SpectralField(w1.grid, -d.comp1.coeff), SpectralField(w1.grid, -d.comp2.coeff), True
        )

    g_prev = integrand(0)
    acc = zero_vector(g_prev.grid)
    half = 0.5 * quadrature_step
    for i in range(1, m + 1):
        acc = VectorField(
            SpectralField(acc.grid, acc.comp1.coeff + half * g_prev.comp1.coeff),
            SpectralField(acc.grid, acc.comp2.coeff + half * g_prev.comp2.coeff),
            True,
        )
        acc = heat_propagate(acc, quadrature_step, 1.0)
        g_prev = integrand(i)
        acc = VectorField(
            SpectralField(acc.grid, acc.comp1.coeff + half * g_prev.comp1.coeff),
            SpectralField(acc.grid, acc.comp2.coeff + half * g_prev.comp2.coeff),
            True,
        )
    return acc


def lyapunov_functional(
    u: VectorField,
    r: float = 1.0,
    beta: float | None = None,
    c_star: float = 0.01,
    alpha: float = 12.0,
) -> float:
    """(1 + ||u||_{H^beta}^2)^r exp(c_star ||u||_{H^1}^2), beta default (alpha-3)/2.

    Evaluated in log space; overflow returns inf.
    """
    if r < 1:
        raise ValueError("polynomial rate r must be >= 1")
    if beta is None:
        beta = (alpha - 3.0) / 2.0
    log_v = r * np.log1p(vector_sobolev_norm(u, beta) ** 2) + c_star * vector_sobolev_norm(u, 1.0) ** 2
    return float(np.exp(log_v)) if log_v < 700 else float("inf")


def flow_energy(u: VectorField) -> float:
    return vector_sobolev_norm(u, 0.0) ** 2


def flow_enstrophy(w: SpectralField) -> float:
    return sobolev_norm(w, 0.0) ** 2
