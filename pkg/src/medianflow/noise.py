"""Stochastic forcing for the 2D stochastic Navier-Stokes driver.

The noise is white in time with per-mode spatial amplitude |k|^(-alpha/2) on
the velocity (Leray-projected) side; increments are generated from physical
white noise so that the Hermitian pairing and per-mode independence are exact
by construction.  All draws happen in one fixed canonical order (the physical
sample array), which makes seeded streams reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import SpectralField, VectorField, WaveGrid


@dataclass
class NoiseModel:
    """Spectral exponent alpha (> 10), amplitude sigma (> 0), and a seed."""

    alpha: float
    sigma: float
    grid: WaveGrid
    rng_seed: int = 0

    def __post_init__(self):
        if not self.alpha > 10:
            raise ValueError(f"noise exponent alpha must exceed 10, got {self.alpha}")
        if not self.sigma >= 0:
            raise ValueError(f"noise amplitude sigma must be nonnegative, got {self.sigma}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def standard_increments(grid: WaveGrid, rng: np.random.Generator) -> np.ndarray:
    """Hermitian complex Gaussian array with E|W(k)|^2 = 1 per active mode.

    Realized as the Fourier transform of physical white noise; conjugate
    pairs are exactly correlated (W(-k) = conj W(k)) and self-paired slots
    come out real with the correct total variance.
    """
    g = rng.standard_normal((grid.n, grid.n))
    w = np.fft.fft2(g) / grid.n
    w[~grid.active] = 0.0
    return w


def sample_zeta_increments(model: NoiseModel, h: float, rng: np.random.Generator) -> np.ndarray:
    """Brownian increments dzeta^k with E|dzeta^k|^2 = sigma^2 h per active mode."""
    if h <= 0:
        raise ValueError("increment length h must be positive")
    return (model.sigma * np.sqrt(h)) * standard_increments(model.grid, rng)


def _velocity_amplitude(model: NoiseModel) -> np.ndarray:
    g = model.grid
    amp = np.zeros((g.n, g.n))
    np.power(g.kabs, -(1.0 + model.alpha / 2.0), out=amp, where=g.active)
    return amp


def forcing_velocity_increment(
    model: NoiseModel, h: float, rng: np.random.Generator, dzeta: np.ndarray | None = None
) -> VectorField:
    """Velocity-space forcing increment with mode coefficient i k_perp |k|^(-1-alpha/2) dzeta^k."""
    g = model.grid
    if dzeta is None:
        if h == 0:
            dzeta = np.zeros((g.n, g.n), dtype=np.complex128)
        else:
            dzeta = sample_zeta_increments(model, h, rng)
    amp = _velocity_amplitude(model) * dzeta
    return VectorField(
        SpectralField(g, 1j * g.k2 * amp),
        SpectralField(g, -1j * g.k1 * amp),
        divergence_free=True,
    )


def vorticity_forcing_increment(
    model: NoiseModel, h: float, rng: np.random.Generator, dzeta: np.ndarray | None = None
) -> SpectralField:
    """Curl of the velocity forcing: mode coefficient |k|^(1-alpha/2) dzeta^k."""
    g = model.grid
    if dzeta is None:
        if h == 0:
            return SpectralField(g, g.zeros())
        dzeta = sample_zeta_increments(model, h, rng)
    amp = np.zeros((g.n, g.n))
    np.power(g.kabs, 1.0 - model.alpha / 2.0, out=amp, where=g.active)
    return SpectralField(g, amp * dzeta)


def ou_variance_factor(decay, h):
    """Variance of int_0^h e^(-decay (h-s)) dW_s per unit drive: (1-e^(-2 decay h))/(2 decay).

    The decay -> 0 limit h is taken exactly.
    """
    decay = np.asarray(decay, dtype=np.float64)
    out = np.full(decay.shape, float(h))
    np.divide(-np.expm1(-2.0 * decay * h), 2.0 * decay, out=out, where=decay > 0)
    return out if out.shape else float(out)


def ou_update(coeff, decay, drive_var, h, rng=None, noise=None):
    """One exact Ornstein-Uhlenbeck step e^(-decay h) coeff + eta.

    eta is complex Gaussian with E|eta|^2 = drive_var (1-e^(-2 decay h))/(2 decay).
    If `noise` (unit-variance complex Gaussian) is supplied it is scaled and
    used instead of drawing from `rng`; Hermitian pairing across +-k is then
    the caller's responsibility.
    """
    if noise is None:
        shape = np.shape(coeff)
        noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    std = np.sqrt(drive_var * ou_variance_factor(decay, h))
    return np.exp(-np.asarray(decay) * h) * coeff + std * noise


def coarsen_standard_noise(w1, w2, decay, h_fine):
    """Combine two consecutive fine-step unit noises into the coarse-step unit noise.

    The exact OU convolution over [t, t+2h] splits as e^(-decay h) eta_1 + eta_2;
    dividing by the coarse standard deviation returns a unit-variance array, so
    seed-coupled refinement studies can reuse one fine noise stream.
    """
    vf = ou_variance_factor(decay, h_fine)
    vc = ou_variance_factor(decay, 2.0 * h_fine)
    return (np.exp(-np.asarray(decay) * h_fine) * np.sqrt(vf) * w1 + np.sqrt(vf) * w2) / np.sqrt(vc)
