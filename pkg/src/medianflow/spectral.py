"""Spectral core: grid, transforms, operators, norms and quantiles.

Fields are mean-zero real functions on the 2-pi-periodic torus, stored as
full (n, n) arrays of Fourier coefficients in FFT layout.  Normalization is
fixed once, here, and used everywhere else in the package:

    coeff(k) = (1/n^2) * DFT(samples)(k)        (so f(x) = sum_k coeff(k) e^{i k.x})
    ||f||^2  = sum_k |coeff(k)|^2               (equals the mean square of the samples)

Wavenumbers per axis are {-n/2+1, ..., n/2}; the Nyquist slot is labelled
+n/2.  The k = 0 coefficient is identically zero (mean-zero invariant), and
modes outside the dealias box are identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    # floats like 2/3 come in slightly off; snap to a small-denominator rational
    return Fraction(x).limit_denominator(10**6)


def conj_flip(a: np.ndarray) -> np.ndarray:
    """Return the array b with b[k] = a[-k] (indices mod n on both axes)."""
    return np.roll(a[..., ::-1, ::-1], shift=(1, 1), axis=(-2, -1))


@dataclass(frozen=True)
class WaveGrid:
    """Wavenumber bookkeeping for an n x n dealiased spectral grid."""

    n: int
    dealias_fraction: Fraction
    kmax_box: int                  # active set is {k != 0 : |k1|,|k2| <= kmax_box}
    k1: np.ndarray                 # int, shape (n, n)
    k2: np.ndarray
    ksq: np.ndarray                # int, |k|^2
    active: np.ndarray             # bool
    kabs: np.ndarray               # float, |k|

    @property
    def active_count(self) -> int:
        return int(self.active.sum())

    @property
    def cutoff(self) -> float:
        """Largest resolved |k| component (the dealias box bound)."""
        return float(self.kmax_box)

    def zeros(self) -> np.ndarray:
        return np.zeros((self.n, self.n), dtype=np.complex128)


def make_grid(n: int, dealias_fraction=Fraction(2, 3)) -> WaveGrid:
    """Build a WaveGrid.  n must be even and >= 8; 0 < dealias_fraction <= 1."""
    if n < 8 or n % 2 != 0:
        raise ValueError(f"grid size must be even and >= 8, got n={n}")
    frac = _as_fraction(dealias_fraction)
    if not (0 < frac <= 1):
        raise ValueError(f"dealias_fraction must lie in (0, 1], got {frac}")

    ax = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
    ax[ax == -n // 2] = n // 2  # label the Nyquist slot +n/2
    k1, k2 = np.meshgrid(ax, ax, indexing="ij")
    ksq = k1 * k1 + k2 * k2

    kmax_box = math.floor(frac * n / 2)  # exact rational arithmetic
    active = (np.abs(k1) <= kmax_box) & (np.abs(k2) <= kmax_box) & (ksq > 0)
    return WaveGrid(
        n=n,
        dealias_fraction=frac,
        kmax_box=kmax_box,
        k1=k1,
        k2=k2,
        ksq=ksq,
        active=active,
        kabs=np.sqrt(ksq.astype(np.float64)),
    )


@dataclass
class SpectralField:
    """Mean-zero real scalar field stored as Hermitian Fourier coefficients."""

    grid: WaveGrid
    coeff: np.ndarray  # complex128, shape (n, n), zero outside grid.active

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeff.copy())

    def hermitian_defect(self) -> float:
        """Max |coeff(-k) - conj(coeff(k))| over the grid."""
        return float(np.abs(conj_flip(self.coeff) - np.conj(self.coeff)).max())

    def validate(self, tol: float = 1e-12) -> None:
        g = self.grid
        if self.coeff.shape != (g.n, g.n):
            raise ValueError("coefficient array does not match the grid")
        if abs(self.coeff[0, 0]) > tol:
            raise ValueError("field is not mean-zero")
        if np.abs(self.coeff[~g.active]).max(initial=0.0) > tol:
            raise ValueError("field has content outside the active set")
        if self.hermitian_defect() > tol:
            raise ValueError("field is not Hermitian-symmetric (not real-valued)")


@dataclass
class VectorField:
    """Pair of spectral components, optionally flagged divergence-free."""

    comp1: SpectralField
    comp2: SpectralField
    divergence_free: bool = False

    @property
    def grid(self) -> WaveGrid:
        return self.comp1.grid

    def copy(self) -> "VectorField":
        return VectorField(self.comp1.copy(), self.comp2.copy(), self.divergence_free)


def zero_field(grid: WaveGrid) -> SpectralField:
    return SpectralField(grid, grid.zeros())


def zero_vector(grid: WaveGrid, divergence_free: bool = True) -> VectorField:
    return VectorField(zero_field(grid), zero_field(grid), divergence_free)


def field_from_modes(grid: WaveGrid, modes: dict) -> SpectralField:
    """Build a field from {(k1, k2): coefficient}; the conjugate pair is added."""
    c = grid.zeros()
    for (a, b), v in modes.items():
        c[a % grid.n, b % grid.n] += v
        c[(-a) % grid.n, (-b) % grid.n] += np.conj(v)
    c[~grid.active] = 0.0
    return SpectralField(grid, c)


def random_field(grid: WaveGrid, rng: np.random.Generator, spectrum: float = 0.0) -> SpectralField:
    """Random Hermitian field with |coeff| ~ |k|^(-spectrum), unit L2 norm."""
    a = rng.standard_normal((grid.n, grid.n))
    b = rng.standard_normal((grid.n, grid.n))
    c = hermitianize(a + 1j * b)
    c[~grid.active] = 0.0
    if spectrum != 0.0:
        w = np.zeros_like(grid.kabs)
        np.power(grid.kabs, -spectrum, out=w, where=grid.active)
        c *= w
    f = SpectralField(grid, c)
    nrm = sobolev_norm(f, 0.0)
    if nrm > 0:
        f.coeff /= nrm
    return f


def hermitianize(a: np.ndarray) -> np.ndarray:
    """Project onto Hermitian-symmetric arrays (real-valued fields)."""
    return 0.5 * (a + np.conj(conj_flip(a)))


# ---------------------------------------------------------------------------
# transforms and products
# ---------------------------------------------------------------------------

def to_physical(f: SpectralField) -> np.ndarray:
    """Evaluate the field on the n x n collocation grid (real samples)."""
    n = f.grid.n
    return (n * n) * np.fft.ifft2(f.coeff).real


def from_physical(grid: WaveGrid, samples: np.ndarray) -> SpectralField:
    """Transform samples to coefficients; subtracts the mean, dealiases."""
    if samples.shape != (grid.n, grid.n):
        raise ValueError(
            f"physical array has shape {samples.shape}, expected {(grid.n, grid.n)}"
        )
    c = np.fft.fft2(samples) / (grid.n * grid.n)
    c[~grid.active] = 0.0
    return SpectralField(grid, c)


def dealiased_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product in physical space, truncated to the active set.

    With the default 2/3 dealiasing this equals the exact convolution
    sum_{j+k=l} fhat(k) ghat(j) truncated to the active modes.
    """
    if f.grid is not g.grid and (f.grid.n != g.grid.n or f.grid.kmax_box != g.grid.kmax_box):
        raise ValueError("dealiased_product requires fields on the same grid")
    return from_physical(f.grid, to_physical(f) * to_physical(g))


# ---------------------------------------------------------------------------
# differential and projection operators (Fourier multipliers)
# ---------------------------------------------------------------------------

def _safe_inv_ksq(grid: WaveGrid) -> np.ndarray:
    inv = np.zeros((grid.n, grid.n))
    np.divide(1.0, grid.ksq, out=inv, where=grid.ksq > 0)
    return inv


def grad(f: SpectralField) -> VectorField:
    g = f.grid
    return VectorField(
        SpectralField(g, 1j * g.k1 * f.coeff),
        SpectralField(g, 1j * g.k2 * f.coeff),
        divergence_free=False,
    )


def div(v: VectorField) -> SpectralField:
    g = v.grid
    return SpectralField(g, 1j * (g.k1 * v.comp1.coeff + g.k2 * v.comp2.coeff))


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, -f.grid.ksq * f.coeff)


def inv_laplacian(f: SpectralField) -> SpectralField:
    """Delta^{-1}: multiplier -1/|k|^2, so laplacian(inv_laplacian(f)) = f."""
    return SpectralField(f.grid, -_safe_inv_ksq(f.grid) * f.coeff)


def inv_grad(f: SpectralField) -> VectorField:
    """grad (-Delta)^{-1}: multiplier i k / |k|^2.

    Note div(inv_grad(f)) = -f with this convention; the linearised-SNS
    stretching term Delta u . inv_grad(rho) is built on exactly this operator.
    """
    g = f.grid
    inv = _safe_inv_ksq(g)
    return VectorField(
        SpectralField(g, 1j * g.k1 * inv * f.coeff),
        SpectralField(g, 1j * g.k2 * inv * f.coeff),
        divergence_free=False,
    )


def leray_project(v: VectorField) -> VectorField:
    """Orthogonal projection onto divergence-free fields: I - k k^T/|k|^2."""
    g = v.grid
    inv = _safe_inv_ksq(g)
    kdotv = (g.k1 * v.comp1.coeff + g.k2 * v.comp2.coeff) * inv
    return VectorField(
        SpectralField(g, v.comp1.coeff - g.k1 * kdotv),
        SpectralField(g, v.comp2.coeff - g.k2 * kdotv),
        divergence_free=True,
    )


def biot_savart(w: SpectralField) -> VectorField:
    """Velocity from vorticity: u_hat(k) = i k_perp w_hat(k)/|k|^2, k_perp = (k2, -k1)."""
    g = w.grid
    inv = _safe_inv_ksq(g)
    return VectorField(
        SpectralField(g, 1j * g.k2 * inv * w.coeff),
        SpectralField(g, -1j * g.k1 * inv * w.coeff),
        divergence_free=True,
    )


def curl(v: VectorField) -> SpectralField:
    """Scalar curl d1 v2 - d2 v1."""
    g = v.grid
    return SpectralField(g, 1j * (g.k1 * v.comp2.coeff - g.k2 * v.comp1.coeff))


def project_low(f: SpectralField, M: float) -> SpectralField:
    """Keep modes with |k| <= M (Euclidean, boundary inclusive)."""
    if M <= 0:
        raise ValueError("frequency cutoff must be positive")
    return SpectralField(f.grid, np.where(f.grid.ksq <= M * M, f.coeff, 0.0))


def project_high(f: SpectralField, M: float) -> SpectralField:
    """Keep modes with |k| > M."""
    if M <= 0:
        raise ValueError("frequency cutoff must be positive")
    return SpectralField(f.grid, np.where(f.grid.ksq > M * M, f.coeff, 0.0))


# ---------------------------------------------------------------------------
# norms, quantiles, scales
# ---------------------------------------------------------------------------

def sobolev_norm(f: SpectralField, s: float) -> float:
    """Bessel norm ( sum_k |k|^{2s} |coeff(k)|^2 )^(1/2); s = 0 is the L2 norm."""
    e = np.abs(f.coeff[f.grid.active]) ** 2
    if s == 0.0:
        return float(np.sqrt(e.sum()))
    w = f.grid.ksq[f.grid.active].astype(np.float64) ** s
    return float(np.sqrt((w * e).sum()))


def vector_sobolev_norm(v: VectorField, s: float) -> float:
    return math.hypot(sobolev_norm(v.comp1, s), sobolev_norm(v.comp2, s))


def inner(f: SpectralField, g: SpectralField) -> float:
    """L2 inner product (real for real fields)."""
    return float(np.real(np.vdot(g.coeff, f.coeff)))


def paley_block_count(grid: WaveGrid) -> int:
    """Number of resolved dyadic blocks: j = 0 .. floor(log2(dealias * n/2))."""
    return math.floor(math.log2(float(grid.dealias_fraction * grid.n / 2))) + 1


def holder_norm(f: SpectralField, beta: float) -> float:
    """Truncated Besov-Hoelder norm sup_j 2^{j beta} ||block_j f||_inf.

    Sharp dyadic annuli: block j keeps 2^{j-1} < |k| <= 2^j.  The j = -1
    block (|k| < 1) is empty for mean-zero fields.  Blocks beyond the grid
    cutoff are not resolved and are omitted (no extrapolation).
    """
    g = f.grid
    out = 0.0
    for j in range(paley_block_count(g)):
        lo, hi = 4.0 ** (j - 1), 4.0**j
        mask = (g.ksq > lo) & (g.ksq <= hi)
        if not mask.any():
            continue
        block = SpectralField(g, np.where(mask, f.coeff, 0.0))
        out = max(out, 2.0 ** (j * beta) * float(np.abs(to_physical(block)).max()))
    return out


def shell_energies(f: SpectralField) -> np.ndarray:
    """Energy binned by integer shells: bin m collects modes with m-1 < |k| <= m.

    Entry [m] is the energy of modes with ceil(|k|) == m; entry [0] is unused.
    """
    g = f.grid
    e = np.abs(f.coeff) ** 2
    return np.bincount(shell_index(g).ravel(), weights=e.ravel())


def shell_index(grid: WaveGrid) -> np.ndarray:
    """ceil(|k|) computed in exact integer arithmetic, 0 for the mean mode."""
    q = grid.ksq.ravel()
    r = np.floor(np.sqrt(q.astype(np.float64))).astype(np.int64)
    # fix rare fp misrounding, then ceil
    r = np.where((r + 1) * (r + 1) <= q, r + 1, r)
    r = np.where(r * r > q, r - 1, r)
    out = np.where(r * r == q, r, r + 1)
    return out.reshape(grid.ksq.shape)


def spectral_quantile(f: SpectralField, beta: float) -> int:
    """Smallest positive integer M with ||H_M f|| <= beta ||L_M f||.

    beta = 1 is the spectral median; scale-invariant in f.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    shells = shell_energies(f)
    total = shells.sum()
    if total <= 0.0:
        raise ValueError("spectral quantile of the zero field is undefined")
    low = np.cumsum(shells)
    high = total - low
    ok = np.nonzero(high <= beta * beta * low)[0]
    m = int(ok[0]) if ok.size else len(shells) - 1
    return max(m, 1)


def filament_scale(f: SpectralField) -> float:
    """Filamentation length ||f|| / ||grad f||."""
    n0 = sobolev_norm(f, 0.0)
    if n0 == 0.0:
        raise ValueError("filament scale of the zero field is undefined")
    return n0 / sobolev_norm(f, 1.0)
