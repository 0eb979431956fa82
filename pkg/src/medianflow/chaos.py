"""Exact first-Wiener-chaos variances via the Ito isometry, their Monte Carlo
cross-checks over simulated noise paths, and the supporting combinatorial and
norm-equivalence checks.

The Gaussian term Phi[X~, Y]_t has Fourier coefficient at frequency l equal to
a stochastic integral int f_t^l(s, k) dzeta(s, k); for both operator kinds

    f_t^l(s,k) = C(l,k) rho0_hat(l-k) |k|^(-alpha/2-1)
                 * int_s^t e^(-kappa|l|^2 (t-r)) e^(-kappa|l-k|^2 r) e^(-|k|^2 (r-s)) dr

with |C(l,k)|^2 = <l, k_perp>^2 for advection and <l, k_perp>^2
(1 - |k|^2/|l-k|^2)^2 for linearised SNS.  The isometry gives the variance as
a k-sum of |f|^2 time integrals: the inner r-integral is closed form and the
outer s-integral is adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .spectral import SpectralField, sobolev_norm

# lattice points with 0 < |l| <= 1 resp. sqrt(2)
ELL_RADIUS_1 = ((1, 0), (-1, 0), (0, 1), (0, -1))
ELL_RADIUS_SQRT2 = ELL_RADIUS_1 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass
class ChaosSpec:
    """Inputs of a first-chaos variance evaluation."""

    rho0: SpectralField
    kappa: float
    t: float
    op_kind: str            # "adv" (project |l| <= 1) or "lns" (|l| <= sqrt 2)
    alpha: float
    k_max: int | None = None      # truncation of the noise-mode sum; default grid cutoff
    M: int | None = None          # frequency level for the lower-bound normalization
    sigma: float = 1.0
    ell_set: tuple = field(default=None)

    def __post_init__(self):
        if self.t <= 0:
            raise ValueError("chaos horizon t must be positive")
        cutoff = self.rho0.grid.kmax_box
        if self.k_max is None:
            self.k_max = cutoff
        if self.k_max <= 0 or self.k_max > cutoff:
            raise ValueError(f"k_max must lie in [1, grid cutoff {cutoff}], got {self.k_max}")
        if self.ell_set is None:
            self.ell_set = ELL_RADIUS_1 if self.op_kind == "adv" else ELL_RADIUS_SQRT2


def geometric_sum(k) -> int:
    """sum over 0 < |l| <= sqrt2 of Q_l(k), Q_l(k) = (|l|^2 - 2<k,l>)^2 <k_perp,l>^2.

    Exact integer arithmetic; Q is the numerator of the lns weight, and the
    lattice-ball sum is bounded below by c |k|^4.
    """
    k1, k2 = int(k[0]), int(k[1])
    if k1 == 0 and k2 == 0:
        raise ValueError("geometric_sum is undefined at k = 0")
    total = 0
    for l1, l2 in ELL_RADIUS_SQRT2:
        lsq = l1 * l1 + l2 * l2
        a = lsq - 2 * (k1 * l1 + k2 * l2)
        b = k2 * l1 - k1 * l2  # <k_perp, l>
        total += a * a * b * b
    return total


def _phi1(z: float) -> float:
    """(e^z - 1)/z, stable near 0."""
    if abs(z) < 1e-8:
        return 1.0 + z / 2.0
    return math.expm1(z) / z


def inner_time_integral(s: float, t: float, a: float, b: float, c: float) -> float:
    """int_s^t e^(-a(t-r)) e^(-b r) e^(-c(r-s)) dr in closed form."""
    d = a - b - c
    return math.exp(-a * (t - s)) * math.exp(-b * s) * (t - s) * _phi1(d * (t - s))


def double_time_integral(t: float, a: float, b: float, c: float, epsrel: float = 1e-10) -> float:
    """int_0^t (inner_time_integral(s))^2 ds by adaptive quadrature."""
    val, _ = quad(lambda s: inner_time_integral(s, t, a, b, c) ** 2, 0.0, t,
                  epsabs=0.0, epsrel=epsrel, limit=400)
    return val


def _chaos_weight(op_kind: str, l1, l2, k1, k2, jsq) -> float:
    ip = l1 * k2 - l2 * k1  # <l, k_perp>
    if op_kind == "adv":
        return float(ip * ip)
    ksq = k1 * k1 + k2 * k2
    fac = 1.0 - ksq / jsq
    return float(ip * ip * fac * fac)


def _contributions(spec: ChaosSpec):
    """Yield (l, k, weight, |rho0(l-k)|^2, a, b, c) over the truncated mode set."""
    g = spec.rho0.grid
    n = g.n
    supp = np.argwhere((np.abs(spec.rho0.coeff) > 0) & g.active)
    kmax_sq = spec.k_max * spec.k_max
    for l1, l2 in spec.ell_set:
        for i1, i2 in supp:
            j1, j2 = int(g.k1[i1, i2]), int(g.k2[i1, i2])  # scalar mode l - k
            k1, k2 = l1 - j1, l2 - j2
            ksq = k1 * k1 + k2 * k2
            if ksq == 0 or ksq > kmax_sq:
                continue
            if abs(k1) > g.kmax_box or abs(k2) > g.kmax_box:
                continue
            jsq = j1 * j1 + j2 * j2
            w = _chaos_weight(spec.op_kind, l1, l2, k1, k2, jsq)
            if w == 0.0:
                continue
            rho_sq = abs(spec.rho0.coeff[i1 % n, i2 % n]) ** 2
            a = spec.kappa * (l1 * l1 + l2 * l2)
            b = spec.kappa * jsq
            yield (l1, l2), (k1, k2), w, rho_sq, a, b, float(ksq)


def first_chaos_variance(spec: ChaosSpec):
    """Exact E||L_r Phi[X~, Y]_t||^2 per projection frequency l, and the total.

    Returns (per_ell: dict[(l1,l2) -> variance], total).
    """
    per_ell = {ell: 0.0 for ell in spec.ell_set}
    cache: dict = {}
    for ell, _k, w, rho_sq, a, b, c in _contributions(spec):
        key = (a, b, c)
        tint = cache.get(key)
        if tint is None:
            tint = cache[key] = double_time_integral(spec.t, a, b, c)
        per_ell[ell] += spec.sigma**2 * w * rho_sq * c ** (-(spec.alpha + 2) / 2.0) * tint
    return per_ell, float(sum(per_ell.values()))


def first_chaos_variance_adv(spec: ChaosSpec):
    if spec.op_kind != "adv":
        raise ValueError("spec.op_kind must be 'adv'")
    return first_chaos_variance(spec)


def first_chaos_variance_lns(spec: ChaosSpec):
    if spec.op_kind != "lns":
        raise ValueError("spec.op_kind must be 'lns'")
    return first_chaos_variance(spec)


def lower_bound_ratio(spec: ChaosSpec) -> float:
    """variance_total / (kappa^-1 M^-6 ||rho0||^2_{H^-s}), s = alpha/2 (+1 for lns).

    The Gaussian-term lower bound states this ratio is bounded below by a
    positive constant for t = t_star(kappa, M), M >= the spectral quantile.
    """
    from .spectral import spectral_quantile

    m = spec.M if spec.M is not None else spectral_quantile(spec.rho0, 1.0)
    s = spec.alpha / 2.0 + (1.0 if spec.op_kind == "lns" else 0.0)
    denom = spec.kappa**-1.0 * float(m) ** -6.0 * sobolev_norm(spec.rho0, -s) ** 2
    _, total = first_chaos_variance(spec)
    return total / denom


# ------------------------------------------------------------------ Monte Carlo

def _mode_table(spec: ChaosSpec):
    """Closed set of forcing modes needed by the projected Gaussian term."""
    g = spec.rho0.grid
    supp = {
        (int(g.k1[i, j]), int(g.k2[i, j]))
        for i, j in np.argwhere((np.abs(spec.rho0.coeff) > 0) & g.active)
    }
    modes = set()
    kmax_sq = spec.k_max * spec.k_max
    for l1, l2 in spec.ell_set:
        for j1, j2 in supp:
            k = (l1 - j1, l2 - j2)
            ksq = k[0] * k[0] + k[1] * k[1]
            if ksq == 0 or ksq > kmax_sq:
                continue
            if abs(k[0]) > g.kmax_box or abs(k[1]) > g.kmax_box:
                continue
            modes.add(k)
            modes.add((-k[0], -k[1]))
    return sorted(modes)


class SparseGaussianPaths:
    """Batched exact OU paths of the forcing modes that feed the projection.

    Mathematically identical to evolving the full X~ field and forming
    Phi[X~, Y] with the trapezoidal quadrature, restricted to the output
    frequencies in spec.ell_set; only those convolution lines are evaluated.
    """

    def __init__(self, spec: ChaosSpec, n_paths: int, quad_step: float):
        self.spec = spec
        self.n_paths = n_paths
        self.h = quad_step
        self.modes = _mode_table(spec)
        self.index = {k: i for i, k in enumerate(self.modes)}
        self.reps = [k for k in self.modes if (k[0], k[1]) > (-k[0], -k[1])]
        ksq = np.array([k[0] ** 2 + k[1] ** 2 for k in self.modes], dtype=float)
        self.ou_decay = np.exp(-ksq * quad_step)
        from .noise import ou_variance_factor

        self.ou_std = spec.sigma * np.sqrt(ou_variance_factor(ksq, quad_step))
        g = spec.rho0.grid
        n = g.n
        self.lines = []
        for ell in spec.ell_set:
            idx, coeffs, ydecay = [], [], []
            for lpair, k, w, _rho_sq, _a, b, c in _contributions(spec):
                if lpair != ell:
                    continue
                j = (ell[0] - k[0], ell[1] - k[1])
                rho = spec.rho0.coeff[j[0] % n, j[1] % n]
                ip = ell[0] * k[1] - ell[1] * k[0]
                fac = 1.0
                if spec.op_kind == "lns":
                    fac = 1.0 - (k[0] ** 2 + k[1] ** 2) / (j[0] ** 2 + j[1] ** 2)
                idx.append(self.index[k])
                # +<l,k_perp> f |k|^(-1-alpha/2) rho0(l-k): the Phi integrand sign included
                coeffs.append(ip * fac * c ** (-(1.0 + spec.alpha / 2.0) / 2.0) * rho)
                ydecay.append(math.exp(-spec.kappa * (j[0] ** 2 + j[1] ** 2) * quad_step))
            self.lines.append(
                (
                    np.array(idx, dtype=int),
                    np.array(coeffs, dtype=complex),
                    np.array(ydecay, dtype=float),
                    math.exp(-spec.kappa * (ell[0] ** 2 + ell[1] ** 2) * quad_step),
                )
            )

    def draw_unit(self, rng) -> np.ndarray:
        """Hermitian-paired unit complex Gaussians for all tracked modes."""
        z = (
            rng.standard_normal((self.n_paths, len(self.reps)))
            + 1j * rng.standard_normal((self.n_paths, len(self.reps)))
        ) / math.sqrt(2.0)
        w = np.empty((self.n_paths, len(self.modes)), dtype=complex)
        for r, k in enumerate(self.reps):
            w[:, self.index[k]] = z[:, r]
            w[:, self.index[(-k[0], -k[1])]] = np.conj(z[:, r])
        return w

    def run(self, rng, noise_hook=None, return_per_ell: bool = False):
        """Simulate and return ||L Phi[X~,Y]_t||^2 per path.

        noise_hook(step_index) may supply the per-mode unit noises (used by
        the full-field correspondence test); by default they are drawn here.
        With return_per_ell the per-frequency contributions come back too.
        """
        spec = self.spec
        m = int(round(spec.t / self.h))
        if m < 1 or abs(m * self.h - spec.t) > 1e-9 * max(spec.t, 1.0):
            raise ValueError("quadrature step does not evenly cover [0, t]")
        g_state = np.zeros((self.n_paths, len(self.modes)), dtype=complex)
        yfac = [np.ones(len(idx)) for idx, _c, _d, _e in self.lines]
        acc = [np.zeros(self.n_paths, dtype=complex) for _ in self.lines]
        half = 0.5 * self.h

        def integrands():
            return [
                g_state[:, idx] @ (coeffs * yf) if len(idx) else np.zeros(self.n_paths, complex)
                for (idx, coeffs, _yd, _ed), yf in zip(self.lines, yfac)
            ]

        g_prev = integrands()
        for step in range(m):
            w = noise_hook(step) if noise_hook is not None else self.draw_unit(rng)
            g_state = self.ou_decay * g_state + self.ou_std * w
            for li, (idx, _c, ydecay, _ed) in enumerate(self.lines):
                yfac[li] = yfac[li] * ydecay
            g_cur = integrands()
            for li, (_i, _c, _yd, edecay) in enumerate(self.lines):
                acc[li] = edecay * (acc[li] + half * g_prev[li]) + half * g_cur[li]
            g_prev = g_cur
        out = np.zeros(self.n_paths)
        per_ell = {}
        for ell, a in zip(self.spec.ell_set, acc):
            contrib = np.abs(a) ** 2
            out += contrib
            per_ell[ell] = contrib
        if return_per_ell:
            return out, per_ell
        return out


def mc_first_chaos(spec: ChaosSpec, n_paths: int, quad_step: float, rng,
                   noise_hook=None, per_ell: bool = False):
    """Monte Carlo estimate of E||L Phi[X~,Y]_t||^2.

    Returns (mean, stderr, per-path values); with per_ell=True the third slot
    is instead a dict ell -> (mean, stderr).
    """
    sim = SparseGaussianPaths(spec, n_paths, quad_step)
    if not per_ell:
        vals = sim.run(rng, noise_hook=noise_hook)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), vals
    vals, per = sim.run(rng, noise_hook=noise_hook, return_per_ell=True)
    stats = {
        ell: (float(v.mean()), float(v.std(ddof=1) / math.sqrt(n_paths)))
        for ell, v in per.items()
    }
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), stats


def mc_first_chaos_mean_coefficients(spec: ChaosSpec, n_paths: int, quad_step: float, rng):
    """MC mean of the projected coefficients themselves (centering check)."""
    sim = SparseGaussianPaths(spec, n_paths, quad_step)
    m = int(round(spec.t / quad_step))
    g_state = np.zeros((n_paths, len(sim.modes)), dtype=complex)
    yfac = [np.ones(len(idx)) for idx, _c, _d, _e in sim.lines]
    acc = [np.zeros(n_paths, dtype=complex) for _ in sim.lines]
    half = 0.5 * quad_step
    g_prev = [np.zeros(n_paths, complex) for _ in sim.lines]
    for _ in range(m):
        w = sim.draw_unit(rng)
        g_state = sim.ou_decay * g_state + sim.ou_std * w
        g_cur = []
        for li, (idx, coeffs, ydecay, edecay) in enumerate(sim.lines):
            yfac[li] = yfac[li] * ydecay
            cur = g_state[:, idx] @ (coeffs * yfac[li]) if len(idx) else np.zeros(n_paths, complex)
            acc[li] = edecay * (acc[li] + half * g_prev[li]) + half * cur
            g_cur.append(cur)
        g_prev = g_cur
    means = np.array([a.mean() for a in acc])
    stderrs = np.array([a.std(ddof=1) / math.sqrt(n_paths) for a in acc])
    return means, stderrs


def simulate_ito_integral(f_table: np.ndarray, h: float, n_paths: int, rng,
                          sigma: float = 1.0):
    """Simulate int f dzeta for a deterministic table f[step, mode] on a set of
    Hermitian-paired modes given as conjugate columns (mode 2r, 2r+1 = +-k).

    Left-point evaluation; returns per-path complex integrals.  For piecewise
    constant integrands E|I|^2 = sigma^2 sum |f|^2 h exactly.
    """
    n_steps, n_modes = f_table.shape
    if n_modes % 2:
        raise ValueError("columns must come in +-k pairs")
    out = np.zeros(n_paths, dtype=complex)
    for step in range(n_steps):
        z = (
            rng.standard_normal((n_paths, n_modes // 2))
            + 1j * rng.standard_normal((n_paths, n_modes // 2))
        ) * (sigma * math.sqrt(h / 2.0))
        dz = np.empty((n_paths, n_modes), dtype=complex)
        dz[:, 0::2] = z
        dz[:, 1::2] = np.conj(z)
        out += dz @ f_table[step]
    return out


# ------------------------------------------------------------------ norm equivalences

def equivalence_test_field(grid, s: float, rng, jitter: float = 0.25) -> SpectralField:
    """Random-phase field with |coeff| ~ |k|^s and mild magnitude jitter.

    With s matched to the norm weight (s = alpha for the H^-alpha checks) the
    weighted energy spreads over the whole active set, so the equivalence
    ratio reflects the operator rather than the extreme-value statistics of a
    few low modes (which a white field exposes).
    """
    from .spectral import hermitianize

    mag = np.zeros((grid.n, grid.n))
    np.power(grid.kabs, s, out=mag, where=grid.active)
    u = rng.uniform(1 - jitter, 1 + jitter, size=(grid.n, grid.n))
    ph = rng.uniform(0, 2 * np.pi, size=(grid.n, grid.n))
    c = hermitianize(mag * u * np.exp(1j * ph))
    c[~grid.active] = 0.0
    f = SpectralField(grid, c)
    f.coeff /= sobolev_norm(f, 0.0)
    return f


def _shifted_weight_sum(fsq: np.ndarray, weight: np.ndarray, grid, k_index) -> float:
    rolled = np.roll(fsq, shift=k_index, axis=(0, 1))
    return float((weight * rolled).sum())


def norm_equivalence_check(f: SpectralField, alpha: float):
    """Both sides of sum_k |k|^(-2a) ||e_k f||^2_{H^-a} ~ ||f||^2_{H^-a}.

    All sums truncated to the grid's active set.  Returns (lhs, rhs).
    """
    if not alpha > 1:
        raise ValueError("norm equivalence requires alpha > 1")
    g = f.grid
    fsq = np.abs(f.coeff) ** 2
    w = np.zeros((g.n, g.n))
    np.power(g.ksq.astype(float), -alpha, out=w, where=g.active)
    lhs = 0.0
    for i1, i2 in np.argwhere(g.active):
        kw = g.ksq[i1, i2] ** -alpha
        lhs += kw * _shifted_weight_sum(fsq, w, g, (int(g.k1[i1, i2]), int(g.k2[i1, i2])))
    rhs = sobolev_norm(f, -alpha) ** 2
    return lhs, rhs


def lns_norm_equivalence_check(psi: SpectralField, alpha: float):
    """Both sides of sum_k |k|^(-2a) ||R[sigma_k] psi||^2_{H^-(a+1)} ~ ||psi||^2_{H^-(a+1)}.

    R[sigma_k] psi = sigma_k (1 - |k|^2 (-Delta)^{-1}) psi; the modulated-shift
    expansion gives the lns cancellation factor (1 - |k|^2/|l-k|^2) per term.
    """
    if not alpha > 1:
        raise ValueError("norm equivalence requires alpha > 1")
    g = psi.grid
    psq = np.abs(psi.coeff) ** 2
    wl = np.zeros((g.n, g.n))
    np.power(g.ksq.astype(float), -(alpha + 1.0), out=wl, where=g.active)
    jsq = np.where(g.ksq > 0, g.ksq.astype(float), np.inf)
    lhs = 0.0
    for i1, i2 in np.argwhere(g.active):
        k1, k2 = int(g.k1[i1, i2]), int(g.k2[i1, i2])
        ksq = float(g.ksq[i1, i2])
        shifted_jsq = np.roll(jsq, shift=(k1, k2), axis=(0, 1))  # |l-k|^2 at slot l
        fac = (1.0 - ksq / shifted_jsq) ** 2
        rolled = np.roll(psq, shift=(k1, k2), axis=(0, 1))
        lhs += ksq**-alpha * float((wl * fac * rolled).sum())
    rhs = sobolev_norm(psi, -(alpha + 1.0)) ** 2
    return lhs, rhs
