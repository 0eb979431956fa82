"""Release-gate verification battery: runs the module invariants at pinned
seeds and reports one margin per check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chaos import (
    ChaosSpec,
    equivalence_test_field,
    first_chaos_variance,
    geometric_sum,
    lns_norm_equivalence_check,
    mc_first_chaos,
    norm_equivalence_check,
    simulate_ito_integral,
)
from .diagnostics import (
    FKAccumulator,
    accumulate_fk,
    annulus_field,
    estimate_lambda,
    finish_fk,
    ratio_drift_diagnostic,
    single_mode_field,
    t_star,
)
from .flow import heat_propagate, make_flow_state, sns_step
from .noise import NoiseModel
from .scalar import apply_L, apply_L_direct, make_scalar_state, scalar_step
from .spectral import (
    SpectralField,
    VectorField,
    biot_savart,
    curl,
    dealiased_product,
    div,
    inv_grad,
    leray_project,
    make_grid,
    random_field,
    sobolev_norm,
    spectral_quantile,
    to_physical,
    zero_vector,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = f"  ({self.note})" if self.note else ""
        return f"[{status}] {self.name}: value={self.value:.3e} threshold={self.threshold:.3e}{note}"


def _brute_convolution_coeffs(f, g):
    grid = f.grid
    n, kb = grid.n, grid.kmax_box
    out = grid.zeros()
    for l1 in range(-kb, kb + 1):
        for l2 in range(-kb, kb + 1):
            if l1 == 0 and l2 == 0:
                continue
            acc = 0.0 + 0.0j
            for k1 in range(-kb, kb + 1):
                j1 = l1 - k1
                if abs(j1) > kb:
                    continue
                for k2 in range(-kb, kb + 1):
                    j2 = l2 - k2
                    if abs(j2) > kb:
                        continue
                    if (k1 == 0 and k2 == 0) or (j1 == 0 and j2 == 0):
                        continue
                    acc += f.coeff[k1 % n, k2 % n] * g.coeff[j1 % n, j2 % n]
            out[l1 % n, l2 % n] = acc
    return out


def run_verification(fast: bool = True):
    """Execute the battery; returns (all_passed, [CheckResult])."""
    checks = []
    rng = np.random.default_rng(20250809)
    grid = make_grid(32)
    g16 = make_grid(16)

    # --- operator identities
    w = random_field(grid, rng)
    u = biot_savart(w)
    err = float(np.abs(div(u).coeff).max())
    checks.append(CheckResult("leray/biot_savart divergence-free", err <= 1e-12, err, 1e-12))
    err = float(np.abs(curl(biot_savart(w)).coeff - w.coeff).max())
    checks.append(CheckResult("curl o biot_savart = id", err <= 1e-12, err, 1e-12))
    f = random_field(grid, rng)
    err = float(np.abs(div(inv_grad(f)).coeff + f.coeff).max())
    checks.append(CheckResult("div o inv_grad = -id (grad (-Delta)^-1)", err <= 1e-12, err, 1e-12))
    v = VectorField(random_field(grid, rng), random_field(grid, rng))
    pv = leray_project(v)
    err = float(np.abs(leray_project(pv).comp1.coeff - pv.comp1.coeff).max())
    checks.append(CheckResult("leray idempotent", err <= 1e-12, err, 1e-12))

    # --- dealiased product vs brute convolution (n = 16)
    fa, fb = random_field(g16, rng), random_field(g16, rng)
    p = dealiased_product(fa, fb)
    q = _brute_convolution_coeffs(fa, fb)
    scale = max(1.0, float(np.abs(q).max()))
    err = float(np.abs(p.coeff - q).max()) / scale
    checks.append(CheckResult("dealiased product vs brute convolution", err <= 1e-10, err, 1e-10))

    # --- lns operator equivalence
    worst = 0.0
    for _ in range(5 if fast else 100):
        wv = random_field(g16, rng, spectrum=1.0)
        rho = random_field(g16, rng)
        a = apply_L(biot_savart(wv), rho, "lns")
        b = apply_L_direct(wv, rho)
        worst = max(worst, float(np.abs(a.coeff - b.coeff).max()) / max(1.0, float(np.abs(b.coeff).max())))
    checks.append(CheckResult("apply_L lns vs direct kernel", worst <= 1e-10, worst, 1e-10))

    # --- noise law (z-scores within 3)
    model = NoiseModel(alpha=12.0, sigma=1.0, grid=g16, rng_seed=7)
    nrng = model.make_rng()
    n_samp = 10_000
    h = 0.02
    gg = nrng.standard_normal((n_samp, 16, 16))
    zz = np.fft.fft2(gg, axes=(-2, -1)) / 16 * (1.0 * math.sqrt(h))
    k = (2, 1)
    target = h * (k[0] ** 2 + k[1] ** 2) ** -6.0
    est = (np.abs(zz[:, k[0], k[1]] * (k[0] ** 2 + k[1] ** 2) ** -3.0) ** 2).mean()
    z = abs(est - target) / (target / math.sqrt(n_samp))
    checks.append(CheckResult("noise mode variance sigma^2 h |k|^-alpha", z <= 3.0, z, 3.0, "z-score"))
    cross = (zz[:, 1, 0] * np.conj(zz[:, 0, 1])).mean()
    zc = abs(cross) / (h / math.sqrt(n_samp))
    checks.append(CheckResult("noise cross-mode covariance ~ 0", zc <= 4.0, zc, 4.0, "z-score"))

    # --- exactly solvable control
    kappa, m = 0.3, 2
    st = make_scalar_state(single_mode_field(g16, m), "adv", kappa)
    u0 = zero_vector(g16)
    acc = FKAccumulator()
    times, amps = [0.0], [st.log_amp]
    for _ in range(200):
        accumulate_fk(acc, st, u0, 1e-3)
        st = scalar_step(st, u0, 1e-3)
        times.append(st.t)
        amps.append(st.log_amp)
    finish_fk(acc, st)
    lam, _ = estimate_lambda(times, amps, t_burn=0.05)
    err = abs(lam + kappa * m * m)
    checks.append(CheckResult("heat control lambda = -kappa m^2", err <= 1e-10, err, 1e-10))
    checks.append(CheckResult("heat control FK residual", abs(acc.residual()) <= 1e-10,
                              abs(acc.residual()), 1e-10))

    # --- geometric lemma
    g34 = geometric_sum((1, 0))
    checks.append(CheckResult("geometric_sum((1,0)) == 34", g34 == 34, float(g34), 34.0))
    kmax = 40 if fast else 100
    worst = math.inf
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            qq = k1 * k1 + k2 * k2
            if qq == 0 or qq > kmax * kmax:
                continue
            worst = min(worst, geometric_sum((k1, k2)) / qq**2)
    checks.append(CheckResult("min geometric_sum(k)/|k|^4 > 0", worst > 0, worst, 0.0,
                              f"empirical c over |k| <= {kmax}"))

    # --- norm equivalence bands
    for name, fn, s in (
        ("norm equivalence band (alpha=2)", norm_equivalence_check, 2.0),
        ("lns norm equivalence band (alpha=2.5)", lns_norm_equivalence_check, 3.5),
    ):
        ratios = []
        for i in range(10 if fast else 100):
            ff = equivalence_test_field(grid, s, np.random.default_rng(1000 + i))
            alpha_chk = 2.0 if fn is norm_equivalence_check else 2.5
            lhs, rhs = fn(ff, alpha_chk)
            ratios.append(lhs / rhs)
        band = max(ratios) / min(ratios)
        checks.append(CheckResult(name, band < 5.0, band, 5.0,
                                  f"ratios in [{min(ratios):.2f}, {max(ratios):.2f}]"))

    # --- Ito isometry
    irng = np.random.default_rng(11)
    base = irng.standard_normal((5, 2)) + 1j * irng.standard_normal((5, 2))
    table = np.empty((5, 4), dtype=complex)
    table[:, 0::2] = base
    table[:, 1::2] = np.conj(base)
    vals = simulate_ito_integral(table, 0.05, 5000, irng)
    target = 0.05 * float((np.abs(table) ** 2).sum())
    est = (np.abs(vals) ** 2).mean()
    z = abs(est - target) / ((np.abs(vals) ** 2).std(ddof=1) / math.sqrt(len(vals)))
    checks.append(CheckResult("Ito isometry (piecewise-constant table)", z <= 3.0, z, 3.0, "z-score"))

    # --- chaos oracle MC vs closed form (small)
    rho0 = annulus_field(g16, 4, np.random.default_rng(7))
    tt = t_star(0.2, 4, 12.0)
    spec = ChaosSpec(rho0=rho0, kappa=0.2, t=tt, op_kind="adv", alpha=12.0, M=4)
    _, closed = first_chaos_variance(spec)
    paths = 1500 if fast else 3000
    mean, se, _ = mc_first_chaos(spec, paths, tt / 1600, np.random.default_rng(8))
    err = abs(mean - closed)
    tol = max(3 * se, 0.05 * closed)
    checks.append(CheckResult("chaos MC vs Ito-isometry sum (adv)", err <= tol, err, tol))

    # --- ratio drift empirical constant
    wv = random_field(g16, rng, spectrum=2.0)
    uu = biot_savart(wv)
    stt = make_scalar_state(random_field(g16, rng), "adv", 0.2)
    c_emp = 0.0
    for _ in range(20):
        lhs, bound = ratio_drift_diagnostic(stt, uu, M=3.0, h=1e-3)
        if bound > 0:
            c_emp = max(c_emp, lhs / bound)
        stt = scalar_step(stt, uu, 1e-3)
    checks.append(CheckResult("ratio drift C_emp finite", math.isfinite(c_emp), c_emp, math.inf,
                              "empirical constant"))

    # --- flow sanity: sigma=0 single mode exact decay
    w0 = single_mode_field(g16, 2)
    fl = make_flow_state(w0)
    silent = NoiseModel(alpha=12.0, sigma=0.0, grid=g16)
    for _ in range(10):
        fl = sns_step(fl, silent, 0.01)
    err = float(np.abs(fl.w.coeff - heat_propagate(w0, 0.1, 1.0).coeff).max())
    checks.append(CheckResult("single-mode vorticity exact heat decay", err <= 1e-12, err, 1e-12))

    ok = all(c.passed for c in checks)
    return ok, checks
