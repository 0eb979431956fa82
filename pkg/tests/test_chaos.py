import math

import numpy as np
import pytest

from medianflow.chaos import (
    ChaosSpec,
    SparseGaussianPaths,
    double_time_integral,
    first_chaos_variance,
    first_chaos_variance_adv,
    first_chaos_variance_lns,
    geometric_sum,
    inner_time_integral,
    lns_norm_equivalence_check,
    lower_bound_ratio,
    mc_first_chaos,
    mc_first_chaos_mean_coefficients,
    norm_equivalence_check,
    simulate_ito_integral,
)
from medianflow.diagnostics import annulus_field, t_star
from medianflow.flow import heat_propagate, make_X_process
from medianflow.noise import NoiseModel, standard_increments
from medianflow.scalar import phi_bilinear
from medianflow.spectral import (
    SpectralField,
    field_from_modes,
    make_grid,
    sobolev_norm,
    zero_vector,
)

from conftest import rand_field


# ------------------------------------------------------------------ geometry

def test_geometric_sum_values():
    assert geometric_sum((1, 0)) == 34
    assert geometric_sum((0, 1)) == 34  # rotation symmetry


def test_geometric_sum_symmetries():
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = tuple(int(x) for x in rng.integers(-30, 31, size=2))
        if k == (0, 0):
            continue
        assert geometric_sum(k) == geometric_sum((-k[0], -k[1]))
        assert geometric_sum(k) == geometric_sum((k[1], -k[0]))


def test_geometric_sum_lower_bound_scan():
    worst = math.inf
    for k1 in range(-100, 101):
        for k2 in range(-100, 101):
            q = k1 * k1 + k2 * k2
            if q == 0 or q > 100 * 100:
                continue
            worst = min(worst, geometric_sum((k1, k2)) / q**2)
    assert worst > 0


def test_geometric_sum_rejects_zero():
    with pytest.raises(ValueError):
        geometric_sum((0, 0))


# ------------------------------------------------------------------ time integrals

def test_inner_integral_against_quadrature():
    from scipy.integrate import quad

    for (a, b, c, s, t) in [(0.1, 0.4, 4.0, 0.3, 1.7), (0.2, 0.2, 1.0, 0.0, 0.5), (1.0, 2.0, 3.0, 0.1, 0.2)]:
        direct, _ = quad(
            lambda r: math.exp(-a * (t - r)) * math.exp(-b * r) * math.exp(-c * (r - s)),
            s,
            t,
        )
        assert inner_time_integral(s, t, a, b, c) == pytest.approx(direct, rel=1e-10)


def test_double_integral_against_riemann_oracle():
    # 10^6-point midpoint Riemann sum as the independent oracle
    a, b, c, t = 0.1, 0.2 * 65.0, 64.0, 0.8
    n = 1_000_000
    s = (np.arange(n) + 0.5) * (t / n)
    d = a - b - c
    inner = np.exp(-a * (t - s)) * np.exp(-b * s) * (t - s) * np.where(
        np.abs(d * (t - s)) < 1e-12, 1.0, np.expm1(d * (t - s)) / (d * (t - s) + 1e-300)
    )
    riemann = float((inner**2).sum() * (t / n))
    assert double_time_integral(t, a, b, c) == pytest.approx(riemann, rel=1e-6)


# ------------------------------------------------------------------ variance structure

def test_variance_zero_when_k_parallel_ell():
    # rho0 at l - k with k parallel to l: geometric factor vanishes
    grid = make_grid(16)
    rho0 = field_from_modes(grid, {(2, 0): 1.0})
    spec = ChaosSpec(rho0=rho0, kappa=0.1, t=0.5, op_kind="adv", alpha=12.0)
    per_ell, _ = first_chaos_variance_adv(spec)
    # l = (1,0) or (-1,0): the only k are -+(1,0) and -+(3,0), all parallel to l
    assert per_ell[(1, 0)] == 0.0
    assert per_ell[(-1, 0)] == 0.0


def test_lns_variance_zero_on_equal_magnitudes():
    grid = make_grid(16)
    rho0 = field_from_modes(grid, {(0, 5): 1.0})
    spec = ChaosSpec(rho0=rho0, kappa=0.1, t=0.5, op_kind="lns", alpha=12.0)
    per_ell, _ = first_chaos_variance_lns(spec)
    # l = (0,-1)... wait: contributions need |k| = |l - k|; check l=(1,1), j=(0,-5)?
    # direct structural check: perpendicular-degenerate l has zero weight
    for ell, val in per_ell.items():
        k_candidates = [(ell[0], ell[1] - 5), (ell[0], ell[1] + 5)]
        if all((k[0] ** 2 + k[1] ** 2) in (0,) for k in k_candidates):
            assert val == 0.0


def test_variance_quadratic_in_rho0_and_monotone_in_t(grid16):
    rho0 = annulus_field(grid16, 4, np.random.default_rng(3))
    spec1 = ChaosSpec(rho0=rho0, kappa=0.2, t=0.5, op_kind="adv", alpha=12.0)
    _, v1 = first_chaos_variance(spec1)
    scaled = SpectralField(grid16, 3.0 * rho0.coeff)
    spec2 = ChaosSpec(rho0=scaled, kappa=0.2, t=0.5, op_kind="adv", alpha=12.0)
    _, v2 = first_chaos_variance(spec2)
    assert v2 == pytest.approx(9.0 * v1, rel=1e-10)
    spec3 = ChaosSpec(rho0=rho0, kappa=0.2, t=1.0, op_kind="adv", alpha=12.0)
    _, v3 = first_chaos_variance(spec3)
    assert v3 >= v1


# ------------------------------------------------------------------ Ito isometry

def test_ito_isometry_piecewise_constant():
    rng = np.random.default_rng(11)
    n_steps, n_pairs, h, sigma = 7, 3, 0.05, 1.3
    base = rng.standard_normal((n_steps, n_pairs)) + 1j * rng.standard_normal((n_steps, n_pairs))
    table = np.empty((n_steps, 2 * n_pairs), dtype=complex)
    table[:, 0::2] = base
    table[:, 1::2] = np.conj(base)  # Hermitian integrand: the integral is real
    vals = simulate_ito_integral(table, h, n_paths=10_000, rng=rng, sigma=sigma)
    assert np.abs(vals.imag).max() < 1e-10
    target = sigma**2 * h * float((np.abs(table) ** 2).sum())
    est = (np.abs(vals) ** 2).mean()
    se = (np.abs(vals) ** 2).std(ddof=1) / math.sqrt(len(vals))
    assert abs(est - target) < 3 * se


# ------------------------------------------------------------------ MC vs closed form

def small_spec(op_kind, grid=None, kappa=0.2, M=4):
    grid = grid or make_grid(16)
    rho0 = annulus_field(grid, M, np.random.default_rng(7))
    t = t_star(kappa, M, 12.0)
    return ChaosSpec(rho0=rho0, kappa=kappa, t=t, op_kind=op_kind, alpha=12.0, M=M)


@pytest.mark.parametrize("op_kind", ["adv", "lns"])
def test_mc_matches_closed_form(op_kind):
    spec = small_spec(op_kind)
    h = spec.t / 2400
    _, closed = first_chaos_variance(spec)
    mean, se, _ = mc_first_chaos(spec, n_paths=3000, quad_step=h, rng=np.random.default_rng(5))
    assert abs(mean - closed) < max(3 * se, 0.05 * closed)


def test_mc_mean_is_centered():
    spec = small_spec("adv")
    means, stderrs = mc_first_chaos_mean_coefficients(
        spec, n_paths=2000, quad_step=spec.t / 800, rng=np.random.default_rng(6)
    )
    assert (np.abs(means) < 4 * stderrs + 1e-12).all()


def test_sparse_paths_match_full_field_pipeline():
    # the sparse-mode simulation is algebraically the full pseudo-spectral
    # Phi[X~, Y] restricted to the projected output modes
    grid = make_grid(16)
    rho0 = annulus_field(grid, 4, np.random.default_rng(8))
    kappa, t = 0.25, 0.2
    h = t / 40
    spec = ChaosSpec(rho0=rho0, kappa=kappa, t=t, op_kind="adv", alpha=12.0)
    model = NoiseModel(alpha=12.0, sigma=1.0, grid=grid)

    n_paths = 2
    draws = [
        [standard_increments(grid, np.random.default_rng(1000 + 37 * p + s)) for s in range(40)]
        for p in range(n_paths)
    ]
    sim = SparseGaussianPaths(spec, n_paths=n_paths, quad_step=h)

    def hook(step):
        w = np.empty((n_paths, len(sim.modes)), dtype=complex)
        for p in range(n_paths):
            for mi, k in enumerate(sim.modes):
                w[p, mi] = draws[p][step][k[0] % grid.n, k[1] % grid.n]
        return w

    sparse_vals = sim.run(rng=None, noise_hook=hook)

    for p in range(n_paths):
        xp = make_X_process(zero_vector(grid), model, h)
        x_traj = [xp.state.copy()]
        for s in range(40):
            xp.step(noise=draws[p][s])
            x_traj.append(xp.state.copy())
        y_traj = [heat_propagate(rho0, i * h, kappa) for i in range(41)]
        phi = phi_bilinear(x_traj, y_traj, kappa, t, "adv", h)
        full = sum(
            abs(phi.coeff[l1 % grid.n, l2 % grid.n]) ** 2 for (l1, l2) in spec.ell_set
        )
        assert sparse_vals[p] == pytest.approx(full, rel=1e-10)


# ------------------------------------------------------------------ lower bound ratio

def test_lower_bound_ratio_positive_and_scale_invariant(grid16):
    spec = small_spec("adv")
    r1 = lower_bound_ratio(spec)
    assert r1 > 0
    scaled = ChaosSpec(
        rho0=SpectralField(spec.rho0.grid, 5.0 * spec.rho0.coeff),
        kappa=spec.kappa,
        t=spec.t,
        op_kind="adv",
        alpha=12.0,
        M=spec.M,
    )
    assert lower_bound_ratio(scaled) == pytest.approx(r1, rel=1e-10)
    assert lower_bound_ratio(small_spec("lns")) > 0


# ------------------------------------------------------------------ norm equivalences

def test_norm_equivalence_single_pair():
    grid = make_grid(16)
    f = field_from_modes(grid, {(1, 0): 1.0})
    alpha = 2.0
    lhs, rhs = norm_equivalence_check(f, alpha)
    # closed truncated form: sum_k |k|^-2a (|k+j0|^-2a + |k-j0|^-2a), j0=(1,0)
    g = grid
    acc = 0.0
    for i1, i2 in np.argwhere(g.active):
        k1, k2 = int(g.k1[i1, i2]), int(g.k2[i1, i2])
        for j in [(1, 0), (-1, 0)]:
            l1, l2 = k1 + j[0], k2 + j[1]
            if (l1, l2) == (0, 0) or abs(l1) > g.kmax_box or abs(l2) > g.kmax_box:
                continue
            acc += (k1**2 + k2**2) ** -alpha * (l1**2 + l2**2) ** -alpha
    assert lhs == pytest.approx(acc, rel=1e-10)
    assert rhs == pytest.approx(2.0, rel=1e-12)
    assert 0 < lhs / rhs < math.inf


def test_norm_equivalence_scale_invariant_ratio(grid16):
    f = rand_field(grid16, seed=9)
    l1, r1 = norm_equivalence_check(f, 2.0)
    g = SpectralField(grid16, 4.0 * f.coeff)
    l2, r2 = norm_equivalence_check(g, 2.0)
    assert l2 / r2 == pytest.approx(l1 / r1, rel=1e-12)


def test_norm_equivalence_band():
    from medianflow.chaos import equivalence_test_field

    grid = make_grid(32)
    ratios = []
    for seed in range(20):
        f = equivalence_test_field(grid, 2.0, np.random.default_rng(seed))
        lhs, rhs = norm_equivalence_check(f, 2.0)
        ratios.append(lhs / rhs)
    assert max(ratios) / min(ratios) < 1.25  # well within the factor-5 band


def test_lns_norm_equivalence_vanishing_term():
    grid = make_grid(16)
    j = (3, 4)  # |j|^2 = 25
    psi = field_from_modes(grid, {j: 1.0})
    alpha = 2.5
    # inner term for a k with |k| = |j| must vanish
    for k in [(5, 0), (0, 5), (4, 3)]:
        ksq = k[0] ** 2 + k[1] ** 2
        acc = 0.0
        for jj in [(3, 4), (-3, -4)]:
            l1, l2 = k[0] + jj[0], k[1] + jj[1]
            lsq = l1 * l1 + l2 * l2
            if lsq == 0:
                continue
            acc += lsq ** -(alpha + 1) * (1.0 - ksq / 25.0) ** 2
        assert acc == 0.0


def test_lns_norm_equivalence_band_and_scale():
    from medianflow.chaos import equivalence_test_field

    grid = make_grid(32)
    ratios = []
    for seed in range(20):
        psi = equivalence_test_field(grid, 3.5, np.random.default_rng(100 + seed))
        lhs, rhs = lns_norm_equivalence_check(psi, 2.5)
        ratios.append(lhs / rhs)
    assert max(ratios) / min(ratios) < 1.6
    psi = rand_field(grid, seed=3)
    l1, r1 = lns_norm_equivalence_check(psi, 2.5)
    l2, r2 = lns_norm_equivalence_check(SpectralField(grid, 0.2 * psi.coeff), 2.5)
    assert l2 / r2 == pytest.approx(l1 / r1, rel=1e-12)
