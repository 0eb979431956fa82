import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medianflow import spectral as sp
from medianflow.spectral import (
    SpectralField,
    biot_savart,
    curl,
    dealiased_product,
    div,
    field_from_modes,
    filament_scale,
    from_physical,
    grad,
    holder_norm,
    inner,
    inv_grad,
    inv_laplacian,
    laplacian,
    leray_project,
    make_grid,
    project_high,
    project_low,
    random_field,
    sobolev_norm,
    spectral_quantile,
    to_physical,
    zero_field,
)

from conftest import rand_field


# ------------------------------------------------------------------ oracles

def brute_convolution(f, g):
    """Direct O(n^4) evaluation of the truncated convolution sum."""
    grid = f.grid
    n, kb = grid.n, grid.kmax_box
    out = grid.zeros()
    rng_k = range(-kb, kb + 1)
    fc, gc = f.coeff, g.coeff
    for l1 in rng_k:
        for l2 in rng_k:
            if l1 == 0 and l2 == 0:
                continue
            acc = 0.0 + 0.0j
            for k1 in rng_k:
                j1 = l1 - k1
                if abs(j1) > kb:
                    continue
                for k2 in rng_k:
                    j2 = l2 - k2
                    if abs(j2) > kb:
                        continue
                    if k1 == 0 and k2 == 0:
                        continue
                    if j1 == 0 and j2 == 0:
                        continue
                    acc += fc[k1 % n, k2 % n] * gc[j1 % n, j2 % n]
            out[l1 % n, l2 % n] = acc
    return SpectralField(grid, out)


def quantile_scan_oracle(f, beta):
    """Linear scan over M using the projection operators directly."""
    m_top = int(math.ceil(f.grid.kabs[f.grid.active].max())) + 1
    for m in range(1, m_top + 1):
        hi = sobolev_norm(project_high(f, m), 0.0)
        lo = sobolev_norm(project_low(f, m), 0.0)
        if hi <= beta * lo:
            return m
    raise AssertionError("no quantile found")


# ------------------------------------------------------------------ grid

def test_make_grid_counts():
    assert make_grid(8, 1).active_count == 63
    assert make_grid(12, 2 / 3).active_count == 80  # 9x9 box minus origin


def test_make_grid_rejects_bad_n():
    with pytest.raises(ValueError):
        make_grid(7)
    with pytest.raises(ValueError):
        make_grid(6)
    with pytest.raises(ValueError):
        make_grid(16, 0.0)


def test_active_set_hermitian_closed(grid16):
    act = grid16.active
    assert not act[0, 0]
    assert np.array_equal(act, sp.conj_flip(act))
    assert grid16.active_count <= grid16.n**2 - 1


# ------------------------------------------------------------------ transforms

def test_single_pair_is_cosine(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0})
    x = 2 * np.pi * np.arange(grid16.n) / grid16.n
    expected = 2 * np.cos(x)[:, None] * np.ones(grid16.n)[None, :]
    assert np.abs(to_physical(f) - expected).max() < 1e-12


def test_zero_field_round_trip(grid16):
    f = zero_field(grid16)
    assert np.abs(to_physical(f)).max() == 0.0
    g = from_physical(grid16, np.zeros((16, 16)))
    assert np.abs(g.coeff).max() == 0.0


def test_from_physical_shape_mismatch(grid16):
    with pytest.raises(ValueError):
        from_physical(grid16, np.zeros((8, 8)))


@settings(deadline=None, max_examples=20)
@given(seed=st.integers(0, 2**31))
def test_round_trip_identity(seed):
    grid = make_grid(16)
    f = random_field(grid, np.random.default_rng(seed))
    g = from_physical(grid, to_physical(f))
    assert np.abs(g.coeff - f.coeff).max() < 1e-12
    f.validate()
    g.validate()


def test_parseval(grid32):
    f = rand_field(grid32, seed=5)
    samples = to_physical(f)
    assert sobolev_norm(f, 0.0) ** 2 == pytest.approx(np.mean(samples**2), rel=1e-12)


# ------------------------------------------------------------------ products

def test_product_two_pairs(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0})
    g = field_from_modes(grid16, {(0, 1): 1.0})
    p = dealiased_product(f, g)
    n = grid16.n
    for a, b in [(1, 1), (1, -1), (-1, 1), (-1, -1)]:
        assert p.coeff[a % n, b % n] == pytest.approx(1.0, abs=1e-13)
    assert sobolev_norm(p, 0.0) == pytest.approx(2.0, rel=1e-12)


def test_product_self_pair(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0})
    p = dealiased_product(f, f)
    n = grid16.n
    # (e_k + e_-k)^2 = e_2k + e_-2k + 2, mean removed
    assert p.coeff[2 % n, 0] == pytest.approx(1.0, abs=1e-13)
    assert p.coeff[-2 % n, 0] == pytest.approx(1.0, abs=1e-13)
    assert abs(p.coeff[0, 0]) < 1e-13


def test_product_matches_brute_convolution():
    grid = make_grid(16)
    f = rand_field(grid, seed=1)
    g = rand_field(grid, seed=2)
    p = dealiased_product(f, g)
    q = brute_convolution(f, g)
    assert np.abs(p.coeff - q.coeff).max() < 1e-10 * max(1.0, np.abs(q.coeff).max())


def test_product_grid_mismatch():
    f = zero_field(make_grid(16))
    g = zero_field(make_grid(32))
    with pytest.raises(ValueError):
        dealiased_product(f, g)


# ------------------------------------------------------------------ operators

def test_laplacian_eigenvalue(grid16):
    f = field_from_modes(grid16, {(1, 2): 0.3 + 0.1j})
    lf = laplacian(f)
    assert np.abs(lf.coeff + 5.0 * f.coeff).max() < 1e-14


def test_div_grad_is_laplacian(grid32):
    f = rand_field(grid32, seed=3)
    a = div(grad(f))
    b = laplacian(f)
    assert np.abs(a.coeff - b.coeff).max() < 1e-12


def test_inv_grad_multiplier(grid16):
    f = field_from_modes(grid16, {(2, 0): 1.0})
    v = inv_grad(f)
    n = grid16.n
    assert v.comp1.coeff[2 % n, 0] == pytest.approx(1j * 2 / 4, abs=1e-14)
    assert v.comp2.coeff[2 % n, 0] == pytest.approx(0.0, abs=1e-14)


def test_div_inv_grad_is_minus_identity(grid32):
    # inv_grad = grad (-Delta)^{-1} (multiplier i k/|k|^2), so div o inv_grad = -id
    f = rand_field(grid32, seed=4)
    g = div(inv_grad(f))
    assert np.abs(g.coeff + f.coeff).max() < 1e-12


def test_inv_laplacian(grid32):
    f = rand_field(grid32, seed=6)
    assert np.abs(laplacian(inv_laplacian(f)).coeff - f.coeff).max() < 1e-12


def test_leray_fixed_point_and_idempotent(grid32):
    w = rand_field(grid32, seed=7)
    u = biot_savart(w)
    pu = leray_project(u)
    assert np.abs(pu.comp1.coeff - u.comp1.coeff).max() < 1e-12
    assert np.abs(pu.comp2.coeff - u.comp2.coeff).max() < 1e-12
    v = sp.VectorField(rand_field(grid32, seed=8), rand_field(grid32, seed=9))
    pv = leray_project(v)
    ppv = leray_project(pv)
    assert np.abs(ppv.comp1.coeff - pv.comp1.coeff).max() < 1e-12
    assert np.abs(div(pv).coeff).max() < 1e-12


def test_biot_savart_single_mode(grid16):
    w = field_from_modes(grid16, {(1, 0): 1.0})
    u = biot_savart(w)
    # u_hat(k) = i k_perp w_hat(k)/|k|^2 with k_perp = (k2, -k1) = (0, -1)
    assert u.comp1.coeff[1, 0] == pytest.approx(0.0, abs=1e-14)
    assert u.comp2.coeff[1, 0] == pytest.approx(-1j, abs=1e-14)


def test_curl_biot_savart_identity(grid32):
    w = rand_field(grid32, seed=10)
    assert np.abs(curl(biot_savart(w)).coeff - w.coeff).max() < 1e-12


def test_biot_savart_divergence_free(grid32):
    u = biot_savart(rand_field(grid32, seed=11))
    assert np.abs(div(u).coeff).max() < 1e-12
    assert u.divergence_free


# ------------------------------------------------------------------ projections

def test_projection_boundary(grid16):
    f = field_from_modes(grid16, {(3, 4): 1.0})  # |k| = 5
    assert sobolev_norm(project_low(f, 5.0), 0.0) == pytest.approx(sobolev_norm(f, 0.0))
    assert sobolev_norm(project_high(f, 5.0), 0.0) == 0.0
    assert sobolev_norm(project_low(f, 4.9), 0.0) == 0.0


def test_projection_pythagoras(grid32):
    f = rand_field(grid32, seed=12)
    for m in [1.0, 3.0, 7.5]:
        lo = sobolev_norm(project_low(f, m), 0.0)
        hi = sobolev_norm(project_high(f, m), 0.0)
        total = sobolev_norm(f, 0.0)
        assert lo**2 + hi**2 == pytest.approx(total**2, rel=1e-12)
        s = project_low(f, m).coeff + project_high(f, m).coeff
        assert np.abs(s - f.coeff).max() < 1e-14


# ------------------------------------------------------------------ norms

def test_sobolev_examples(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0})
    for s in [-2.0, 0.0, 1.0, 3.5]:
        assert sobolev_norm(f, s) == pytest.approx(math.sqrt(2))
    g = field_from_modes(grid16, {(2, 0): 1.0})
    for s in [-1.0, 0.0, 2.0]:
        assert sobolev_norm(g, s) == pytest.approx(math.sqrt(2) * 2.0**s)
    assert sobolev_norm(zero_field(grid16), 1.0) == 0.0


def test_holder_norm_single_pair(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0})
    for beta in [0.0, 0.5, 2.0]:
        assert holder_norm(f, beta) == pytest.approx(2.0, rel=1e-12)


def test_holder_norm_zero_and_scaling(grid32):
    assert holder_norm(zero_field(grid32), 1.0) == 0.0
    f = rand_field(grid32, seed=13)
    c = -2.5
    g = SpectralField(grid32, c * f.coeff)
    assert holder_norm(g, 0.7) == pytest.approx(abs(c) * holder_norm(f, 0.7), rel=1e-12)


# ------------------------------------------------------------------ quantiles

def test_quantile_single_shell(grid16):
    f = field_from_modes(grid16, {(3, 4): 2.0})  # |k| = 5
    for beta in [0.5, 1.0, 2.0, 10.0]:
        assert spectral_quantile(f, beta) == 5


def test_quantile_two_shells(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0, (3, 0): 1.0})
    assert spectral_quantile(f, 1.0) == 1  # ratio exactly 1 at M = 1


def test_quantile_matches_scan_oracle(grid32):
    for seed in range(10):
        f = rand_field(grid32, seed=seed, spectrum=1.0)
        for beta in [0.5, 1.0, 2.0]:
            assert spectral_quantile(f, beta) == quantile_scan_oracle(f, beta)


def test_quantile_monotone_in_beta(grid32):
    f = rand_field(grid32, seed=20, spectrum=0.5)
    betas = [0.25, 0.5, 1.0, 2.0, 4.0]
    qs = [spectral_quantile(f, b) for b in betas]
    assert all(a >= b for a, b in zip(qs, qs[1:]))


def test_quantile_scale_invariant(grid16):
    f = rand_field(grid16, seed=21)
    g = SpectralField(grid16, 17.3 * f.coeff)
    assert spectral_quantile(f, 1.0) == spectral_quantile(g, 1.0)


def test_quantile_zero_field(grid16):
    with pytest.raises(ValueError):
        spectral_quantile(zero_field(grid16), 1.0)


# ------------------------------------------------------------------ filament scale

def test_filament_single_pair(grid16):
    for m in [1, 2, 4]:
        f = field_from_modes(grid16, {(m, 0): 1.0})
        assert filament_scale(f) == pytest.approx(1.0 / m)


def test_filament_two_pairs(grid16):
    f = field_from_modes(grid16, {(1, 0): 1.0, (0, 2): 1.0})
    assert filament_scale(f) == pytest.approx(math.sqrt(2.0 / 5.0))


def test_filament_scale_invariant(grid16):
    f = rand_field(grid16, seed=22)
    g = SpectralField(grid16, -0.03 * f.coeff)
    assert filament_scale(g) == pytest.approx(filament_scale(f), rel=1e-12)
    with pytest.raises(ValueError):
        filament_scale(zero_field(grid16))


# ------------------------------------------------------------------ inner product

def test_inner_product_is_real_and_consistent(grid16):
    f = rand_field(grid16, seed=30)
    assert inner(f, f) == pytest.approx(sobolev_norm(f, 0.0) ** 2, rel=1e-12)
    g = rand_field(grid16, seed=31)
    assert inner(f, g) == pytest.approx(inner(g, f), rel=1e-10, abs=1e-14)
