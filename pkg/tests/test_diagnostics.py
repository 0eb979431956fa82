import math

import numpy as np
import pytest

from medianflow.diagnostics import (
    FKAccumulator,
    MedianTrace,
    StoppingTracker,
    accumulate_fk,
    annulus_field,
    clamped_levels,
    estimate_lambda,
    eta_cap,
    finish_fk,
    ratio_drift_diagnostic,
    record_median,
    run_stopping_experiment,
    single_mode_field,
    t_star,
    t_star_delta,
    wilson_interval,
)
from medianflow.flow import make_flow_state, sns_step
from medianflow.noise import NoiseModel, standard_increments, coarsen_standard_noise
from medianflow.scalar import make_scalar_state, scalar_step
from medianflow.spectral import (
    SpectralField,
    biot_savart,
    field_from_modes,
    make_grid,
    sobolev_norm,
    spectral_quantile,
    zero_vector,
)

from conftest import rand_field


# ------------------------------------------------------------------ timescales

def test_t_star_value():
    # kappa=0.1, M=10, alpha=12: 11 * 10 * 0.01 * ln 10
    assert t_star(0.1, 10, 12.0) == pytest.approx(1.1 * math.log(10.0))
    assert t_star(0.1, 10, 12.0) == pytest.approx(2.53284, abs=1e-5)


def test_t_star_scalings():
    for m in [4, 10, 32]:
        ratio = t_star(0.1, 2 * m, 12.0) / t_star(0.1, m, 12.0)
        assert ratio == pytest.approx(0.25 * math.log(2 * m) / math.log(m), rel=1e-12)
    assert t_star(0.05, 10, 12.0) == pytest.approx(2 * t_star(0.1, 10, 12.0), rel=1e-12)
    with pytest.raises(ValueError):
        t_star(0.1, 1, 12.0)


def test_t_star_delta():
    base = t_star(0.1, 10, 12.0)
    assert t_star_delta(0.1, 10, 12.0, 0.0) == pytest.approx(base)
    assert t_star_delta(0.1, 10, 12.0, 0.2) == pytest.approx(base * 10**0.2, rel=1e-12)
    assert t_star_delta(0.1, 10, 12.0, 0.23) > t_star_delta(0.1, 10, 12.0, 0.2)


def test_clamped_levels_and_eta_cap():
    # kappa^-q = 2^2.5 ~ 5.657: levels 10, 9, ..., 6, 5.657
    levels, L = clamped_levels(10, 0.5, 2.5)
    assert L == 5
    assert levels[:5] == [10, 9, 8, 7, 6]
    assert levels[5] == pytest.approx(0.5**-2.5)
    cap = eta_cap(10, 0.5, 2.5, 0.2, 12.0)
    assert cap == pytest.approx(sum(t_star_delta(0.5, lv, 12.0, 0.2) for lv in levels))
    # degenerate clamp: kappa^-q above M0 gives a single tiny stage
    levels, L = clamped_levels(16, 1e-3, 2.5)
    assert L == 0 and levels == [1e-3**-0.0 * 1e3**2.5]


# ------------------------------------------------------------------ FK accumulation

def test_fk_pure_heat_exact(grid16):
    kappa, m, h, steps = 0.2, 3, 1e-3, 200
    st = make_scalar_state(single_mode_field(grid16, m), "adv", kappa)
    u = zero_vector(grid16)
    acc = FKAccumulator()
    for _ in range(steps):
        accumulate_fk(acc, st, u, h)
        st = scalar_step(st, u, h)
    finish_fk(acc, st)
    T = steps * h
    assert acc.int_grad == pytest.approx(kappa * m * m * T, rel=1e-12)
    assert acc.log_growth == pytest.approx(-kappa * m * m * T, rel=1e-10)
    assert abs(acc.residual()) < 1e-10
    assert acc.t_accum == pytest.approx(T)


@pytest.mark.parametrize("op_kind", ["adv", "lns"])
def test_fk_residual_halves_under_refinement(op_kind):
    # seed-coupled noise: the coarse run consumes the fine increments pairwise
    grid = make_grid(32)
    kappa, T = 0.1, 1.0
    model = NoiseModel(alpha=12.0, sigma=1.0, grid=grid, rng_seed=5)

    def residual(h, noises):
        fl = make_flow_state(rand_field(grid, seed=50, spectrum=2.0))
        st = make_scalar_state(rand_field(grid, seed=51), op_kind, kappa)
        acc = FKAccumulator()
        for w in noises:
            accumulate_fk(acc, st, fl.u, h)
            st = scalar_step(st, fl.u, h)
            fl = sns_step(fl, model, h, noise=w)
        finish_fk(acc, st)
        return abs(acc.residual())

    h = 2e-3
    rng = model.make_rng()
    fine = [standard_increments(grid, rng) for _ in range(int(T / h) * 2)]
    decay = grid.ksq.astype(float)
    coarse = [
        coarsen_standard_noise(fine[2 * i], fine[2 * i + 1], decay, h)
        for i in range(int(T / h))
    ]
    r_coarse = residual(2 * h, coarse)
    r_fine = residual(h, fine)
    assert r_fine < r_coarse
    assert r_fine == pytest.approx(0.5 * r_coarse, rel=0.35)


# ------------------------------------------------------------------ lambda estimation

def test_estimate_lambda_heat_control(grid16):
    kappa, m, h = 0.3, 2, 1e-3
    st = make_scalar_state(single_mode_field(grid16, m), "adv", kappa)
    u = zero_vector(grid16)
    times, amps = [0.0], [st.log_amp]
    for _ in range(400):
        st = scalar_step(st, u, h)
        times.append(st.t)
        amps.append(st.log_amp)
    lam, err = estimate_lambda(times, amps, t_burn=0.1)
    assert lam == pytest.approx(-kappa * m * m, abs=1e-10)
    assert err < 1e-10


def test_estimate_lambda_scale_invariance(grid16):
    rho = rand_field(grid16, seed=60)
    u = biot_savart(rand_field(grid16, seed=61, spectrum=2.0))

    def run(scale):
        st = make_scalar_state(SpectralField(grid16, scale * rho.coeff), "adv", 0.1)
        times, amps = [0.0], [st.log_amp]
        for _ in range(200):
            st = scalar_step(st, u, 1e-3)
            times.append(st.t)
            amps.append(st.log_amp)
        return estimate_lambda(times, amps, t_burn=0.05)[0]

    assert run(1.0) == pytest.approx(run(123.0), rel=1e-9)


def test_estimate_lambda_too_short():
    with pytest.raises(ValueError):
        estimate_lambda([0.0, 1.0], [0.0, -1.0], t_burn=2.0)
    with pytest.raises(ValueError):
        estimate_lambda(np.linspace(0, 1, 5), np.zeros(5), t_burn=0.0)


# ------------------------------------------------------------------ median trace

def test_record_median_single_mode(grid16):
    st = make_scalar_state(single_mode_field(grid16, 4), "adv", 0.1)
    trace = MedianTrace()
    record_median(trace, st)
    assert trace.median == [4]
    assert trace.quantile2 == [4]
    assert trace.filament[0] == pytest.approx(0.25)


def test_record_median_replay_oracle(grid16):
    u = biot_savart(rand_field(grid16, seed=70, spectrum=2.0))
    st = make_scalar_state(rand_field(grid16, seed=71), "adv", 0.1)
    trace = MedianTrace()
    snapshots = []
    for _ in range(20):
        st = scalar_step(st, u, 1e-3)
        record_median(trace, st)
        snapshots.append(st.pi.copy())
    for i, snap in enumerate(snapshots):
        assert trace.median[i] == spectral_quantile(snap, 1.0)
        assert trace.quantile2[i] == spectral_quantile(snap, 2.0)


# ------------------------------------------------------------------ stopping tracker

def test_tracker_simple_descent():
    # median walks down 10 -> 9 -> 8 ... quickly; quantile2 stays put
    tr = StoppingTracker(M0=10, kappa=0.5, q=2.5, delta=0.2, alpha=12.0)
    t = 0.0
    medians = [10, 10, 9, 9, 8, 7, 6, 5, 5, 5, 5, 5]
    for i, m in enumerate(medians):
        tr.observe(0.05 * i, m, m)
        t = 0.05 * i
    # first time median < M0 - 1 = 9: median 8 is observed at index 4, t = 0.2
    assert tr.tau_M0 == pytest.approx(0.2)
    rec = tr.record()
    assert rec.M0 == 10
    assert rec.hit_within_tstar == (rec.tau <= t_star(0.5, 10, 12.0))


def test_tracker_degenerate_clamp_gives_tiny_eta():
    tr = StoppingTracker(M0=16, kappa=1e-3, q=2.5, delta=0.2, alpha=12.0)
    cap = eta_cap(16, 1e-3, 2.5, 0.2, 12.0)
    for i in range(10):
        tr.observe(i * 1e-4, 16, 16)
    assert tr.done
    assert tr.eta <= cap
    assert tr.i_fin == 0


def test_tracker_sigma_event():
    # quantile2 jumps above the current level before any descent
    tr = StoppingTracker(M0=10, kappa=0.5, q=2.5, delta=0.2, alpha=12.0)
    tr.observe(0.0, 10, 10)
    tr.observe(0.1, 10, 11)  # M^(2) > 10: sigma_0 fires
    assert tr.done
    assert tr.eta == pytest.approx(0.1)
    assert tr.i_fin == 0
    assert tr.sigma_M0 == pytest.approx(0.1)


def test_tracker_eta_respects_cap():
    rngs = np.random.default_rng(8)
    for trial in range(20):
        tr = StoppingTracker(M0=8, kappa=0.4, q=2.5, delta=0.2, alpha=12.0)
        cap = eta_cap(8, 0.4, 2.5, 0.2, 12.0)
        m = 8
        for i in range(2000):
            m = max(2, m + int(rngs.integers(-1, 2)))
            q2 = m + int(rngs.integers(0, 3))
            tr.observe(i * 0.01, m, q2)
            if tr.done:
                break
        assert tr.done
        assert tr.eta <= cap + 1e-12


# ------------------------------------------------------------------ initial data

@pytest.mark.parametrize("M0", [4, 8, 16])
def test_annulus_median_exact(M0):
    grid = make_grid(128) if M0 == 16 else make_grid(64)
    f = annulus_field(grid, M0, np.random.default_rng(M0))
    for beta in [0.5, 1.0, 2.0]:
        assert spectral_quantile(f, beta) == M0
    assert sobolev_norm(f, 0.0) == pytest.approx(1.0)


def test_single_mode_field_guard(grid16):
    with pytest.raises(ValueError):
        single_mode_field(grid16, 200)


# ------------------------------------------------------------------ ratio drift

def test_ratio_drift_pure_dissipation(grid16):
    st = make_scalar_state(
        field_from_modes(grid16, {(1, 0): 1.0, (4, 0): 1.0}), "adv", 0.2
    )
    lhs, bound = ratio_drift_diagnostic(st, zero_vector(grid16), M=2.0, h=1e-3)
    assert lhs <= 0.0
    assert bound == 0.0  # u = 0


def test_ratio_drift_bounded(grid16):
    u = biot_savart(rand_field(grid16, seed=80, spectrum=2.0))
    st = make_scalar_state(rand_field(grid16, seed=81), "adv", 0.2)
    lhs, bound = ratio_drift_diagnostic(st, u, M=3.0, h=1e-3)
    assert np.isfinite(lhs) and bound > 0
    st_lns = make_scalar_state(rand_field(grid16, seed=81), "lns", 0.2)
    lhs2, bound2 = ratio_drift_diagnostic(st_lns, u, M=3.0, h=1e-3)
    assert bound2 > bound  # lns adds the Delta-u term


def test_ratio_drift_needs_low_modes(grid16):
    st = make_scalar_state(field_from_modes(grid16, {(5, 0): 1.0}), "adv", 0.2)
    with pytest.raises(ValueError):
        ratio_drift_diagnostic(st, zero_vector(grid16), M=2.0, h=1e-3)


# ------------------------------------------------------------------ wilson

def test_wilson_interval():
    lo, hi = wilson_interval(0, 50)
    assert lo == 0.0 and hi < 0.1
    lo, hi = wilson_interval(25, 50)
    assert 0.35 < lo < 0.5 < hi < 0.65
    lo, hi = wilson_interval(1, 50)
    assert lo > 0.0


# ------------------------------------------------------------------ stopping experiment

def test_stopping_experiment_silent_control():
    grid = make_grid(64)
    model = NoiseModel(alpha=12.0, sigma=0.0, grid=grid, rng_seed=3)
    rec, trace = run_stopping_experiment(
        grid, model, kappa=0.3, op_kind="adv", dt=2e-3, M0=6, delta=0.2, q=2.5,
        seed=3, t_max=t_star(0.3, 6, 12.0), record_every=5,
    )
    # pure heat on annulus data: the median never moves
    assert all(m == 6 for m in trace.median)
    assert rec.hit_within_tstar is False
    assert math.isinf(rec.tau)
    assert rec.eta <= eta_cap(6, 0.3, 2.5, 0.2, 12.0) + 1e-12


def test_stopping_experiment_with_noise_descends():
    grid = make_grid(64)
    model = NoiseModel(alpha=12.0, sigma=1.0, grid=grid, rng_seed=4)
    rec, trace = run_stopping_experiment(
        grid, model, kappa=0.3, op_kind="adv", dt=2e-3, M0=6, delta=0.2, q=2.5,
        seed=4, t_max=t_star(0.3, 6, 12.0), record_every=5, c_cfl=1.0,
    )
    assert min(trace.median) < 6
    assert rec.eta <= eta_cap(6, 0.3, 2.5, 0.2, 12.0) + 1e-12


def test_stopping_experiment_resolution_guard(grid16):
    model = NoiseModel(alpha=12.0, sigma=1.0, grid=grid16)
    with pytest.raises(ValueError, match="resolved"):
        run_stopping_experiment(
            grid16, model, kappa=0.3, op_kind="adv", dt=1e-3, M0=4, delta=0.2, q=2.5, seed=0
        )


from hypothesis import given, settings
from hypothesis import strategies as st


@settings(deadline=None, max_examples=60)
@given(m=st.integers(2, 500), kappa=st.floats(1e-4, 1.0), alpha=st.floats(10.001, 20.0))
def test_t_star_doubling_identity(m, kappa, alpha):
    ratio = t_star(kappa, 2 * m, alpha) / t_star(kappa, m, alpha)
    assert ratio == pytest.approx(0.25 * math.log(2 * m) / math.log(m), rel=1e-12)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(0, 10_000))
def test_tracker_eta_always_capped(seed):
    rng = np.random.default_rng(seed)
    tr = StoppingTracker(M0=8, kappa=0.4, q=2.5, delta=0.2, alpha=12.0)
    cap = eta_cap(8, 0.4, 2.5, 0.2, 12.0)
    m = 8
    for i in range(3000):
        m = max(2, m + int(rng.integers(-1, 2)))
        tr.observe(i * 0.01, m, m + int(rng.integers(0, 3)))
        if tr.done:
            break
    assert tr.done and tr.eta <= cap + 1e-12
