"""Lyapunov and spectral-median diagnostics: FK functionals, timescales,
stopping-time bookkeeping, and the single-run stopping experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowState, make_flow_state, sns_step, velocity_max
from .noise import NoiseModel
from .scalar import LeapfrogScalar, ScalarState, make_scalar_state, scalar_step, stretch_term
from .spectral import (
    SpectralField,
    VectorField,
    WaveGrid,
    filament_scale,
    hermitianize,
    laplacian,
    project_high,
    project_low,
    sobolev_norm,
    spectral_quantile,
    to_physical,
)

# -------------------------------------------------------------- timescales

def t_star(kappa: float, M: float, alpha: float) -> float:
    """Diffusive timescale lam kappa^-1 M^-2 log M with lam = alpha/2 + 5."""
    if M < 2:
        raise ValueError(f"t_star needs M >= 2 (log M > 0), got M={M}")
    if not 0 < kappa <= 1:
        raise ValueError(f"kappa must lie in (0, 1], got {kappa}")
    lam = alpha / 2.0 + 5.0
    return lam / kappa * M**-2.0 * math.log(M)


def t_star_delta(kappa: float, M: float, alpha: float, delta: float) -> float:
    """Extended timescale t_star * M^delta."""
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    return t_star(kappa, M, alpha) * M**delta


def clamped_levels(M0: int, kappa: float, q: float):
    """The staged levels hat M_i = (M0 - i) v kappa^-q and the stage count L.

    L = min{i >= 0 : hat M_i <= kappa^-q}; returns (levels[0..L], L).
    """
    floor_level = kappa**-q
    levels = []
    i = 0
    while True:
        levels.append(max(M0 - i, floor_level))
        if levels[-1] <= floor_level:
            return levels, i
        i += 1


def eta_cap(M0: int, kappa: float, q: float, delta: float, alpha: float) -> float:
    """Deterministic upper bound on eta: sum of the per-stage caps."""
    levels, _ = clamped_levels(M0, kappa, q)
    return sum(t_star_delta(kappa, lv, alpha, delta) for lv in levels)


# -------------------------------------------------------------- accumulators

@dataclass
class FKAccumulator:
    """Running Furstenberg-Khasminskii integrals and realized log growth."""

    t_accum: float = 0.0
    int_grad: float = 0.0
    int_stretch: float = 0.0
    log_growth: float = 0.0
    n_samples: int = 0
    _last_log_amp: float | None = None

    def residual(self) -> float:
        return self.log_growth + self.int_grad + self.int_stretch


def accumulate_fk(acc: FKAccumulator, state: ScalarState, u: VectorField, h: float) -> FKAccumulator:
    """Add one step's integrands (rectangle rule at the current state).

    Call once per step before advancing the state, then once more through
    finish_fk with the final state to pick up the last log-amplitude increment.
    """
    if acc._last_log_amp is not None:
        acc.log_growth += state.log_amp - acc._last_log_amp
    acc._last_log_amp = state.log_amp
    acc.int_grad += h * state.kappa * sobolev_norm(state.pi, 1.0) ** 2
    if state.op_kind == "lns":
        acc.int_stretch += h * stretch_term(state, u)
    acc.t_accum += h
    acc.n_samples += 1
    return acc


def finish_fk(acc: FKAccumulator, state: ScalarState) -> FKAccumulator:
    if acc._last_log_amp is not None:
        acc.log_growth += state.log_amp - acc._last_log_amp
        acc._last_log_amp = state.log_amp
    return acc


def estimate_lambda(times, log_amps, t_burn: float, min_batches: int = 10):
    """Top-Lyapunov estimate (log_amp(T) - log_amp(t_burn))/(T - t_burn).

    The standard error comes from batch means over >= min_batches equal
    sub-intervals of [t_burn, T].
    """
    times = np.asarray(times, dtype=float)
    log_amps = np.asarray(log_amps, dtype=float)
    if times[-1] <= t_burn:
        raise ValueError(f"run of length {times[-1]:g} does not exceed t_burn={t_burn:g}")
    i0 = int(np.searchsorted(times, t_burn))
    if len(times) - i0 < min_batches + 1:
        raise ValueError("too few samples after burn-in for batch-mean errors")
    lam = (log_amps[-1] - log_amps[i0]) / (times[-1] - times[i0])
    edges = np.linspace(i0, len(times) - 1, min_batches + 1).astype(int)
    slopes = np.array(
        [
            (log_amps[b] - log_amps[a]) / (times[b] - times[a])
            for a, b in zip(edges[:-1], edges[1:])
        ]
    )
    stderr = float(slopes.std(ddof=1) / math.sqrt(len(slopes)))
    return float(lam), stderr


@dataclass
class MedianTrace:
    times: list = field(default_factory=list)
    median: list = field(default_factory=list)
    quantile2: list = field(default_factory=list)
    filament: list = field(default_factory=list)


def record_median(trace: MedianTrace, state: ScalarState) -> MedianTrace:
    trace.times.append(state.t)
    trace.median.append(spectral_quantile(state.pi, 1.0))
    trace.quantile2.append(spectral_quantile(state.pi, 2.0))
    trace.filament.append(filament_scale(state.pi))
    assert len(trace.times) == len(trace.median) == len(trace.quantile2) == len(trace.filament)
    return trace


# -------------------------------------------------------------- stopping times

@dataclass
class StoppingRecord:
    M0: int
    tau: float          # first t with M(rho_t) < M0 - 1 (inf if not hit)
    sigma: float        # first t with M^(2)(rho_t) > M0 (inf if not hit)
    eta: float
    i_fin: int
    hit_within_tstar: bool
    seed: int = 0
    kappa: float = 0.0
    delta: float = 0.0
    q: float = 0.0


class StoppingTracker:
    """Online bookkeeping of tau(M0), sigma(M0) and the staged construction
    (tau_i, sigma_i, i_fin, eta) from observed (t, median, quantile2) samples.

    Stage caps are analytic: if the quantile event does not occur before
    tau_i + t_star_delta(hat M_i), sigma_i equals that deadline exactly.
    """

    def __init__(self, M0: int, kappa: float, q: float, delta: float, alpha: float):
        self.M0 = M0
        self.kappa = kappa
        self.q = q
        self.delta = delta
        self.alpha = alpha
        self.levels, self.L = clamped_levels(M0, kappa, q)
        self.tau_M0 = math.inf
        self.sigma_M0 = math.inf
        self.stage = 0
        self.stage_start = 0.0  # tau_i of the current stage
        self.i_fin: int | None = None
        self.eta: float | None = None

    @property
    def done(self) -> bool:
        return self.eta is not None

    def _stage_deadline(self) -> float:
        return self.stage_start + t_star_delta(self.kappa, self.levels[self.stage], self.alpha, self.delta)

    def observe(self, t: float, median: int, quantile2: int) -> None:
        if math.isinf(self.tau_M0) and median < self.M0 - 1:
            self.tau_M0 = t
        if math.isinf(self.sigma_M0) and quantile2 > self.M0:
            self.sigma_M0 = t
        while not self.done:
            deadline = self._stage_deadline()
            # strict exceedance, consistent with sigma(M) = inf{t : M^(2) > M};
            # with >= the stage would fire immediately on annulus data
            sigma_event = quantile2 > self.levels[self.stage] or t >= deadline
            sigma_i = min(t, deadline) if sigma_event else None
            # next-level crossing tau_(i+1); at stage L only sigma_L matters
            if self.stage < self.L and median <= self.levels[self.stage + 1]:
                if sigma_i is None or not sigma_i < t:
                    # tau_(i+1) happens (weakly) first: advance the stage
                    self.stage += 1
                    self.stage_start = t
                    continue
            if sigma_i is not None:
                self.i_fin = self.stage
                self.eta = sigma_i
            return

    def record(self, seed: int = 0) -> StoppingRecord:
        tstar = t_star(self.kappa, self.M0, self.alpha)
        return StoppingRecord(
            M0=self.M0,
            tau=self.tau_M0,
            sigma=self.sigma_M0,
            eta=self.eta if self.eta is not None else math.inf,
            i_fin=self.i_fin if self.i_fin is not None else -1,
            hit_within_tstar=self.tau_M0 <= tstar,
            seed=seed,
            kappa=self.kappa,
            delta=self.delta,
            q=self.q,
        )


def wilson_interval(hits: int, n: int, z: float = 1.96):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


# -------------------------------------------------------------- initial data

def single_mode_field(grid: WaveGrid, m: int, amplitude: float = 1.0) -> SpectralField:
    """Conjugate pair at k = (m, 0)."""
    if m < 1 or m > grid.kmax_box:
        raise ValueError(f"mode {m} is not resolved on this grid")
    c = grid.zeros()
    c[m % grid.n, 0] = amplitude
    c[(-m) % grid.n, 0] = amplitude
    return SpectralField(grid, c)


def annulus_field(grid: WaveGrid, M0: int, rng: np.random.Generator) -> SpectralField:
    """Equal energy on the active modes with M0 - 1/2 < |k| <= M0, random phases.

    All shell members sit at or below M0 and above M0 - 1, which makes every
    spectral beta-quantile of the field exactly M0.
    """
    if M0 < 1:
        raise ValueError("annulus level must be a positive integer")
    g = grid
    mask = g.active & (g.ksq > (M0 - 0.5) ** 2) & (g.ksq <= M0 * M0)
    if not mask.any():
        raise ValueError(f"no active modes in the annulus at level {M0}")
    phases = rng.uniform(0.0, 2 * np.pi, size=(g.n, g.n))
    c = np.where(mask, np.exp(1j * phases), 0.0)
    c = hermitianize(c)
    c[~mask] = 0.0
    f = SpectralField(g, c)
    f.coeff /= sobolev_norm(f, 0.0)
    return f


# -------------------------------------------------------------- drift diagnostic

def ratio_drift_diagnostic(state: ScalarState, u: VectorField, M: float, h: float,
                           scheme: str = "euler"):
    """One-step finite difference of ||H_M rho||/||L_M rho|| against the
    drift bound M (||u||_inf [+ ||Delta u||_inf for lns]) (1 + ratio^2)."""

    def ratio(s):
        lo = sobolev_norm(project_low(s.pi, M), 0.0)
        if lo == 0.0:
            raise ValueError("ratio drift diagnostic needs a nonzero low-frequency part")
        return sobolev_norm(project_high(s.pi, M), 0.0) / lo

    r0 = ratio(state)
    r1 = ratio(scalar_step(state, u, h, scheme=scheme))
    lhs = (r1 - r0) / h
    unorm = velocity_max(u)
    if state.op_kind == "lns":
        du = VectorField(laplacian(u.comp1), laplacian(u.comp2))
        d1, d2 = to_physical(du.comp1), to_physical(du.comp2)
        unorm = unorm + float(np.sqrt(d1 * d1 + d2 * d2).max())
    bound = M * unorm * (1.0 + r0 * r0)
    return lhs, bound


# -------------------------------------------------------------- single-run experiment

def run_stopping_experiment(
    grid: WaveGrid,
    model: NoiseModel,
    kappa: float,
    op_kind: str,
    dt: float,
    M0: int,
    delta: float,
    q: float,
    seed: int,
    t_max: float | None = None,
    u0: FlowState | None = None,
    rng: np.random.Generator | None = None,
    burn_steps: int = 0,
    scheme: str = "euler",
    c_cfl: float = 0.5,
    record_every: int = 1,
):
    """Reference-path stopping experiment for one seed.

    One sequential stream per seed feeds (in order) the flow burn-in, the
    annulus data at level M0 (median checked), and the run noise; flow and
    scalar then co-evolve while tau/sigma/eta are tracked per the staged
    construction.  Returns (StoppingRecord, MedianTrace).
    """
    if not 0 < delta < 0.25:
        raise ValueError(f"delta must lie in (0, 1/4), got {delta}")
    if not q > 2:
        raise ValueError(f"q must exceed 2, got {q}")
    if M0 > grid.kmax_box / 2:
        raise ValueError(
            f"annulus level M0={M0} is not safely resolved (dealias cutoff {grid.kmax_box})"
        )
    if rng is None:
        rng = np.random.default_rng(seed)
    fl = u0 if u0 is not None else make_flow_state(SpectralField(grid, grid.zeros()))
    for _ in range(burn_steps):
        fl = sns_step(fl, model, dt, rng, c_cfl=c_cfl)
    fl = FlowState(w=fl.w, t=0.0, u=fl.u)
    rho0 = annulus_field(grid, M0, rng)
    st = make_scalar_state(rho0, op_kind, kappa)
    if spectral_quantile(st.pi, 1.0) != M0:
        raise ValueError(
            f"initial median {spectral_quantile(st.pi, 1.0)} != requested level {M0}"
        )
    tracker = StoppingTracker(M0, kappa, q, delta, model.alpha)
    trace = MedianTrace()
    record_median(trace, st)
    tracker.observe(0.0, trace.median[-1], trace.quantile2[-1])
    horizon = t_max if t_max is not None else 5.0 * t_star(kappa, M0, model.alpha)
    horizon = max(horizon, eta_cap(M0, kappa, q, delta, model.alpha))
    n_steps = int(math.ceil(horizon / dt))
    stepper = LeapfrogScalar(st) if scheme == "leapfrog" else None
    for i in range(n_steps):
        if scheme == "leapfrog":
            st = stepper.step(fl.u, dt, c_cfl=c_cfl)
        else:
            st = scalar_step(st, fl.u, dt, scheme=scheme, c_cfl=c_cfl)
        fl = sns_step(fl, model, dt, rng, c_cfl=c_cfl)
        if (i + 1) % record_every == 0:
            record_median(trace, st)
            tracker.observe(st.t, trace.median[-1], trace.quantile2[-1])
    return tracker.record(seed=seed), trace
