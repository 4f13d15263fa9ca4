"""Experiment presets that turn the relaxation theory into measurements:
stream-function extraction, the layer-cake decreasing rearrangement and its
predicted limit profile, exponential decay-rate fitting near the uniform
shear equilibrium e1 = (1, 0), and velocity-relaxation tracking.

Clock convention for the near-e1 presets (stability and rearrangement): on
the unit torus the slowest linearized mode relaxes at rate (2 pi)^2, so time
horizons, fit windows and reported series use units of that relaxation time,
s = (2 pi)^2 t.  In these units the linearized decay rate of the slowest
mode is exactly 1.  The velocity-relaxation and topology presets use raw
simulation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .solver import InitialData, SimConfig, SolverState, run_simulation
from .spectral import (
    TWO_PI,
    Grid,
    SpectralScalar,
    SpectralVector,
    scalar_from_coeffs,
)

SLOW_MODE_RATE = TWO_PI**2  # linearized relaxation rate of the k1 = 1 modes


# ---------------------------------------------------------------------------
# Stream function (d = 2)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StreamFunction:
    """phi = phi_per + a1 x1 + a2 x2 with periodic zero-mean part phi_per.

    The affine part carries the mean field (a1 = mean B^2, a2 = -mean B^1);
    it is kept symbolic because phi is not periodic for fields near e1.
    """

    phi_per: SpectralScalar
    a1: float
    a2: float

    def samples(self) -> np.ndarray:
        g = self.phi_per.grid
        x1, x2 = g.sample_points
        return self.phi_per.samples() + self.a1 * x1 + self.a2 * x2


def stream_function(B: SpectralVector) -> StreamFunction:
    """Scalar potential with B = (-d2 phi, d1 phi); requires d = 2."""
    g = B.grid
    if g.d != 2:
        raise ValueError("stream function requires d = 2")
    mean = B.mean_vector()
    c1, c2 = B.components[0].coeffs, B.components[1].coeffs
    ik = [TWO_PI * 1j * m for m in g.deriv_mesh]
    curl2d = ik[0] * c2 - ik[1] * c1
    k2 = g.k_abs2
    phi = np.zeros(g.shape, dtype=np.complex128)
    nz = k2 > 0
    phi[nz] = -curl2d[nz] / (TWO_PI**2 * k2[nz])
    return StreamFunction(scalar_from_coeffs(g, phi), a1=float(mean[1]), a2=-float(mean[0]))


def perp_gradient(phi: StreamFunction) -> SpectralVector:
    """Recover B = (-d2 phi, d1 phi) including the affine contribution."""
    from .spectral import derivative, vector_from_coeffs

    g = phi.phi_per.grid
    b1 = -derivative(phi.phi_per, 1).coeffs
    b2 = derivative(phi.phi_per, 0).coeffs
    b1[(0,) * g.d] += -phi.a2
    b2[(0,) * g.d] += phi.a1
    return vector_from_coeffs(g, np.stack([b1, b2]), divergence_free=True)


# ---------------------------------------------------------------------------
# Decreasing rearrangement (layer-cake form)
# ---------------------------------------------------------------------------

def layer_cake_values(sorted_desc: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Discrete layer-cake evaluation sup{lambda : |{|phi|>lambda}| >= x2}.

    ``sorted_desc`` is the descending sort of all |phi| samples; the value at
    height x2 is the entry at rank floor(x2 * N).
    """
    n_total = len(sorted_desc)
    ranks = np.clip(np.floor(np.asarray(x2) * n_total).astype(int), 0, n_total - 1)
    return sorted_desc[ranks]


@dataclass(frozen=True)
class RearrangementProfile:
    """Monotone profile in x2 equimeasurable with |phi0|, and the shear field
    it generates."""

    x2_grid: np.ndarray
    phi_inf: np.ndarray
    B_inf: np.ndarray  # (n, 2): (-d phi_inf / d x2, 0)


def decreasing_rearrangement(phi0_samples: np.ndarray) -> RearrangementProfile:
    """Layer-cake decreasing rearrangement of |phi0| onto the x2 axis.

    phi_inf at x2 = (i + 1/2)/n is the corresponding rank of the descending
    sort of the n^2 samples; B_inf differences phi_inf (central in the
    interior, one-sided at the non-periodic endpoints).
    """
    samples = np.asarray(phi0_samples, dtype=float)
    n = samples.shape[-1]
    sorted_desc = np.sort(np.abs(samples).ravel())[::-1]
    x2 = (np.arange(n) + 0.5) / n
    phi_inf = layer_cake_values(sorted_desc, x2)
    h = 1.0 / n
    dphi = np.empty(n)
    dphi[1:-1] = (phi_inf[2:] - phi_inf[:-2]) / (2.0 * h)
    dphi[0] = (phi_inf[1] - phi_inf[0]) / h
    dphi[-1] = (phi_inf[-1] - phi_inf[-2]) / h
    B_inf = np.stack([-dphi, np.zeros(n)], axis=-1)
    return RearrangementProfile(x2_grid=x2, phi_inf=phi_inf, B_inf=B_inf)


# ---------------------------------------------------------------------------
# Decay fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    window: tuple[float, float]
    rate: float
    r2: float
    series: np.ndarray  # (N, 2) rows (t, value)


def decay_fit(series, window: tuple[float, float]) -> DecayFit:
    """Least squares of log(value) against t over the window; rate = -slope."""
    arr = np.asarray(series, dtype=float)
    t, v = arr[:, 0], arr[:, 1]
    mask = (t >= window[0]) & (t <= window[1])
    if mask.sum() < 2:
        raise ValueError("decay window contains fewer than two samples")
    if np.any(v[mask] <= 0):
        raise ValueError("decay window contains nonpositive values")
    tt, logv = t[mask], np.log(v[mask])
    slope, intercept = np.polyfit(tt, logv, 1)
    fitted = slope * tt + intercept
    ss_res = float(np.sum((logv - fitted) ** 2))
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return DecayFit(window=window, rate=float(-slope), r2=r2, series=arr)


# ---------------------------------------------------------------------------
# Spectral averages along x1 (the stability decomposition)
# ---------------------------------------------------------------------------

def x1_average_profile(f: SpectralScalar) -> np.ndarray:
    """(P0 f)(x2): keep the k1 = 0 modes and sample along x2."""
    return np.fft.ifft(f.coeffs[0, :], norm="forward").real


def perp_part_l2(B: SpectralVector) -> float:
    """||P_perp B||_{L^2}: energy in the k1 != 0 modes of both components."""
    total = 0.0
    for c in B.components:
        total += float(np.sum(np.abs(c.coeffs[1:, :]) ** 2))
    return math.sqrt(total)


def _stability_config(eta: float, n: int, t_end_phys: float, seed: int) -> SimConfig:
    grid = Grid(2, n)
    kcut = math.floor(grid.dealias_fraction * n / 2.0 + 1e-9)
    dt_stab = 2.5 / (SLOW_MODE_RATE * kcut**2)  # RK4 real-axis stability for d1^2
    return SimConfig(
        grid=grid,
        gamma=0.0,
        t_end=t_end_phys,
        initial_data=InitialData("e1_plus_perturbation", {"eta": eta, "kmax": 8}),
        dt_max=dt_stab,
        output_every=t_end_phys / 120.0,
        rng_seed=seed,
    )


@dataclass
class StabilityResult:
    fit: DecayFit
    eta: float
    series: np.ndarray          # (N, 3): s, ||P_perp(B - e1)||, ||P0(B^1 - 1)||
    max_deviation_l2: float     # max_t ||B - e1||_{L^2}
    max_p0_b2: float            # max_t ||P0 B^2||_inf
    records: list = field(default_factory=list)
    final_state: SolverState | None = None


def preset_bfv_stability(
    eta: float = 0.01, n: int = 64, T: float = 10.0, seed: int = 0
) -> StabilityResult:
    """Near-e1 stability run at gamma = 0: perturbation decay measurement.

    T and the [2, min(10, T)] fit window are in slow-mode relaxation units
    (see module docstring).  Measures the L^2 decay of the k1 != 0 part, the
    theorem invariants ||B - e1|| <= eta and P0 B^2 = 0, and fits the decay
    rate, which the linearization predicts to be about 1.
    """
    t_phys = T / SLOW_MODE_RATE
    config = _stability_config(eta, n, t_phys, seed)
    rows = []
    max_dev = 0.0
    max_p0b2 = 0.0
    records: list = []
    final = {}

    def on_snapshot(state: SolverState):
        nonlocal max_dev, max_p0b2
        B = state.B
        s = state.t * SLOW_MODE_RATE
        dev_sq = sum(float(np.sum(np.abs(c.coeffs) ** 2)) for c in B.components)
        dev_sq -= 2.0 * float(B.components[0].coeffs[0, 0].real) - 1.0
        max_dev = max(max_dev, math.sqrt(max(dev_sq, 0.0)))
        p0_b2 = float(np.abs(x1_average_profile(B.components[1])).max())
        max_p0b2 = max(max_p0b2, p0_b2)
        c1 = B.components[0].coeffs[0, :].copy()
        c1[0] -= 1.0
        p0_b1 = math.sqrt(float(np.sum(np.abs(c1) ** 2)))
        rows.append((s, perp_part_l2(B), p0_b1))
        final["state"] = state

    run_simulation(config, on_record=records.append, on_snapshot=on_snapshot)
    series = np.array(rows)
    fit = decay_fit(series[:, :2], (2.0, min(10.0, T)))
    return StabilityResult(
        fit=fit,
        eta=eta,
        series=series,
        max_deviation_l2=max_dev,
        max_p0_b2=max_p0b2,
        records=records,
        final_state=final.get("state"),
    )


@dataclass
class RearrangementResult:
    rel_error: float            # relative L^2 gap between profile(T) and the rearrangement
    drift_half: float           # level-set distribution drift at T/2
    drift_max: float            # worst drift over the run
    x2: np.ndarray
    measured: np.ndarray        # mean-aligned horizontal average of phi(T)
    predicted: np.ndarray       # mean-aligned layer-cake profile
    profile: RearrangementProfile
    records: list = field(default_factory=list)


def preset_rearrangement(
    eta: float = 0.01, n: int = 64, T: float = 40.0, seed: int = 0
) -> RearrangementResult:
    """Continue the stability preset and compare phi(T) to the predicted
    rearrangement limit.

    The evolved profile is the x1 average of the full stream function
    (P0 phi0 = -x2 by the gauge of :func:`stream_function`); it is compared
    with the layer-cake profile after mean alignment, the stream function
    being defined modulo an additive constant.  Also reports the level-set
    distribution drift of phi, which transport should preserve.
    """
    t_phys = T / SLOW_MODE_RATE
    config = _stability_config(eta, n, t_phys, seed)
    grid = config.grid
    x2_nodes = np.arange(n) / n

    state_ref: dict = {}
    drifts = []

    def on_snapshot(state: SolverState):
        phi = stream_function(state.B)
        samp = phi.samples()
        if "lambdas" not in state_ref:
            state_ref["lambdas"] = analysis.quantile_grid(samp)
            state_ref["mu0"] = analysis.levelset_distribution(samp, state_ref["lambdas"])
            state_ref["phi0"] = samp
        mu = analysis.levelset_distribution(samp, state_ref["lambdas"])
        drifts.append((state.t * SLOW_MODE_RATE, float(np.abs(mu - state_ref["mu0"]).max())))
        state_ref["phi_final"] = phi

    records: list = []
    run_simulation(config, on_record=records.append, on_snapshot=on_snapshot)

    profile = decreasing_rearrangement(state_ref["phi0"])
    sorted_desc = np.sort(np.abs(state_ref["phi0"]).ravel())[::-1]
    predicted = layer_cake_values(sorted_desc, x2_nodes)

    phiT = state_ref["phi_final"]
    mean_x1 = float(np.mean(np.arange(n) / n))
    measured = x1_average_profile(phiT.phi_per) + phiT.a2 * x2_nodes + phiT.a1 * mean_x1

    measured = measured - measured.mean()
    predicted = predicted - predicted.mean()
    rel_error = float(
        np.linalg.norm(measured - predicted) / max(np.linalg.norm(predicted), 1e-300)
    )

    drift_arr = np.array(drifts)
    half = drift_arr[drift_arr[:, 0] <= T / 2.0 + 1e-9]
    return RearrangementResult(
        rel_error=rel_error,
        drift_half=float(half[-1, 1]) if len(half) else 0.0,
        drift_max=float(drift_arr[:, 1].max()),
        x2=x2_nodes,
        measured=measured,
        predicted=predicted,
        profile=profile,
        records=records,
    )


@dataclass
class VelocityRelaxationResult:
    table: dict  # alpha -> dict(initial, final, ratio, monotone_fraction)
    records: list = field(default_factory=list)


def preset_velocity_relaxation(
    gamma: float = 2.5,
    alpha_list: tuple[float, ...] = (1.0,),
    n: int = 64,
    T: float = 20.0,
    seed: int = 0,
    amplitude: float = 4.0,
    kmax: int = 8,
    d: int = 2,
) -> VelocityRelaxationResult:
    """Track ||u(t)||_{H^alpha} on random band-limited data.

    Meaningful for gamma above the critical exponent (alpha < 2 gamma - gamma_c)
    or at the critical value (alpha < gamma_c); other alphas are still
    measured, with a warning.  Amplitude sets the nonlinear relaxation speed
    (the system is invariant under B -> cB, t -> t/c^2).
    """
    import warnings as _warnings

    from .solver import gamma_critical

    gc = gamma_critical(d)
    for alpha in alpha_list:
        in_range = (gamma > gc and alpha < 2 * gamma - gc) or (
            gamma == gc and alpha < gc
        )
        if not in_range:
            _warnings.warn(
                f"alpha={alpha:g} outside the guaranteed relaxation range for "
                f"gamma={gamma:g}; measuring anyway",
                stacklevel=2,
            )
    config = SimConfig(
        grid=Grid(d, n),
        gamma=gamma,
        t_end=T,
        initial_data=InitialData(
            "random_bandlimited", {"kmax": kmax, "amplitude": amplitude}
        ),
        output_every=T / 100.0,
        diagnostics_alpha_list=tuple(alpha_list),
        rng_seed=seed,
    )
    records: list = []
    run_simulation(config, on_record=records.append)
    table = {}
    for alpha in alpha_list:
        vals = np.array([r.u_alpha_norms[alpha] for r in records])
        diffs = np.diff(vals)
        table[alpha] = {
            "initial": float(vals[0]),
            "final": float(vals[-1]),
            "ratio": float(vals[-1] / vals[0]) if vals[0] > 0 else math.nan,
            "monotone_fraction": float(np.mean(diffs <= 0)) if len(diffs) else math.nan,
        }
    return VelocityRelaxationResult(table=table, records=records)


@dataclass
class TopologyWitnessResult:
    helicity_initial: float
    helicity_final: float
    drift: float  # max relative helicity deviation over the run
    records: list = field(default_factory=list)


def preset_topology_witness(
    gamma: float = 3.0,
    n: int = 32,
    T: float = 1.0,
    seed: int = 0,
    amplitude: float = 3.0,
    eta: float = 0.05,
    dt_fixed: float | None = None,
) -> TopologyWitnessResult:
    """Helicity conservation witness on a perturbed Beltrami (ABC-type) field.

    The unperturbed ABC field is a curl eigenfield, hence an exact steady
    state; a small seeded divergence-free perturbation switches the dynamics
    on so the drift measures real transport, not a fixed point.
    """
    config = SimConfig(
        grid=Grid(3, n),
        gamma=gamma,
        t_end=T,
        initial_data=InitialData("abc", {"amplitude": amplitude, "eta": eta}),
        output_every=T / 20.0,
        dt_fixed=dt_fixed,
        rng_seed=seed,
    )
    records: list = []
    run_simulation(config, on_record=records.append)
    h = np.array([r.helicity for r in records])
    h0 = h[0]
    drift = float(np.abs(h - h0).max() / abs(h0))
    return TopologyWitnessResult(
        helicity_initial=float(h0),
        helicity_final=float(h[-1]),
        drift=drift,
        records=records,
    )
