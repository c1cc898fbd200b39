"""Single-cell MU-MIMO downlink scenarios.

Users are dropped in a circular sector; each gets a log-distance pathloss with
lognormal shadowing, a tapped-delay-line Rayleigh channel whose taps evolve as an
AR(1) process with the Jakes correlation ``J0(2 pi f_D T_slot)``, and a noisy, one
slot old channel estimate when moving.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import j0

from .action_space import BranchActionTable, enumerate_actions
from .errors import ConfigError
from .link_layer import McsTable, rates_from_gains, cross_gains

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23
N_AVG_MC = 200
MIN_AVG_RATE = 1.0

SeedLike = int | Sequence[int]


def thermal_noise(bandwidth: float, noise_figure_db: float = 7.0, temperature: float = 290.0) -> float:
    return BOLTZMANN * temperature * bandwidth * 10.0 ** (noise_figure_db / 10.0)


@dataclass(frozen=True)
class EnvConfig:
    n_users: int = 4
    n_subbands: int = 10
    max_coscheduled: int = 2
    include_empty_action: bool = False
    subband_width: float = 360e3
    carrier_freq: float = 3.5e9
    slot_duration: float = 1e-3
    n_tx: int = 2
    n_rx: int = 1
    tx_power: float = 40.0
    noise_power: float | None = None  # None: thermal noise over one sub-band, 7 dB NF
    cell_radius: float = 500.0
    sector_angle: float = 65.0
    min_distance: float = 35.0
    buffer_min: float = 400
    buffer_max: float = float("inf")
    user_speed: float = 0.0
    snr_ce: float = float("inf")
    pathloss_exponent: float = 3.7
    shadowing_sigma: float = 8.0
    antenna_gain_db: float = 8.0
    n_taps: int = 4
    seed: int = 0
    mcs: McsTable = field(default_factory=McsTable)

    def __post_init__(self):
        if self.noise_power is None:
            object.__setattr__(self, "noise_power", thermal_noise(self.subband_width))
        self.validate()

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        for key in ("n_users", "n_subbands", "max_coscheduled", "n_tx", "n_rx", "n_taps"):
            if int(getattr(self, key)) < 1:
                bad(key, "must be >= 1")
        if self.max_coscheduled > self.n_users:
            bad("max_coscheduled", f"{self.max_coscheduled} > n_users={self.n_users}")
        for key in ("tx_power", "noise_power", "subband_width", "carrier_freq", "slot_duration", "cell_radius"):
            if not getattr(self, key) > 0:
                bad(key, "must be > 0")
        if not 0 <= self.min_distance <= self.cell_radius:
            bad("min_distance", "must lie in [0, cell_radius]")
        if not 0 < self.sector_angle <= 360:
            bad("sector_angle", "must lie in (0, 360]")
        if self.buffer_min < 0:
            bad("buffer_min", "must be >= 0")
        if self.buffer_min > self.buffer_max:
            bad("buffer_max", "must be >= buffer_min")
        if self.user_speed < 0:
            bad("user_speed", "must be >= 0")
        if self.shadowing_sigma < 0:
            bad("shadowing_sigma", "must be >= 0")

    @property
    def buffer_unbounded(self) -> bool:
        return not np.isfinite(self.buffer_max)

    @property
    def doppler(self) -> float:
        """Per-slot AR(1) coefficient of the channel taps."""
        f_d = self.user_speed * self.carrier_freq / SPEED_OF_LIGHT
        return float(j0(2.0 * np.pi * f_d * self.slot_duration))

    def action_table(self) -> BranchActionTable:
        return enumerate_actions(self.n_users, self.max_coscheduled, self.include_empty_action)


@dataclass(frozen=True)
class Scenario:
    config: EnvConfig
    seed: tuple[int, ...]
    user_positions: np.ndarray  # (N_u, 2) metres
    large_scale_gain: np.ndarray  # (N_u,)
    tap_coefficients: np.ndarray  # (N_u, N_rx, N_tx, L) at slot 0
    doppler_coeff: np.ndarray  # (N_u,)
    avg_rates: np.ndarray | None = None
    table: BranchActionTable | None = None

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.user_positions, axis=1)

    @property
    def channel_power_ref(self) -> float:
        """Expected squared channel norm averaged over users; feature normalizer."""
        c = self.config
        return float(np.mean(self.large_scale_gain) * c.n_rx * c.n_tx)


@dataclass(frozen=True)
class JointState:
    true_channel: np.ndarray  # (N_u, N_s, N_rx, N_tx)
    est_channel: np.ndarray
    buffers: np.ndarray  # (N_u,) bits, +inf when unbounded


def _seed_tuple(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _rng(seed: tuple[int, ...], *stream: int) -> np.random.Generator:
    return np.random.default_rng([*seed, *stream])


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    z = rng.standard_normal((2, *shape))
    return (z[0] + 1j * z[1]) / np.sqrt(2.0)


def pathloss_db(distance, config: EnvConfig):
    """Log-distance pathloss with a free-space 1 m intercept, net of antenna gain."""
    wavelength = SPEED_OF_LIGHT / config.carrier_freq
    pl0 = 20.0 * np.log10(4.0 * np.pi / wavelength)
    return pl0 + 10.0 * config.pathloss_exponent * np.log10(np.maximum(distance, 1.0)) - config.antenna_gain_db


def _drop_users(config: EnvConfig, rng: np.random.Generator, n: int):
    """Positions (n, N_u, 2) uniform over the sector area and large-scale gains (n, N_u)."""
    shape = (n, config.n_users)
    radius = np.sqrt(rng.uniform(config.min_distance**2, config.cell_radius**2, size=shape))
    half = np.deg2rad(config.sector_angle) / 2.0
    angle = rng.uniform(-half, half, size=shape)
    pos = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
    shadow = rng.normal(0.0, config.shadowing_sigma, size=shape)
    gain = 10.0 ** (-(pathloss_db(radius, config) + shadow) / 10.0)
    return pos, gain


def _draw_taps(config: EnvConfig, rng: np.random.Generator, gain: np.ndarray) -> np.ndarray:
    """Rayleigh taps (..., N_u, N_rx, N_tx, L) with expected element power ``gain``."""
    shape = (*gain.shape, config.n_rx, config.n_tx, config.n_taps)
    return np.sqrt(gain / config.n_taps)[..., None, None, None] * _complex_normal(rng, shape)


def new_scenario(config: EnvConfig, seed: SeedLike) -> Scenario:
    config.validate()
    seed_t = _seed_tuple(seed)
    rng = _rng(seed_t, 0)
    pos, gain = _drop_users(config, rng, 1)
    taps = _draw_taps(config, rng, gain[0])
    scenario = Scenario(
        config=config,
        seed=seed_t,
        user_positions=pos[0],
        large_scale_gain=gain[0],
        tap_coefficients=taps,
        doppler_coeff=np.full(config.n_users, config.doppler),
        table=config.action_table(),
    )
    return dataclasses.replace(scenario, avg_rates=compute_avg_rates(scenario))


def frequency_response(taps: np.ndarray, n_subbands: int) -> np.ndarray:
    """Map taps (..., N_u, N_rx, N_tx, L) to channels (..., N_u, N_s, N_rx, N_tx)."""
    n_taps = taps.shape[-1]
    j = np.arange(n_subbands)[:, None]
    l = np.arange(n_taps)[None, :]
    dft = np.exp(-2j * np.pi * j * l / n_subbands)  # (S, L)
    h = taps @ dft.T  # (..., U, R, T, S)
    return np.moveaxis(h, -1, -3)


def tap_trajectory(scenario: Scenario, n_slots: int) -> np.ndarray:
    """Tap coefficients for slots 0..n_slots-1, shape (n_slots, N_u, N_rx, N_tx, L).

    Innovations come from one dedicated stream, so the trajectory for ``n`` slots is a
    prefix of the trajectory for any longer horizon.
    """
    taps0 = scenario.tap_coefficients
    out = np.empty((n_slots, *taps0.shape), dtype=np.complex128)
    out[0] = taps0
    if n_slots == 1:
        return out
    rho = scenario.doppler_coeff[:, None, None, None]
    if np.all(rho == 1.0):
        out[1:] = taps0
        return out
    scale = np.sqrt(scenario.large_scale_gain / scenario.config.n_taps)[:, None, None, None]
    rng = _rng(scenario.seed, 1)
    keep = np.sqrt(np.maximum(1.0 - rho**2, 0.0))
    for t in range(1, n_slots):
        # one draw per slot keeps shorter horizons a prefix of longer ones
        out[t] = rho * out[t - 1] + keep * scale * _complex_normal(rng, taps0.shape)
    return out


def channel_at(scenario: Scenario, t: int) -> np.ndarray:
    if t < 0:
        raise ValueError("slot index must be >= 0")
    taps = tap_trajectory(scenario, t + 1)[t]
    return frequency_response(taps, scenario.config.n_subbands)


def draw_buffers(scenario: Scenario, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform integer buffers in [b_min, b_max]; +inf everywhere when unbounded."""
    cfg = scenario.config
    shape = (cfg.n_users,) if size is None else (*np.atleast_1d(size), cfg.n_users)
    if cfg.buffer_unbounded:
        return np.full(shape, np.inf)
    return rng.integers(int(cfg.buffer_min), int(cfg.buffer_max), size=shape, endpoint=True).astype(np.float64)


def estimation_noise_var(scenario: Scenario) -> np.ndarray:
    """Per-user, per-element estimation noise variance (zero for perfect estimation)."""
    snr = scenario.config.snr_ce
    if not np.isfinite(snr):
        return np.zeros(scenario.config.n_users)
    return scenario.large_scale_gain / 10.0 ** (snr / 10.0)


def observe(scenario: Scenario, t: int) -> JointState:
    """True channel at slot t and the estimate the scheduler sees.

    The estimate lags one slot when users move (clamped at slot 0) and carries
    additive complex Gaussian noise at the configured estimation SNR.
    """
    if t < 0:
        raise ValueError("slot index must be >= 0")
    cfg = scenario.config
    moving = bool(np.any(scenario.doppler_coeff != 1.0))
    taps = tap_trajectory(scenario, t + 1)
    true = frequency_response(taps[t], cfg.n_subbands)
    lag_t = max(t - 1, 0) if moving else t
    est = true if lag_t == t else frequency_response(taps[lag_t], cfg.n_subbands)
    rng = _rng(scenario.seed, 2, t)
    var = estimation_noise_var(scenario)
    if np.any(var > 0):
        noise = _complex_normal(rng, est.shape) * np.sqrt(var)[:, None, None, None]
        est = est + noise
    else:
        est = est.copy()
    buffers = draw_buffers(scenario, rng)
    return JointState(true_channel=true, est_channel=est, buffers=buffers)


def compute_avg_rates(scenario: Scenario, n_mc: int = N_AVG_MC) -> np.ndarray:
    """Average per-user rate under fresh fading and uniformly random allocations."""
    table = scenario.table if scenario.table is not None else scenario.config.action_table()
    rng = _rng(scenario.seed, 3)
    gain = np.asarray(scenario.large_scale_gain, dtype=np.float64)[None]
    return avg_rates_batch(scenario.config, table, gain, rng, n_mc)[0]


def avg_rates_batch(config: EnvConfig, table: BranchActionTable, gain: np.ndarray,
                    rng: np.random.Generator, n_mc: int = N_AVG_MC, chunk: int = 32) -> np.ndarray:
    """Monte-Carlo average rates for a batch of drops, gain (n, N_u) -> (n, N_u).

    Channels use the slow-fading gain with fresh small-scale fading and perfect
    estimates; allocations are uniform over the joint action set. Floored at 1 bit/s.
    """
    out = np.empty(gain.shape, dtype=np.float64)
    for start in range(0, gain.shape[0], chunk):
        g = gain[start: start + chunk]
        m = g.shape[0]
        taps = _draw_taps(config, rng, np.broadcast_to(g[:, None, :], (m, n_mc, g.shape[1])))
        h = frequency_response(taps, config.n_subbands)
        idx = rng.integers(0, table.n_actions, size=(m, n_mc, config.n_subbands))
        mask = table.indices_to_masks(idx)
        if config.buffer_unbounded:
            buffers = np.full((m, n_mc, config.n_users), np.inf)
        else:
            buffers = rng.integers(int(config.buffer_min), int(config.buffer_max),
                                   size=(m, n_mc, config.n_users), endpoint=True).astype(np.float64)
        rate, *_ = rates_from_gains(cross_gains(h, h), mask, buffers, config)
        out[start: start + m] = rate.mean(axis=1)
    return np.maximum(out, MIN_AVG_RATE)


@dataclass(frozen=True)
class StateBatch:
    """Independent drops observed at slot 1, stored as stacked arrays."""

    config: EnvConfig
    table: BranchActionTable
    large_scale_gain: np.ndarray  # (n, N_u)
    avg_rates: np.ndarray  # (n, N_u)
    true_channel: np.ndarray  # (n, N_u, N_s, N_rx, N_tx)
    est_channel: np.ndarray
    buffers: np.ndarray  # (n, N_u)
    next: "StateBatch | None" = None  # same drops one slot later, when requested

    def __len__(self) -> int:
        return self.buffers.shape[0]

    def state(self, i: int) -> JointState:
        return JointState(self.true_channel[i], self.est_channel[i], self.buffers[i])

    def scenario(self, i: int) -> Scenario:
        """Lightweight scenario view carrying what the reward and baselines need."""
        c = self.config
        return Scenario(
            config=c,
            seed=(),
            user_positions=np.zeros((c.n_users, 2)),
            large_scale_gain=self.large_scale_gain[i],
            tap_coefficients=np.zeros((c.n_users, c.n_rx, c.n_tx, c.n_taps), dtype=complex),
            doppler_coeff=np.full(c.n_users, c.doppler),
            avg_rates=self.avg_rates[i],
            table=self.table,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.true_channel, self.est_channel, self.buffers, self.avg_rates):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def sample_states(config: EnvConfig, seed: SeedLike, n: int, with_next: bool = False) -> StateBatch:
    """Draw ``n`` fresh drops and observe each at slot 1.

    Mirrors :func:`new_scenario` followed by :func:`observe` (one AR(1) step, one-slot
    estimate lag when moving, estimation noise, fresh buffers) in vectorized form.
    ``with_next`` also observes every drop at slot 2, for bootstrapped targets.
    """
    config.validate()
    seed_t = _seed_tuple(seed)
    rng = _rng(seed_t, 7)
    table = config.action_table()
    _, gain = _drop_users(config, rng, n)
    taps0 = _draw_taps(config, rng, gain)
    rho = config.doppler
    if rho == 1.0:
        taps1 = taps0
    else:
        taps1 = rho * taps0 + np.sqrt(max(1.0 - rho**2, 0.0)) * _draw_taps(config, rng, gain)
    true = frequency_response(taps1, config.n_subbands)
    est = frequency_response(taps0, config.n_subbands) if rho != 1.0 else true.copy()
    if np.isfinite(config.snr_ce):
        var = gain / 10.0 ** (config.snr_ce / 10.0)
        est = est + _complex_normal(rng, est.shape) * np.sqrt(var)[..., None, None, None]
    buffers = _draw_buffer_array(config, rng, n)
    avg = avg_rates_batch(config, table, gain, _rng(seed_t, 8))
    nxt = None
    if with_next:
        taps2 = taps1 if rho == 1.0 else rho * taps1 + np.sqrt(max(1.0 - rho**2, 0.0)) * _draw_taps(config, rng, gain)
        true2 = frequency_response(taps2, config.n_subbands)
        est2 = frequency_response(taps1, config.n_subbands) if rho != 1.0 else true2.copy()
        if np.isfinite(config.snr_ce):
            est2 = est2 + _complex_normal(rng, est2.shape) * np.sqrt(var)[..., None, None, None]
        nxt = StateBatch(config, table, gain, avg, true2, est2, _draw_buffer_array(config, rng, n))
    return StateBatch(config, table, gain, avg, true, est, buffers, nxt)


def _draw_buffer_array(config: EnvConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    if config.buffer_unbounded:
        return np.full((n, config.n_users), np.inf)
    return rng.integers(int(config.buffer_min), int(config.buffer_max),
                        size=(n, config.n_users), endpoint=True).astype(np.float64)
