"""SINR, link adaptation, per-user rates and the proportional-fair reward.

All array routines broadcast over leading batch dimensions so that one call can
score a batch of states, or every candidate allocation of a single state.

Shape conventions
-----------------
channel : (..., N_u, N_s, N_rx, N_tx) complex
gains   : (..., N_s, N_u, N_u) real, ``gains[..., j, k, m]`` is the power user k
          receives on sub-band j through the precoder of user m
mask    : (..., N_s, N_u) bool, user k is scheduled on sub-band j
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .action_space import ScheduleAction


@dataclass(frozen=True)
class McsTable:
    """Truncated-Shannon MCS ladder with a logistic BLEP curve per level."""

    thresholds_db: tuple[float, ...] = tuple(float(x) for x in range(-6, 23, 2))
    efficiencies: tuple[float, ...] = ()
    blep_slope: float = 2.0
    target_bler: float = 0.1

    def __post_init__(self):
        if not self.efficiencies:
            eff = tuple(
                min(0.8 * float(np.log2(1.0 + 10.0 ** (t / 10.0))), 7.4) for t in self.thresholds_db
            )
            object.__setattr__(self, "efficiencies", eff)
        thr = np.asarray(self.thresholds_db)
        eff = np.asarray(self.efficiencies)
        if thr.shape != eff.shape or thr.size == 0:
            raise ValueError("thresholds and efficiencies must have equal nonzero length")
        if np.any(np.diff(thr) <= 0) or np.any(np.diff(eff) <= 0):
            raise ValueError("MCS thresholds and efficiencies must be strictly increasing")
        if not 0.0 < self.target_bler < 1.0:
            raise ValueError("target_bler must lie in (0, 1)")

    @property
    def n_levels(self) -> int:
        return len(self.thresholds_db)

    def blep(self, sinr_db, level=None):
        """Logistic block error probability; all levels when ``level`` is None."""
        sinr_db = np.asarray(sinr_db, dtype=np.float64)
        thr = np.asarray(self.thresholds_db)
        if level is None:
            x = self.blep_slope * (sinr_db[..., None] - thr)
        else:
            x = self.blep_slope * (sinr_db - thr[np.asarray(level)])
        return 0.5 * (1.0 - np.tanh(0.5 * x))


@dataclass
class UserReport:
    allocated_subbands: tuple[int, ...]
    sinr_per_subband: np.ndarray
    effective_sinr: float
    mcs_index: int
    tbs: int
    blep: float
    rate: float
    avg_rate: float


@dataclass
class RewardBreakdown:
    users: list[UserReport]
    reward: float
    nu: float

    @property
    def rates(self) -> np.ndarray:
        return np.array([u.rate for u in self.users])


def mrt_precoder(h) -> np.ndarray:
    """Matched-filter precoder ``conj(h)/||h||`` for a length-N_tx channel row."""
    h = np.asarray(h, dtype=np.complex128)
    norm = np.linalg.norm(h)
    if norm == 0.0:
        w = np.zeros_like(h)
        w[0] = 1.0
        return w
    return np.conj(h) / norm


def precoders(est_channel: np.ndarray) -> np.ndarray:
    """Unit-norm transmit precoders, shape (..., N_u, N_s, N_tx).

    For a single receive antenna this is :func:`mrt_precoder`; with several it is the
    dominant right singular vector, which reduces to the same thing.
    """
    est = np.asarray(est_channel)
    if est.shape[-2] == 1:
        h = est[..., 0, :]
        norm = np.linalg.norm(h, axis=-1, keepdims=True)
        fallback = np.zeros_like(h)
        fallback[..., 0] = 1.0
        safe = np.where(norm > 0, norm, 1.0)
        return np.where(norm > 0, np.conj(h) / safe, fallback)
    _, _, vh = np.linalg.svd(est)
    return np.conj(vh[..., 0, :])


def cross_gains(true_channel: np.ndarray, est_channel: np.ndarray) -> np.ndarray:
    """Received power of every (victim, precoder) pair, shape (..., N_s, N_u, N_u).

    Precoders come from the estimate, propagation from the true channel. With more
    than one receive antenna the victim applies maximum-ratio combining matched to its
    own precoded true channel.
    """
    w = precoders(est_channel)  # (..., M, S, T)
    h = np.asarray(true_channel)  # (..., K, S, R, T)
    w_s = np.swapaxes(w, -3, -2)  # (..., S, M, T)
    if h.shape[-2] == 1:
        h_s = np.swapaxes(h[..., 0, :], -3, -2)  # (..., S, K, T)
        y = h_s @ np.swapaxes(w_s, -1, -2)  # (..., S, K, M)
        return y.real**2 + y.imag**2
    # y[..., s, k, m, r] = sum_t H[k, s, r, t] w[m, s, t]
    y = np.einsum("...ksrt,...smt->...skmr", h, w_s)
    own = np.diagonal(y, axis1=-3, axis2=-2)  # (..., S, R, K)
    own = np.moveaxis(own, -1, -2)  # (..., S, K, R)
    nrm = np.linalg.norm(own, axis=-1, keepdims=True)
    u = np.where(nrm > 0, own / np.where(nrm > 0, nrm, 1.0), 0.0)
    return np.abs(np.einsum("...skr,...skmr->...skm", np.conj(u), y)) ** 2


def sinr_from_gains(gains: np.ndarray, mask: np.ndarray, tx_power: float, noise_power: float) -> np.ndarray:
    """Linear SINR per (..., N_u, N_s); zero where the user is not scheduled.

    Power per sub-band is tx_power / N_s, split equally among co-scheduled users.
    """
    mask = np.asarray(mask, dtype=bool)
    n_sub = mask.shape[-2]
    count = mask.sum(axis=-1, keepdims=True)  # (..., S, 1)
    p = np.where(count > 0, (tx_power / n_sub) / np.maximum(count, 1), 0.0)
    m = mask.astype(np.float64)
    diag = np.diagonal(gains, axis1=-2, axis2=-1)  # (..., S, K)
    total = np.einsum("...skm,...sm->...sk", gains, m)
    interf = total - diag * m
    sinr = p * diag / (noise_power + p * interf)
    sinr = np.where(mask, sinr, 0.0)
    return np.swapaxes(sinr, -1, -2)


def compute_sinr(true_channel, est_channel, allocation, tx_power, noise_power) -> np.ndarray:
    """SINR matrix (N_u, N_s) for one state; ``allocation`` is a list of per-sub-band subsets."""
    true_channel = np.asarray(true_channel)
    n_users, n_sub = true_channel.shape[:2]
    mask = np.zeros((n_sub, n_users), dtype=bool)
    for j, subset in enumerate(allocation):
        mask[j, list(subset)] = True
    return sinr_from_gains(cross_gains(true_channel, est_channel), mask, tx_power, noise_power)


@dataclass
class LinkResult:
    """Vectorized link adaptation output, each of shape (..., N_u)."""

    n_alloc: np.ndarray
    effective_sinr: np.ndarray
    mcs_index: np.ndarray
    blep: np.ndarray
    efficiency: np.ndarray


def link_adapt_batch(sinr: np.ndarray, alloc: np.ndarray, table: McsTable) -> LinkResult:
    """Capacity-domain effective SINR, MCS choice and BLEP for (..., N_u, N_s) inputs."""
    alloc = np.asarray(alloc, dtype=bool)
    n_alloc = alloc.sum(axis=-1)
    log_cap = np.where(alloc, np.log1p(np.maximum(sinr, 0.0)), 0.0).sum(axis=-1)
    eff_sinr = np.expm1(log_cap / np.maximum(n_alloc, 1))
    with np.errstate(divide="ignore"):
        sinr_db = 10.0 * np.log10(eff_sinr)
    bleps = table.blep(sinr_db)  # (..., U, L)
    ok = bleps <= table.target_bler
    levels = np.arange(table.n_levels)
    mcs = np.where(ok, levels, -1).max(axis=-1)
    mcs = np.maximum(mcs, 0)
    blep = np.take_along_axis(bleps, mcs[..., None], axis=-1)[..., 0]
    scheduled = n_alloc > 0
    eff = np.asarray(table.efficiencies)[mcs]
    return LinkResult(
        n_alloc=n_alloc,
        effective_sinr=np.where(scheduled, eff_sinr, 0.0),
        mcs_index=np.where(scheduled, mcs, 0),
        blep=np.where(scheduled, blep, 0.0),
        efficiency=np.where(scheduled, eff, 0.0),
    )


def link_adapt(sinr_per_subband, table: McsTable):
    """Link adaptation for one user over its allocated sub-bands.

    Returns ``(mcs_index, effective_sinr, bits_per_hz_s, blep)``, or ``None`` for an
    empty allocation (no transmission).
    """
    s = np.asarray(sinr_per_subband, dtype=np.float64).ravel()
    if s.size == 0:
        return None
    res = link_adapt_batch(s[None, :], np.ones((1, s.size), dtype=bool), table)
    return int(res.mcs_index[0]), float(res.effective_sinr[0]), float(res.efficiency[0]), float(res.blep[0])


def transport_block_bits(efficiency, n_subbands, subband_width: float, slot: float) -> np.ndarray:
    return np.floor(np.asarray(efficiency) * subband_width * slot * np.asarray(n_subbands))


def user_rate(tbs, blep, buffer, slot: float):
    """Delivered rate in bit/s: ``(1 - blep) * min(tbs, buffer) / slot``."""
    return (1.0 - np.asarray(blep)) * np.minimum(tbs, buffer) / slot


def rates_from_gains(gains, mask, buffers, cfg):
    """Per-user rates (..., N_u) plus the intermediate SINR and link results."""
    sinr = sinr_from_gains(gains, mask, cfg.tx_power, cfg.noise_power)
    alloc = np.swapaxes(np.asarray(mask, dtype=bool), -1, -2)
    link = link_adapt_batch(sinr, alloc, cfg.mcs)
    tbs = transport_block_bits(link.efficiency, link.n_alloc, cfg.subband_width, cfg.slot_duration)
    rate = user_rate(tbs, link.blep, buffers, cfg.slot_duration)
    return rate, sinr, link, tbs


def pf_value(rates, avg_rates, nu: float):
    """``nu * sum_k R_k / avg_k`` over the last axis."""
    return nu * np.sum(np.asarray(rates) / np.asarray(avg_rates), axis=-1)


def batch_rewards(true_channel, est_channel, buffers, avg_rates, mask, cfg) -> np.ndarray:
    """PF rewards for batched states and masks; leading dims broadcast."""
    gains = cross_gains(true_channel, est_channel)
    rate, *_ = rates_from_gains(gains, mask, np.asarray(buffers)[..., :], cfg)
    return pf_value(rate, avg_rates, 1.0 / cfg.n_users)


def pf_reward(state, action: ScheduleAction, scenario) -> RewardBreakdown:
    """Full reward pipeline for one state and joint action, with per-user detail."""
    cfg = scenario.config
    table = scenario.table
    mask = table.indices_to_masks(action.as_array())  # (S, U)
    gains = cross_gains(state.true_channel, state.est_channel)
    rate, sinr, link, tbs = rates_from_gains(gains, mask, state.buffers, cfg)
    nu = 1.0 / cfg.n_users
    avg = np.asarray(scenario.avg_rates)
    users = []
    for k in range(cfg.n_users):
        subs = tuple(int(j) for j in np.flatnonzero(mask[:, k]))
        users.append(
            UserReport(
                allocated_subbands=subs,
                sinr_per_subband=sinr[k],
                effective_sinr=float(link.effective_sinr[k]),
                mcs_index=int(link.mcs_index[k]),
                tbs=int(tbs[k]),
                blep=float(link.blep[k]),
                rate=float(rate[k]),
                avg_rate=float(avg[k]),
            )
        )
    return RewardBreakdown(users=users, reward=float(pf_value(rate, avg, nu)), nu=nu)
