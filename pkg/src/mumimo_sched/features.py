"""Per-sub-band input features built from the estimated channel and buffers.

For sub-band d the feature vector has one block of ``2 + 3 * N_u`` values per user k:
normalized buffer, normalized channel power, then for every user m (self included)
the triple (inner-product magnitude, Hermitian angle, pseudo angle) of the pair (k, m).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env_model import pathloss_db
from .errors import ShapeError

UNBOUNDED_BUFFER_REF = 4000.0
POWER_CLAMP_DECADES = 3.0
MAGNITUDE_CAP = 10.0


def n_features_per_user(n_users: int) -> int:
    return 2 + 3 * n_users


def feature_size(n_users: int) -> int:
    return n_users * n_features_per_user(n_users)


@dataclass(frozen=True)
class Normalizer:
    buffer_ref: float
    power_ref: float

    @classmethod
    def for_config(cls, config) -> "Normalizer":
        b_ref = UNBOUNDED_BUFFER_REF if not np.isfinite(config.buffer_max) else float(config.buffer_max)
        gain = 10.0 ** (-pathloss_db(config.cell_radius / 2.0, config) / 10.0)
        return cls(buffer_ref=b_ref, power_ref=float(gain * config.n_rx * config.n_tx))


def _pseudo_angle(c):
    ang = np.angle(c)
    return np.where(ang <= -np.pi, np.pi, ang)


def pairwise_features(h_k, h_m, scale: float = 1.0) -> tuple[float, float, float]:
    """(magnitude, Hermitian angle, pseudo angle) of two channel vectors."""
    h_k = np.asarray(h_k, dtype=np.complex128).ravel()
    h_m = np.asarray(h_m, dtype=np.complex128).ravel()
    if h_k.shape != h_m.shape:
        raise ShapeError(f"channel vectors differ in length: {h_k.size} vs {h_m.size}")
    nk, nm = np.linalg.norm(h_k), np.linalg.norm(h_m)
    if nk == 0.0 or nm == 0.0:
        return 0.0, np.pi / 2.0, 0.0
    c = np.vdot(h_k, h_m)
    cos = np.clip(abs(c) / (nk * nm), 0.0, 1.0)
    return float(abs(c) * scale), float(np.arccos(cos)), float(_pseudo_angle(c))


def batch_features(est_channel: np.ndarray, buffers: np.ndarray, norm: Normalizer, dtype=np.float32) -> np.ndarray:
    """Features for (..., N_u, N_s, N_rx, N_tx) channels -> (..., N_s, N_u*(2+3N_u))."""
    h = np.asarray(est_channel)
    *lead, n_u, n_s, n_rx, n_tx = h.shape
    h = h.reshape(*lead, n_u, n_s, n_rx * n_tx)
    c = np.einsum("...kse,...mse->...skm", np.conj(h), h)  # (..., S, K, M)
    power = np.real(np.diagonal(c, axis1=-2, axis2=-1))  # (..., S, K)
    norms = np.sqrt(np.maximum(power, 0.0))
    mag = np.abs(c)
    denom = norms[..., :, None] * norms[..., None, :]
    zero = denom == 0.0
    cos = np.clip(mag / np.where(zero, 1.0, denom), 0.0, 1.0)
    herm = np.where(zero, np.pi / 2.0, np.arccos(cos))
    pseudo = np.where(zero, 0.0, _pseudo_angle(c))
    mag_f = np.minimum(np.log1p(np.where(zero, 0.0, mag) / norm.power_ref), MAGNITUDE_CAP)
    with np.errstate(divide="ignore"):
        p_db = np.log10(power / norm.power_ref)
    p_f = np.clip(p_db, -POWER_CLAMP_DECADES, POWER_CLAMP_DECADES) / POWER_CLAMP_DECADES
    b = np.clip(np.asarray(buffers, dtype=np.float64) / norm.buffer_ref, 0.0, 1.0)  # (..., K)
    b = np.broadcast_to(b[..., None, :], p_f.shape)
    triples = np.stack([mag_f, herm, pseudo], axis=-1).reshape(*mag_f.shape[:-1], 3 * n_u)
    per_user = np.concatenate([b[..., None], p_f[..., None], triples], axis=-1)
    return per_user.reshape(*lead, n_s, n_u * (2 + 3 * n_u)).astype(dtype)


def state_features(state, norm: Normalizer, dtype=np.float32) -> np.ndarray:
    """(N_s, F) features of one :class:`JointState`; only the estimate is read."""
    return batch_features(state.est_channel, state.buffers, norm, dtype)


def subband_features(state, d: int, norm: Normalizer, dtype=np.float32) -> np.ndarray:
    n_s = state.est_channel.shape[1]
    if not 0 <= d < n_s:
        raise IndexError(f"sub-band {d} outside [0, {n_s})")
    return state_features(state, norm, dtype)[d]
