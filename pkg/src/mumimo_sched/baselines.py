"""Non-learned schedulers: greedy marginal-utility baseline, random, and exhaustive oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .action_space import (
    BranchActionTable,
    ScheduleAction,
    encode,
    joint_action_array,
)
from .link_layer import cross_gains, link_adapt_batch, pf_value, rates_from_gains, transport_block_bits

ORACLE_CHUNK = 1 << 15


@dataclass
class BaselineState:
    """Allocation bookkeeping: available sub-bands and the user/sub-band cross-reference."""

    n_users: int
    n_subbands: int
    available: set[int] = field(default_factory=set)
    subbands_of: list[set[int]] = field(default_factory=list)  # I_s,k
    users_on: list[set[int]] = field(default_factory=list)  # I_u,j

    @classmethod
    def empty(cls, n_users: int, n_subbands: int) -> "BaselineState":
        return cls(
            n_users,
            n_subbands,
            set(range(n_subbands)),
            [set() for _ in range(n_users)],
            [set() for _ in range(n_subbands)],
        )

    def allocate(self, k: int, j: int) -> None:
        self.subbands_of[k].add(j)
        self.users_on[j].add(k)

    def consistent(self) -> bool:
        return all(
            (j in self.subbands_of[k]) == (k in self.users_on[j])
            for k in range(self.n_users)
            for j in range(self.n_subbands)
        )


def pftf_utility(current, candidate, rates_k, avg_rate: float, buffer: float, slot: float) -> float:
    """Proportional-fair time-frequency utility of user k.

    ``current`` is the set of sub-bands already given to the user, ``candidate`` the
    sub-band being considered (``None`` for the utility of the current set alone) and
    ``rates_k`` maps sub-band -> rate. The utility drops to zero once the bits already
    scheduled exceed the buffer.
    """
    served = sum(rates_k[j] for j in current)
    if served * slot > buffer:
        return 0.0
    if candidate is None and not current:
        return 0.0
    num = served + (rates_k[candidate] if candidate is not None else 0.0)
    return num / (avg_rate + served)


def _single_subband_rate(gains_j, users, k, buffer, cfg) -> float:
    """Rate of user k alone on one sub-band shared with ``users`` (k included)."""
    users = sorted(users)
    p = cfg.tx_power / cfg.n_subbands / len(users)
    interf = sum(gains_j[k, m] for m in users if m != k)
    sinr = p * gains_j[k, k] / (cfg.noise_power + p * interf)
    link = link_adapt_batch(np.array([[sinr]]), np.ones((1, 1), dtype=bool), cfg.mcs)
    tbs = transport_block_bits(link.efficiency[0], 1, cfg.subband_width, cfg.slot_duration)
    return float((1.0 - link.blep[0]) * min(tbs, buffer) / cfg.slot_duration)


def traditional_allocation(state, scenario, trace: list | None = None) -> BaselineState:
    """Greedy marginal-utility allocation on the estimated channel.

    Each round scores every (user, sub-band) pair with spare capacity by the gain in
    the user's utility, allocates the best pair if the gain is positive and otherwise
    retires that sub-band. Ties go to the lowest (user, sub-band). When ``trace`` is a
    list, one ``(k, j, gain, allocated)`` tuple per round is appended.
    """
    cfg = scenario.config
    n_u, n_s, cap = cfg.n_users, cfg.n_subbands, cfg.max_coscheduled
    gains = cross_gains(state.est_channel, state.est_channel)  # (S, K, M)
    buffers = np.asarray(state.buffers, dtype=np.float64)
    avg = np.asarray(scenario.avg_rates, dtype=np.float64)
    bs = BaselineState.empty(n_u, n_s)
    # rate of user k on sub-band j with its current co-scheduled set
    held = [dict() for _ in range(n_u)]
    while bs.available:
        lam = np.full((n_u, n_s), -np.inf)
        for j in sorted(bs.available):
            if len(bs.users_on[j]) >= cap:
                continue
            for k in range(n_u):
                if k in bs.users_on[j]:
                    continue
                rates_k = dict(held[k])
                rates_k[j] = _single_subband_rate(gains[j], bs.users_on[j] | {k}, k, buffers[k], cfg)
                cur = bs.subbands_of[k]
                u_new = pftf_utility(cur, j, rates_k, avg[k], buffers[k], cfg.slot_duration)
                u_old = pftf_utility(cur, None, rates_k, avg[k], buffers[k], cfg.slot_duration)
                lam[k, j] = u_new - u_old
        if not np.isfinite(lam).any():
            break
        k_star, j_star = np.unravel_index(int(np.argmax(lam)), lam.shape)
        k_star, j_star = int(k_star), int(j_star)
        best = float(lam[k_star, j_star])
        if best > 0.0:
            bs.allocate(k_star, j_star)
            for m in bs.users_on[j_star]:
                held[m][j_star] = _single_subband_rate(gains[j_star], bs.users_on[j_star], m, buffers[m], cfg)
            if len(bs.users_on[j_star]) >= cap:
                bs.available.discard(j_star)
        else:
            bs.available.discard(j_star)
        if trace is not None:
            trace.append((k_star, j_star, best, best > 0.0))
    return bs


def traditional_schedule(state, scenario) -> ScheduleAction:
    bs = traditional_allocation(state, scenario)
    return encode([sorted(u) for u in bs.users_on], scenario.table)


def random_schedule(table: BranchActionTable, n_subbands: int, rng: np.random.Generator) -> ScheduleAction:
    return ScheduleAction.from_array(rng.integers(0, table.n_actions, size=n_subbands))


def all_joint_rewards(state, scenario, actions: np.ndarray | None = None) -> np.ndarray:
    """PF reward of every joint action (rows of ``actions``; all of them by default)."""
    cfg = scenario.config
    table = scenario.table
    if actions is None:
        actions = joint_action_array(table, cfg.n_subbands)
    gains = cross_gains(state.true_channel, state.est_channel)
    nu = 1.0 / cfg.n_users
    out = np.empty(len(actions))
    for start in range(0, len(actions), ORACLE_CHUNK):
        chunk = actions[start: start + ORACLE_CHUNK]
        mask = table.indices_to_masks(chunk)
        rate, *_ = rates_from_gains(gains, mask, state.buffers, cfg)
        out[start: start + len(chunk)] = pf_value(rate, scenario.avg_rates, nu)
    return out


def oracle_schedule(state, scenario, table: BranchActionTable | None = None) -> tuple[ScheduleAction, float]:
    """Exhaustive maximizer of the PF reward; first maximizer in enumeration order."""
    if table is not None and table is not scenario.table:
        import dataclasses

        scenario = dataclasses.replace(scenario, table=table)
    actions = joint_action_array(scenario.table, scenario.config.n_subbands)
    rewards = all_joint_rewards(state, scenario, actions)
    best = int(np.argmax(rewards))
    return ScheduleAction.from_array(actions[best]), float(rewards[best])
