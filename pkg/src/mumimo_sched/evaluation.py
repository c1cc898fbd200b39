"""Relative-performance evaluation against the traditional baseline, and latency benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .action_space import joint_action_count
from .agents import QNetwork
from .baselines import oracle_schedule, traditional_schedule
from .env_model import EnvConfig, StateBatch, sample_states
from .errors import ConfigError, SizeError
from .features import Normalizer, batch_features, state_features
from .link_layer import batch_rewards

ORACLE_JOINT_LIMIT = 10**5


class Policy:
    """Maps a batch of states to branch action indices ``(n, N_s)``."""

    name = "policy"
    n_params = 0

    def act(self, states: StateBatch) -> np.ndarray:
        raise NotImplementedError

    def decide(self, state, norm: Normalizer, scenario=None) -> np.ndarray:
        """Single-state decision, as timed by the latency benchmark."""
        raise NotImplementedError


class NetworkPolicy(Policy):
    def __init__(self, net: QNetwork, name: str | None = None):
        self.net = net
        self.name = name or net.variant
        self.n_params = net.n_params

    def act(self, states):
        norm = Normalizer.for_config(states.config)
        return self.net.greedy(batch_features(states.est_channel, states.buffers, norm))

    def decide(self, state, norm, scenario=None):
        return self.net.greedy(state_features(state, norm))


class BaselinePolicy(Policy):
    name = "baseline"

    def act(self, states):
        return np.stack([
            traditional_schedule(states.state(i), states.scenario(i)).as_array() for i in range(len(states))
        ])

    def decide(self, state, norm, scenario=None):
        return traditional_schedule(state, scenario).as_array()


class OraclePolicy(Policy):
    name = "oracle"

    def act(self, states):
        n = joint_action_count(states.table, states.config.n_subbands)
        if n > ORACLE_JOINT_LIMIT:
            raise SizeError(f"oracle needs {n} joint actions per state, limit {ORACLE_JOINT_LIMIT}")
        return np.stack([
            oracle_schedule(states.state(i), states.scenario(i))[0].as_array() for i in range(len(states))
        ])


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def act(self, states):
        rng = np.random.default_rng([self.seed, 17])
        return rng.integers(0, states.table.n_actions, size=(len(states), states.config.n_subbands))


def policy_rewards(policy: Policy, states: StateBatch) -> np.ndarray:
    actions = policy.act(states)
    mask = states.table.indices_to_masks(actions)
    return batch_rewards(states.true_channel, states.est_channel, states.buffers, states.avg_rates,
                         mask, states.config)


def ratio_cdf(ratios: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF points ``(x, F(x))`` with F rising from 1/n to 1."""
    x = np.sort(np.asarray(ratios, dtype=np.float64))
    return x, np.arange(1, len(x) + 1) / max(len(x), 1)


@dataclass
class PolicyReport:
    name: str
    mean_reward: float
    mean_ratio_pct: float
    cdf_x: np.ndarray
    cdf_y: np.ndarray
    parameter_count: int
    median_latency: float = float("nan")
    relative_latency: float = float("nan")


@dataclass
class EvalReport:
    n_states: int
    n_excluded: int  # states where the baseline earns nothing
    state_digest: str
    policies: dict = field(default_factory=dict)

    def __getitem__(self, name) -> PolicyReport:
        return self.policies[name]

    def summary_rows(self):
        for p in self.policies.values():
            yield {
                "policy": p.name,
                "mean_reward": p.mean_reward,
                "mean_ratio_pct": p.mean_ratio_pct,
                "parameter_count": p.parameter_count,
                "median_latency_s": p.median_latency,
                "relative_latency": p.relative_latency,
            }

    def cdf_rows(self):
        for p in self.policies.values():
            for x, y in zip(p.cdf_x, p.cdf_y):
                yield {"policy": p.name, "ratio": float(x), "cdf": float(y)}


def evaluate(policies, config: EnvConfig, n_states: int, seed: int,
             states: StateBatch | None = None) -> EvalReport:
    """Score every policy on the same held-out states, relative to the traditional baseline.

    ``policies`` is a list of :class:`Policy`. The baseline is always computed; list it
    explicitly to have it reported.
    """
    if states is None:
        states = sample_states(config, (seed, 5), n_states)
    for p in policies:
        if isinstance(p, NetworkPolicy) and (p.net.n_subbands, p.net.n_actions) != (
                config.n_subbands, states.table.n_actions):
            raise ConfigError(f"policy {p.name}: network does not match env (n_subbands, n_actions)")
    base = policy_rewards(BaselinePolicy(), states)
    valid = base > 0
    report = EvalReport(n_states=len(states), n_excluded=int((~valid).sum()), state_digest=states.digest())
    for p in policies:
        rewards = policy_rewards(p, states)
        ratios = rewards[valid] / base[valid]
        x, y = ratio_cdf(ratios)
        report.policies[p.name] = PolicyReport(
            name=p.name,
            mean_reward=float(rewards.mean()),
            mean_ratio_pct=float(100.0 * ratios.mean()) if len(ratios) else float("nan"),
            cdf_x=x,
            cdf_y=y,
            parameter_count=int(p.n_params),
        )
    return report


@dataclass
class LatencyRow:
    name: str
    median_s: float
    relative: float


def bench_latency(policies, config: EnvConfig, n_runs: int = 300, seed: int = 0,
                  warmup: int = 10) -> list[LatencyRow]:
    """Median single-state decision time per policy, relative to the fastest.

    Runs are interleaved across policies so slow drifts in machine load hit all of them alike.
    """
    states = sample_states(config, (seed, 6), n_runs)
    norm = Normalizer.for_config(config)
    singles = [states.state(i) for i in range(n_runs)]
    scenarios = [states.scenario(i) for i in range(n_runs)]
    times = np.zeros((len(policies), n_runs))
    with threadpool_limits(limits=1):
        for p in policies:
            for i in range(min(warmup, n_runs)):
                p.decide(singles[i], norm, scenarios[i])
        for i in range(n_runs):
            for j, p in enumerate(policies):
                t0 = time.perf_counter()
                p.decide(singles[i], norm, scenarios[i])
                times[j, i] = time.perf_counter() - t0
    med = np.median(times, axis=1)
    fastest = med.min()
    return [LatencyRow(p.name, float(m), float(m / fastest)) for p, m in zip(policies, med)]
