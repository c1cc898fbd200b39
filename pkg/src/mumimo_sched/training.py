"""Value-decomposition DQN training and fine-tuning.

Each iteration draws a fresh set of environment samples, acts epsilon-greedily per
branch, scores the actions with the PF reward, pushes the experiences through the
two-phase replay write, then runs a fixed number of prioritized optimization steps.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AgentSpec, QNetwork, build_network, polyak_update, select_actions
from .env_model import EnvConfig, StateBatch, sample_states
from .errors import CheckpointError, ConfigError
from .features import Normalizer, batch_features, feature_size
from .link_layer import batch_rewards
from .numerics import AdamW
from .replay import Batch, PrioritizedReplay

log = logging.getLogger(__name__)

LOG_FIELDS = ("iteration", "samples_seen", "epsilon", "mean_train_reward", "mean_validation_reward", "loss")
FINETUNE_EPSILON_START = 0.2


@dataclass(frozen=True)
class TrainConfig:
    total_samples: int = 10**6
    samples_per_iteration: int = 1000
    opt_steps_per_iteration: int = 100
    batch_size: int = 256
    buffer_size: int = 10**5
    gamma: float = 0.0
    lr: float = 1e-4
    weight_decay: float = 1e-4
    alpha: float = 0.7
    beta: float = 0.5
    epsilon_start: float = 1.0
    epsilon_end: float = 0.02
    epsilon_decay_fraction: float = 0.5
    target_tau: float = 0.005
    loss: str = "vd"  # "vd" or "branch_mean"
    validation_states: int = 500
    validation_seed: int = 999_331
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_iteration < 1 or self.total_samples < self.samples_per_iteration:
            raise ConfigError("total_samples: must be >= samples_per_iteration >= 1")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ConfigError("buffer_size: must be >= batch_size >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma: must lie in [0, 1]")
        if self.loss not in ("vd", "branch_mean"):
            raise ConfigError(f"loss: {self.loss!r} not one of ('vd', 'branch_mean')")
        for key in ("epsilon_start", "epsilon_end", "epsilon_decay_fraction", "target_tau"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key}: must lie in [0, 1]")

    @property
    def n_iterations(self) -> int:
        return self.total_samples // self.samples_per_iteration


def epsilon_at(step: int, config: TrainConfig) -> float:
    """Linear decay over the first ``epsilon_decay_fraction`` of iterations, then flat."""
    horizon = config.epsilon_decay_fraction * config.n_iterations
    if horizon <= 0 or step >= horizon:
        return config.epsilon_end
    frac = step / horizon
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def vd_loss_and_grads(net: QNetwork, batch: Batch, target: QNetwork | None = None,
                      gamma: float = 0.0, weights=None, loss: str = "vd"):
    """Importance-weighted value-decomposition loss, gradients and per-sample TD errors.

    Gradients are written to ``net.params.grads`` (zeroed first), which is returned.
    For ``loss="vd"`` the prediction is the sum of the chosen per-branch Q-values; for
    ``"branch_mean"`` every branch regresses the full target on its own.
    """
    if batch.rewards is None or np.any(np.isnan(batch.rewards)):
        raise ValueError("batch contains experiences without a committed reward")
    w = np.ones(len(batch.rewards)) if weights is None else np.asarray(weights, dtype=np.float64)
    r = np.asarray(batch.rewards, dtype=np.float64)
    if gamma == 0.0:
        y = r
    else:
        if target is None or batch.next_features is None:
            raise ValueError("bootstrapped targets need a target network and next states")
        q_next = target(batch.next_features).q.astype(np.float64)
        y = r + gamma * q_next.max(axis=-1).sum(axis=-1)
    out, cache = net.forward(batch.features)
    q = out.q.astype(np.float64)
    a = np.asarray(batch.actions)[..., None]
    chosen = np.take_along_axis(q, a, axis=-1)[..., 0]  # (B, N_s)
    n = len(r)
    if loss == "vd":
        td = y - chosen.sum(axis=-1)
        value = float(np.mean(w * td**2))
        d_chosen = np.broadcast_to((-2.0 * w * td / n)[:, None], chosen.shape)
    else:
        td_b = y[:, None] - chosen
        td = td_b.mean(axis=-1)
        value = float(np.mean(w[:, None] * td_b**2))
        d_chosen = -2.0 * w[:, None] * td_b / (n * chosen.shape[-1])
    dq = np.zeros_like(q)
    np.put_along_axis(dq, a, d_chosen[..., None], axis=-1)
    net.params.zero_grad()
    net.backward(cache, dq)
    return value, net.params.grads, td


@dataclass
class TrainResult:
    net: QNetwork
    log: list[dict] = field(default_factory=list)

    @property
    def final_validation(self) -> float:
        return self.log[-1]["mean_validation_reward"] if self.log else float("nan")


def make_features(states: StateBatch, norm: Normalizer) -> np.ndarray:
    return batch_features(states.est_channel, states.buffers, norm)


def greedy_rewards(net: QNetwork, states: StateBatch, norm: Normalizer, feats=None) -> np.ndarray:
    feats = make_features(states, norm) if feats is None else feats
    actions = net.greedy(feats)
    mask = states.table.indices_to_masks(actions)
    return batch_rewards(states.true_channel, states.est_channel, states.buffers, states.avg_rates,
                         mask, states.config)


def check_compatible(net: QNetwork, env: EnvConfig) -> None:
    table = env.action_table()
    want = (env.n_subbands, table.n_actions, feature_size(env.n_users))
    have = (net.n_subbands, net.n_actions, net.feature_size)
    if want != have:
        raise CheckpointError(
            f"network expects (sub-bands, actions, features)={have}, environment gives {want}"
        )


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in LOG_FIELDS})


def train(env: EnvConfig, spec: AgentSpec, config: TrainConfig, net: QNetwork | None = None,
          log_path: str | Path | None = None, validation: StateBatch | None = None) -> TrainResult:
    """Train a branching Q-network from scratch, or continue from ``net``."""
    norm = Normalizer.for_config(env)
    table = env.action_table()
    if net is None:
        net = build_network(spec, env.n_subbands, table.n_actions, feature_size(env.n_users), seed=config.seed)
    else:
        check_compatible(net, env)
    target = net.clone()
    opt = AdamW(lr=config.lr, weight_decay=config.weight_decay)
    replay = PrioritizedReplay(config.buffer_size, alpha=config.alpha)
    rng = np.random.default_rng([config.seed, 11])
    if validation is None:
        validation = sample_states(env, (config.validation_seed,), config.validation_states)
    val_feats = make_features(validation, norm)
    bootstrap = config.gamma > 0.0
    result = TrainResult(net)
    samples_seen = 0
    for it in range(config.n_iterations):
        eps = epsilon_at(it, config)
        states = sample_states(env, (config.seed, 1, it), config.samples_per_iteration, with_next=bootstrap)
        feats = make_features(states, norm)
        actions = select_actions(net(feats).q, eps, rng)
        tickets = [replay.reserve(f, a) for f, a in zip(feats, actions)]
        mask = table.indices_to_masks(actions)
        rewards = batch_rewards(states.true_channel, states.est_channel, states.buffers, states.avg_rates, mask, env)
        next_feats = make_features(states.next, norm) if bootstrap else [None] * len(tickets)
        for ticket, r, nf in zip(tickets, rewards, next_feats):
            replay.commit(ticket, float(r), nf)
        samples_seen += len(tickets)
        losses = []
        if replay.n_committed >= config.batch_size:
            for _ in range(config.opt_steps_per_iteration):
                batch = replay.sample(config.batch_size, config.beta, rng)
                loss, _, td = vd_loss_and_grads(net, batch, target, config.gamma,
                                                batch.weights, config.loss)
                opt.step(net.params)
                replay.update_priorities(batch.indices, td)
                polyak_update(target.params, net.params, config.target_tau)
                losses.append(loss)
        val = float(np.mean(greedy_rewards(net, validation, norm, val_feats)))
        row = {
            "iteration": it,
            "samples_seen": samples_seen,
            "epsilon": float(eps),
            "mean_train_reward": float(np.mean(rewards)),
            "mean_validation_reward": val,
            "loss": float(np.mean(losses)) if losses else float("nan"),
        }
        result.log.append(row)
        log.info("iter %d eps %.3f train %.4f val %.4f loss %.5f", it, eps, row["mean_train_reward"], val, row["loss"])
    if log_path is not None:
        write_log(result.log, log_path)
    return result


def fine_tune(net: QNetwork, env: EnvConfig, config: TrainConfig, log_path=None,
              validation: StateBatch | None = None,
              epsilon_start: float = FINETUNE_EPSILON_START) -> TrainResult:
    """Continue training a loaded network on a new environment.

    Starts from the given parameters with a fresh replay memory and optimizer and a
    reduced initial exploration rate.
    """
    check_compatible(net, env)
    cfg = dataclasses.replace(config, epsilon_start=epsilon_start)
    return train(env, net.spec, cfg, net=net, log_path=log_path, validation=validation)
