"""Branching Q-networks: action branching, unibranch and GNN variants.

Each network maps per-sub-band features (B, N_s, F) to per-branch Q-values
(B, N_s, N_a) through a dueling head ``Q = A + V - mean_a A``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import GraphAttention, Mlp, MlpSpec, ParamTree, relu

VARIANTS = ("action_branching", "unibranch", "gnn")


@dataclass(frozen=True)
class AgentSpec:
    variant: str = "action_branching"
    local_repr_size: int = 64
    shared_repr_size: int = 640
    branch_layers: int = 2
    shared_layers: int = 3
    value_layers: int = 2
    gnn_iterations: int = 3
    gnn_heads: int = 3
    gnn_head_size: int = 32
    gnn_update_layers: int = 2
    positional_encoding: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: {self.variant!r} not one of {VARIANTS}")
        for f in fields(self):
            if f.type in ("int",) and getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name}: must be >= 0")
        for key in ("local_repr_size", "shared_repr_size", "branch_layers", "shared_layers", "value_layers"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1")


@dataclass
class QOutput:
    q: np.ndarray  # (..., N_s, N_a)
    advantage: np.ndarray
    value: np.ndarray  # (...,)


def dueling_combine(advantage, value):
    advantage = np.asarray(advantage)
    value = np.asarray(value)
    return advantage + value[..., None, None] - advantage.mean(axis=-1, keepdims=True)


def dueling_backward(dq):
    """Gradients of the dueling head w.r.t. (advantage, value)."""
    d_adv = dq - dq.mean(axis=-1, keepdims=True)
    d_val = dq.sum(axis=(-1, -2))
    return d_adv, d_val


class QNetwork:
    """Shared plumbing; subclasses define ``_build``, ``_forward`` and ``_backward``."""

    def __init__(self, spec: AgentSpec, n_subbands: int, n_actions: int, feature_size: int,
                 seed: int = 0, dtype=np.float32, params: ParamTree | None = None):
        self.spec = spec
        self.n_subbands = n_subbands
        self.n_actions = n_actions
        self.feature_size = feature_size
        self.dtype = np.dtype(dtype)
        self._build()
        if params is None:
            params = ParamTree()
            rng = np.random.default_rng(seed)
            for module in self._modules():
                module.init(params, rng, self.dtype)
        self.params = params

    @property
    def variant(self) -> str:
        return self.spec.variant

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def clone(self, params: ParamTree | None = None) -> "QNetwork":
        return type(self)(self.spec, self.n_subbands, self.n_actions, self.feature_size,
                          dtype=self.dtype, params=params if params is not None else self.params.copy())

    def _check(self, x):
        x = np.asarray(x)
        if x.ndim < 2 or x.shape[-2:] != (self.n_subbands, self.feature_size):
            raise ShapeError(
                f"features shaped {x.shape}, expected (..., {self.n_subbands}, {self.feature_size})"
            )
        return x.astype(self.params.dtype, copy=False)

    def forward(self, x):
        """Return (QOutput, cache) for features of shape (..., N_s, F)."""
        x = self._check(x)
        single = x.ndim == 2
        if single:
            x = x[None]
        adv, value, cache = self._forward(x)
        q = dueling_combine(adv, value)
        out = QOutput(q=q, advantage=adv, value=value)
        if single:
            out = QOutput(q=q[0], advantage=adv[0], value=value[0])
        return out, (single, cache)

    def __call__(self, x) -> QOutput:
        return self.forward(x)[0]

    def backward(self, cache, dq) -> None:
        """Accumulate parameter gradients for an upstream gradient ``dq`` on Q."""
        single, inner = cache
        dq = np.asarray(dq, dtype=self.params.dtype)
        if single:
            dq = dq[None]
        d_adv, d_val = dueling_backward(dq)
        self._backward(inner, d_adv, d_val)

    def greedy(self, x) -> np.ndarray:
        return np.argmax(self(x).q, axis=-1)


class _Embed:
    """Dense layer + ReLU applied to every sub-band's features with shared weights."""

    def __init__(self, prefix, n_in, n_out):
        self.mlp = Mlp(prefix, MlpSpec(n_in, n_out, 1))

    def init(self, tree, rng, dtype):
        self.mlp.init(tree, rng, dtype)

    def forward(self, tree, x):
        y, acts = self.mlp.forward(tree, x)
        y = relu(y)
        return y, (acts, y)

    def backward(self, tree, cache, dy):
        acts, y = cache
        return self.mlp.backward(tree, acts, dy * (y > 0))


class ActionBranchingNet(QNetwork):
    def _build(self):
        s, n = self.spec, self.n_subbands
        self.embed = _Embed("embed", self.feature_size, s.local_repr_size)
        flat = n * s.local_repr_size
        self.shared = Mlp("shared", MlpSpec(flat, s.shared_repr_size, s.shared_layers))
        self.value = Mlp("value", MlpSpec(flat, 1, s.value_layers))
        self.heads = Mlp("heads", MlpSpec(s.shared_repr_size, self.n_actions, s.branch_layers, n_branches=n))

    def _modules(self):
        return [self.embed, self.shared, self.value, self.heads]

    def _forward(self, x):
        p = self.params
        e, c_e = self.embed.forward(p, x)
        flat = e.reshape(*e.shape[:-2], -1)
        emb, c_sh = self.shared.forward(p, flat)
        v, c_v = self.value.forward(p, flat)
        branch_in = np.broadcast_to(emb[..., None, :], (*emb.shape[:-1], self.n_subbands, emb.shape[-1]))
        adv, c_h = self.heads.forward(p, branch_in)
        return adv, v[..., 0], (e.shape, c_e, c_sh, c_v, c_h)

    def _backward(self, cache, d_adv, d_val):
        p = self.params
        e_shape, c_e, c_sh, c_v, c_h = cache
        d_branch = self.heads.backward(p, c_h, d_adv)
        d_emb = d_branch.sum(axis=-2)
        d_flat = self.shared.backward(p, c_sh, d_emb)
        d_flat = d_flat + self.value.backward(p, c_v, d_val[..., None])
        self.embed.backward(p, c_e, d_flat.reshape(e_shape))


class UnibranchNet(QNetwork):
    def _build(self):
        s, n = self.spec, self.n_subbands
        self.embed = _Embed("embed", self.feature_size, s.local_repr_size)
        flat = n * s.local_repr_size
        self.shared = Mlp("shared", MlpSpec(flat, s.shared_repr_size, s.shared_layers))
        self.value = Mlp("value", MlpSpec(flat, 1, s.value_layers))
        self.branch_in = s.shared_repr_size + s.local_repr_size + (n if s.positional_encoding else 0)
        self.head = Mlp("head", MlpSpec(self.branch_in, self.n_actions, s.branch_layers))

    def _modules(self):
        return [self.embed, self.shared, self.value, self.head]

    def _forward(self, x):
        p, n = self.params, self.n_subbands
        e, c_e = self.embed.forward(p, x)
        flat = e.reshape(*e.shape[:-2], -1)
        emb, c_sh = self.shared.forward(p, flat)
        v, c_v = self.value.forward(p, flat)
        parts = [np.broadcast_to(emb[..., None, :], (*emb.shape[:-1], n, emb.shape[-1])), e]
        if self.spec.positional_encoding:
            parts.append(np.broadcast_to(np.eye(n, dtype=e.dtype), (*e.shape[:-2], n, n)))
        adv, c_h = self.head.forward(p, np.concatenate(parts, axis=-1))
        return adv, v[..., 0], (e.shape, c_e, c_sh, c_v, c_h)

    def _backward(self, cache, d_adv, d_val):
        p, s = self.params, self.spec
        e_shape, c_e, c_sh, c_v, c_h = cache
        d_in = self.head.backward(p, c_h, d_adv)
        d_emb = d_in[..., : s.shared_repr_size].sum(axis=-2)
        d_local = d_in[..., s.shared_repr_size: s.shared_repr_size + s.local_repr_size]
        d_flat = self.shared.backward(p, c_sh, d_emb)
        d_flat = d_flat + self.value.backward(p, c_v, d_val[..., None])
        self.embed.backward(p, c_e, d_local + d_flat.reshape(e_shape))


class GnnNet(QNetwork):
    def _build(self):
        s = self.spec
        h = s.local_repr_size
        self.embed = _Embed("embed", self.feature_size, h)
        self.gat = GraphAttention("gat", h, s.gnn_head_size, s.gnn_heads)
        self.update = Mlp("update", MlpSpec(self.gat.out_size, h, s.gnn_update_layers))
        self.head = Mlp("head", MlpSpec(h, self.n_actions, s.branch_layers))
        self.value = Mlp("value", MlpSpec(h, 1, s.value_layers))

    def _modules(self):
        return [self.embed, self.gat, self.update, self.head, self.value]

    def _forward(self, x):
        p = self.params
        h, c_e = self.embed.forward(p, x)
        rounds = []
        for _ in range(self.spec.gnn_iterations):
            g, c_g = self.gat.forward(p, h)
            u, c_u = self.update.forward(p, g)
            # residual update keeps each sub-band's own state from being averaged away
            h = h + u
            rounds.append((c_g, c_u))
        adv, c_h = self.head.forward(p, h)
        pooled = h.mean(axis=-2)
        v, c_v = self.value.forward(p, pooled)
        return adv, v[..., 0], (c_e, rounds, c_h, c_v)

    def _backward(self, cache, d_adv, d_val):
        p = self.params
        c_e, rounds, c_h, c_v = cache
        dh = self.head.backward(p, c_h, d_adv)
        d_pool = self.value.backward(p, c_v, d_val[..., None])
        dh = dh + d_pool[..., None, :] / self.n_subbands
        for c_g, c_u in reversed(rounds):
            dg = self.update.backward(p, c_u, dh)
            dh = dh + self.gat.backward(p, c_g, dg)
        self.embed.backward(p, c_e, dh)


_NETWORKS = {"action_branching": ActionBranchingNet, "unibranch": UnibranchNet, "gnn": GnnNet}


def build_network(spec: AgentSpec, n_subbands: int, n_actions: int, feature_size: int,
                  seed: int = 0, dtype=np.float32, params: ParamTree | None = None) -> QNetwork:
    return _NETWORKS[spec.variant](spec, n_subbands, n_actions, feature_size, seed=seed, dtype=dtype, params=params)


def q_ab(features, net: ActionBranchingNet) -> QOutput:
    return net(features)


def q_unibranch(features, net: UnibranchNet) -> QOutput:
    return net(features)


def q_gnn(features, net: GnnNet) -> QOutput:
    return net(features)


def select_actions(q, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Per-branch epsilon-greedy indices for q of shape (..., N_s, N_a).

    Greedy ties go to the lowest index.
    """
    if isinstance(q, QOutput):
        q = q.q
    q = np.asarray(q)
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    greedy = np.argmax(q, axis=-1)
    if epsilon == 0.0:
        return greedy
    explore = rng.random(greedy.shape) < epsilon
    random = rng.integers(0, q.shape[-1], size=greedy.shape)
    return np.where(explore, random, greedy)


def polyak_update(target: ParamTree, online: ParamTree, tau: float = 0.005) -> ParamTree:
    target.assert_matches(online)
    for name, t in target.params.items():
        t *= 1.0 - tau
        t += tau * online.params[name]
    return target
