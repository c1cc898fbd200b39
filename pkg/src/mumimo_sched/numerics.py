"""Dense/MLP/graph-attention kernels with hand-written backward passes, and AdamW.

Everything here is plain numpy. Kernels compute in the dtype of their parameters, so
a tree cast to float64 gives reproducible finite-difference checks while training
runs in float32.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import ShapeError


class ParamTree:
    """Named parameter arrays with matching gradient accumulators."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        value = np.asarray(value)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamTree":
        return ParamTree({k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "ParamTree":
        return ParamTree({k: v.astype(dtype) for k, v in self.params.items()})

    def assert_matches(self, other: "ParamTree") -> None:
        if list(self.params) != list(other.params):
            raise ShapeError("parameter trees have different leaves")
        for k, v in self.params.items():
            if v.shape != other.params[k].shape:
                raise ShapeError(f"{k}: shape {v.shape} vs {other.params[k].shape}")

    def load(self, other: "ParamTree") -> None:
        """Copy values from ``other`` in place, keeping this tree's dtypes."""
        self.assert_matches(other)
        for k, v in other.params.items():
            self.params[k][...] = v


def relu(x):
    return np.maximum(x, 0)


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def mlp_sizes(n_in: int, n_out: int, n_layers: int) -> list[int]:
    """Layer widths evolving linearly from input to output.

    Hidden widths advance by a constant rounded step, e.g. 56 -> 640 over three layers
    gives [56, 251, 446, 640].
    """
    if n_layers < 1:
        raise ValueError("an MLP needs at least one layer")
    step = int(round((n_out - n_in) / n_layers))
    return [n_in] + [n_in + i * step for i in range(1, n_layers)] + [n_out]


def _init_layer(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass(frozen=True)
class MlpSpec:
    input_size: int
    output_size: int
    n_layers: int
    n_branches: int = 0  # >0: independent weights per branch, input (..., n_branches, in)

    @property
    def sizes(self) -> list[int]:
        return mlp_sizes(self.input_size, self.output_size, self.n_layers)


class Mlp:
    """Affine layers with ReLU between them and an identity output."""

    def __init__(self, prefix: str, spec: MlpSpec):
        self.prefix = prefix
        self.spec = spec

    def names(self, i):
        return f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"

    def init(self, tree: ParamTree, rng: np.random.Generator, dtype=np.float32) -> None:
        sizes = self.spec.sizes
        lead = (self.spec.n_branches,) if self.spec.n_branches else ()
        for i in range(self.spec.n_layers):
            wn, bn = self.names(i)
            tree.add(wn, _init_layer(rng, sizes[i], (*lead, sizes[i], sizes[i + 1]), dtype))
            tree.add(bn, _init_layer(rng, sizes[i], (*lead, sizes[i + 1]), dtype))

    def _affine(self, x, w, b):
        if self.spec.n_branches:
            # x (..., N, in) with w (N, in, out)
            xt = np.moveaxis(x, -2, 0)  # (N, ..., in)
            shp = xt.shape
            y = np.matmul(xt.reshape(shp[0], -1, shp[-1]), w)
            y = np.moveaxis(y.reshape(*shp[:-1], w.shape[-1]), 0, -2)
            return y + b
        return x @ w + b

    def forward(self, tree: ParamTree, x):
        if x.shape[-1] != self.spec.input_size:
            raise ShapeError(f"{self.prefix}: input width {x.shape[-1]} != {self.spec.input_size}")
        if self.spec.n_branches and x.shape[-2] != self.spec.n_branches:
            raise ShapeError(f"{self.prefix}: {x.shape[-2]} branches != {self.spec.n_branches}")
        acts = [x]
        h = x
        for i in range(self.spec.n_layers):
            wn, bn = self.names(i)
            h = self._affine(h, tree[wn], tree[bn])
            if i < self.spec.n_layers - 1:
                h = relu(h)
            acts.append(h)
        return h, acts

    def backward(self, tree: ParamTree, acts, dy):
        """Accumulate parameter gradients into ``tree.grads``; return the input gradient."""
        g = dy
        for i in reversed(range(self.spec.n_layers)):
            wn, bn = self.names(i)
            if i < self.spec.n_layers - 1:
                g = g * (acts[i + 1] > 0)
            x = acts[i]
            w = tree[wn]
            if self.spec.n_branches:
                xt = np.moveaxis(x, -2, 0)
                gt = np.moveaxis(g, -2, 0)
                xf = xt.reshape(xt.shape[0], -1, xt.shape[-1])
                gf = gt.reshape(gt.shape[0], -1, gt.shape[-1])
                tree.grads[wn] += np.matmul(np.swapaxes(xf, 1, 2), gf)
                tree.grads[bn] += gf.sum(axis=1)
                dx = np.matmul(gf, np.swapaxes(w, 1, 2))
                g = np.moveaxis(dx.reshape(*xt.shape), 0, -2)
            else:
                xf = x.reshape(-1, x.shape[-1])
                gf = g.reshape(-1, g.shape[-1])
                tree.grads[wn] += xf.T @ gf
                tree.grads[bn] += gf.sum(axis=0)
                g = g @ w.T
        return g


def mlp_forward(mlp: Mlp, tree: ParamTree, x):
    return mlp.forward(tree, x)


def mlp_backward(mlp: Mlp, tree: ParamTree, cache, dy):
    return mlp.backward(tree, cache, dy)


class GraphAttention:
    """Multi-head graph attention over a fully connected graph with self-loops.

    Node scores ``e_dm = leaky(a . [W h_d || W h_m])``, softmax over m, and the heads'
    attention-weighted messages concatenated. Input (..., N, H) -> (..., N, heads*F).
    """

    def __init__(self, prefix: str, in_size: int, head_size: int, n_heads: int, slope: float = 0.2):
        self.prefix = prefix
        self.in_size = in_size
        self.head_size = head_size
        self.n_heads = n_heads
        self.slope = slope

    @property
    def out_size(self) -> int:
        return self.n_heads * self.head_size

    def init(self, tree: ParamTree, rng: np.random.Generator, dtype=np.float32) -> None:
        k, f = self.n_heads, self.head_size
        tree.add(f"{self.prefix}.W", _init_layer(rng, self.in_size, (k, self.in_size, f), dtype))
        tree.add(f"{self.prefix}.a", _init_layer(rng, 2 * f, (k, 2 * f), dtype))

    def forward(self, tree: ParamTree, h):
        if h.shape[-1] != self.in_size:
            raise ShapeError(f"{self.prefix}: node width {h.shape[-1]} != {self.in_size}")
        w = tree[f"{self.prefix}.W"]
        a = tree[f"{self.prefix}.a"]
        f = self.head_size
        z = np.matmul(h[..., None, :, :], w)  # (..., K, N, F)
        s_dst = z @ a[:, :f, None]  # (..., K, N, 1)
        s_src = z @ a[:, f:, None]
        pre = s_dst + np.swapaxes(s_src, -1, -2)  # (..., K, N, N)
        e = leaky_relu(pre, self.slope)
        e = e - e.max(axis=-1, keepdims=True)
        att = np.exp(e)
        att /= att.sum(axis=-1, keepdims=True)
        out = att @ z  # (..., K, N, F)
        out = np.swapaxes(out, -3, -2)  # (..., N, K, F)
        y = out.reshape(*out.shape[:-2], self.out_size)
        return y, (h, z, pre, att)

    def backward(self, tree: ParamTree, cache, dy):
        h, z, pre, att = cache
        w = tree[f"{self.prefix}.W"]
        a = tree[f"{self.prefix}.a"]
        k, f = self.n_heads, self.head_size
        d_out = np.swapaxes(dy.reshape(*dy.shape[:-1], k, f), -3, -2)  # (..., K, N, F)
        d_att = d_out @ np.swapaxes(z, -1, -2)  # (..., K, N, N)
        dz = np.swapaxes(att, -1, -2) @ d_out
        d_e = att * (d_att - (att * d_att).sum(axis=-1, keepdims=True))
        d_pre = d_e * np.where(pre > 0, 1.0, self.slope).astype(d_e.dtype)
        d_dst = d_pre.sum(axis=-1)  # (..., K, N)
        d_src = d_pre.sum(axis=-2)
        dz = dz + d_dst[..., None] * a[:, None, :f] + d_src[..., None] * a[:, None, f:]
        lead = tuple(range(z.ndim - 3))
        da_dst = (d_dst[..., None] * z).sum(axis=lead + (z.ndim - 2,))
        da_src = (d_src[..., None] * z).sum(axis=lead + (z.ndim - 2,))
        tree.grads[f"{self.prefix}.a"] += np.concatenate([da_dst, da_src], axis=-1)
        hh = h[..., None, :, :]  # (..., 1, N, H)
        dw = np.swapaxes(hh, -1, -2) @ dz  # (..., K, H, F)
        tree.grads[f"{self.prefix}.W"] += dw.sum(axis=lead) if lead else dw
        dh = (dz @ np.swapaxes(w, -1, -2)).sum(axis=-3)
        return dh


def gat_forward(gat: GraphAttention, tree: ParamTree, h):
    return gat.forward(tree, h)


def gat_backward(gat: GraphAttention, tree: ParamTree, cache, dy):
    return gat.backward(tree, cache, dy)


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tree: ParamTree) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in tree.params.items():
            g = tree.grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adamw_step(tree: ParamTree, opt: AdamW) -> ParamTree:
    opt.step(tree)
    return tree


def finite_difference_check(
    loss_fn: Callable[[ParamTree], float],
    tree: ParamTree,
    analytic: dict[str, np.ndarray],
    rng: np.random.Generator,
    n_per_leaf: int = 5,
    h: float = 1e-6,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between ``analytic`` and central differences of ``loss_fn``.

    Checks ``n_per_leaf`` randomly chosen entries of every leaf. The tree is perturbed
    in place and restored.
    """
    worst = 0.0
    for name, p in tree.items():
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_per_leaf, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn(tree)
            flat[i] = old - h
            down = loss_fn(tree)
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = analytic[name].reshape(-1)[i]
            err = abs(num - ana) / max(abs(num), abs(ana), floor)
            worst = max(worst, err)
    return worst
