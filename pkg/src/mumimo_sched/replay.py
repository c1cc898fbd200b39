"""Prioritized experience replay with a two-phase (reserve, then commit) write path.

An experience is reserved as soon as the action is taken and becomes sampleable only
once its reward arrives via :meth:`PrioritizedReplay.commit`.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ReplayUnderflowError, TicketError

PRIORITY_FLOOR = 1e-3


class SumTree:
    """Array-backed binary tree whose internal nodes hold the sum of their children.

    Leaves live at ``[size, 2 * size)`` with ``size`` the capacity rounded up to a power
    of two; padding leaves stay at zero.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 1 << (capacity - 1).bit_length()
        self.nodes = np.zeros(2 * self.size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.size: self.size + self.capacity]

    def update(self, indices, values) -> None:
        if np.ndim(indices) == 0:
            # scalar path: walking up in Python beats the array version for one leaf
            i = int(indices) + self.size
            nodes = self.nodes
            nodes[i] = float(values)
            i //= 2
            while i >= 1:
                nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
                i //= 2
            return
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64)) + self.size
        self.nodes[idx] = np.atleast_1d(values)
        idx = np.unique(idx // 2)
        while idx[0] >= 1:
            self.nodes[idx] = self.nodes[2 * idx] + self.nodes[2 * idx + 1]
            if idx[0] == 1:
                break
            idx = np.unique(idx // 2)

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-priority interval contains each ``mass``."""
        mass = np.array(mass, dtype=np.float64, copy=True)
        idx = np.ones(mass.shape, dtype=np.int64)
        while idx[0] < self.size:
            left = 2 * idx
            go_right = mass >= self.nodes[left]
            mass = np.where(go_right, mass - self.nodes[left], mass)
            idx = left + go_right
        return idx - self.size

    def check(self, tol: float = 1e-9) -> bool:
        """True when every internal node equals the sum of its children."""
        inner = np.arange(1, self.size)
        diff = np.abs(self.nodes[inner] - self.nodes[2 * inner] - self.nodes[2 * inner + 1])
        return bool(np.all(diff <= tol * np.maximum(1.0, self.nodes[inner])))


@dataclass(frozen=True)
class Ticket:
    slot: int
    serial: int


@dataclass
class Batch:
    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_features: np.ndarray | None
    weights: np.ndarray
    indices: np.ndarray


class PrioritizedReplay:
    """Fixed-capacity proportional prioritized replay memory."""

    def __init__(self, capacity: int, alpha: float = 0.7, priority_floor: float = PRIORITY_FLOOR):
        self.capacity = capacity
        self.alpha = alpha
        self.priority_floor = priority_floor
        self.tree = SumTree(capacity)
        self._features = None
        self._next = None
        self._actions = None
        self._rewards = np.zeros(capacity, dtype=np.float64)
        self._priority = np.zeros(capacity, dtype=np.float64)
        self._serial = np.full(capacity, -1, dtype=np.int64)
        self._committed = np.zeros(capacity, dtype=bool)
        self._free = deque(range(capacity))
        self._commit_order: deque[int] = deque()
        self._next_serial = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.capacity - len(self._free)

    @property
    def n_committed(self) -> int:
        return len(self._commit_order)

    def _alloc_storage(self, features, action):
        features = np.asarray(features)
        self._features = np.zeros((self.capacity, *features.shape), dtype=features.dtype)
        self._actions = np.zeros((self.capacity, *np.shape(action)), dtype=np.int64)

    def reserve(self, features, action) -> Ticket:
        if self._features is None:
            self._alloc_storage(features, action)
        if self._free:
            slot = self._free.popleft()
        elif self._commit_order:
            slot = self._commit_order.popleft()
            self._committed[slot] = False
            self.tree.update(slot, 0.0)
        else:
            raise ReplayUnderflowError("replay memory full of uncommitted reservations")
        self._features[slot] = features
        self._actions[slot] = action
        serial = self._next_serial
        self._next_serial += 1
        self._serial[slot] = serial
        return Ticket(slot, serial)

    def commit(self, ticket: Ticket, reward: float, next_features=None) -> None:
        slot = ticket.slot
        if not 0 <= slot < self.capacity or self._serial[slot] != ticket.serial:
            raise TicketError(f"ticket {ticket} is unknown or expired")
        if self._committed[slot]:
            raise TicketError(f"ticket {ticket} already committed")
        self._rewards[slot] = reward
        if next_features is not None:
            if self._next is None:
                self._next = np.zeros_like(self._features)
            self._next[slot] = next_features
        self._committed[slot] = True
        self._commit_order.append(slot)
        self._priority[slot] = self.max_priority
        self.tree.update(slot, self.max_priority**self.alpha)

    def add(self, features, action, reward, next_features=None) -> Ticket:
        ticket = self.reserve(features, action)
        self.commit(ticket, reward, next_features)
        return ticket

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()
        return leaves / leaves.sum()

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> Batch:
        """Stratified proportional sample with max-normalized importance weights."""
        n = self.n_committed
        if n < batch_size or n == 0:
            raise ReplayUnderflowError(f"{n} committed experiences, {batch_size} requested")
        total = self.tree.total
        seg = total / batch_size
        mass = (np.arange(batch_size) + rng.random(batch_size)) * seg
        mass = np.minimum(mass, np.nextafter(total, 0.0))
        idx = self.tree.find(mass)
        bad = ~self._committed[np.minimum(idx, self.capacity - 1)] | (idx >= self.capacity)
        if np.any(bad):
            # float round-off can land on a zero-priority leaf; redraw those proportionally
            p = self.probabilities()
            idx[bad] = rng.choice(self.capacity, size=int(bad.sum()), p=p)
        prob = self.tree.nodes[self.tree.size + idx] / total
        w = (n * prob) ** (-beta)
        w = w / w.max()
        return Batch(
            features=self._features[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_features=None if self._next is None else self._next[idx],
            weights=w,
            indices=idx,
        )

    def update_priorities(self, indices, td_errors) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        if np.any((indices < 0) | (indices >= self.capacity)) or not np.all(self._committed[indices]):
            raise IndexError("priority update for an index that holds no committed experience")
        pr = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.priority_floor
        self._priority[indices] = pr
        self.max_priority = max(self.max_priority, float(pr.max()))
        self.tree.update(indices, pr**self.alpha)

    def check(self) -> bool:
        if not self.tree.check():
            return False
        leaves = self.tree.leaves()
        if np.any(leaves[~self._committed] != 0.0):
            return False
        return bool(np.all(leaves[self._committed] > 0.0))
