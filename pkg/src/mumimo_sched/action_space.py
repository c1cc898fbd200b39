"""Per-sub-band action tables and joint schedule actions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DecodeError, SizeError

#: Branch index used by non-learned schedulers for a sub-band left without users.
UNUSED = -1

JOINT_ACTION_LIMIT = 10**7


@dataclass(frozen=True)
class BranchActionTable:
    """Ordered user subsets available on every sub-band."""

    n_users: int
    max_coscheduled: int
    include_empty: bool
    subsets: tuple[tuple[int, ...], ...]

    @property
    def n_actions(self) -> int:
        return len(self.subsets)

    @property
    def masks(self) -> np.ndarray:
        """Boolean (n_actions, n_users) membership matrix."""
        out = np.zeros((self.n_actions, self.n_users), dtype=bool)
        for i, s in enumerate(self.subsets):
            out[i, list(s)] = True
        return out

    def index_of(self, subset: Sequence[int]) -> int:
        key = tuple(sorted(int(k) for k in subset))
        try:
            return self.subsets.index(key)
        except ValueError:
            raise DecodeError(f"subset {key} is not in the action table") from None

    def indices_to_masks(self, indices: np.ndarray) -> np.ndarray:
        """Map branch indices (any shape) to user masks of shape indices.shape + (n_users,).

        The UNUSED marker maps to an all-false row.
        """
        indices = np.asarray(indices)
        padded = np.vstack([self.masks, np.zeros((1, self.n_users), dtype=bool)])
        safe = np.where(indices == UNUSED, self.n_actions, indices)
        return padded[safe]


def n_branch_actions(n_users: int, max_coscheduled: int, include_empty: bool = False) -> int:
    """Closed-form size of the branch action table."""
    n = sum(comb(n_users, x) for x in range(1, min(max_coscheduled, n_users) + 1))
    return n + int(include_empty)


def enumerate_actions(n_users: int, max_coscheduled: int, include_empty: bool = False) -> BranchActionTable:
    if n_users < 1 or max_coscheduled < 1:
        raise ConfigError("n_users and max_coscheduled must be >= 1")
    if max_coscheduled > n_users:
        raise ConfigError(
            f"max_coscheduled={max_coscheduled} exceeds n_users={n_users}"
        )
    subsets: list[tuple[int, ...]] = [()] if include_empty else []
    for size in range(1, max_coscheduled + 1):
        subsets.extend(itertools.combinations(range(n_users), size))
    return BranchActionTable(n_users, max_coscheduled, include_empty, tuple(subsets))


@dataclass(frozen=True)
class ScheduleAction:
    """One branch index per sub-band."""

    branch_indices: tuple[int, ...]

    @classmethod
    def from_array(cls, arr) -> "ScheduleAction":
        return cls(tuple(int(a) for a in np.asarray(arr).ravel()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.branch_indices, dtype=np.int64)

    @property
    def n_subbands(self) -> int:
        return len(self.branch_indices)


def decode(action: ScheduleAction, table: BranchActionTable) -> list[tuple[int, ...]]:
    """Per-sub-band user subsets; UNUSED decodes to the empty tuple."""
    out = []
    for d, idx in enumerate(action.branch_indices):
        if idx == UNUSED:
            out.append(())
        elif 0 <= idx < table.n_actions:
            out.append(table.subsets[idx])
        else:
            raise DecodeError(f"sub-band {d}: index {idx} outside [0, {table.n_actions})")
    return out


def encode(subsets: Sequence[Sequence[int]], table: BranchActionTable) -> ScheduleAction:
    """Inverse of :func:`decode`. Empty subsets become UNUSED unless the table has one."""
    idx = []
    for s in subsets:
        if len(s) == 0 and not table.include_empty:
            idx.append(UNUSED)
        else:
            idx.append(table.index_of(s))
    return ScheduleAction(tuple(idx))


def joint_action_count(table: BranchActionTable, n_subbands: int) -> int:
    return table.n_actions**n_subbands


def iter_joint_actions(table: BranchActionTable, n_subbands: int) -> Iterator[ScheduleAction]:
    total = joint_action_count(table, n_subbands)
    if total > JOINT_ACTION_LIMIT:
        raise SizeError(f"{table.n_actions}^{n_subbands} = {total} joint actions exceeds {JOINT_ACTION_LIMIT}")
    for combo in itertools.product(range(table.n_actions), repeat=n_subbands):
        yield ScheduleAction(combo)


def joint_action_array(table: BranchActionTable, n_subbands: int) -> np.ndarray:
    """All joint actions as an (N_a**N_s, N_s) index array, in :func:`iter_joint_actions` order."""
    total = joint_action_count(table, n_subbands)
    if total > JOINT_ACTION_LIMIT:
        raise SizeError(f"{table.n_actions}^{n_subbands} = {total} joint actions exceeds {JOINT_ACTION_LIMIT}")
    grids = np.indices((table.n_actions,) * n_subbands).reshape(n_subbands, -1).T
    return grids.astype(np.int64)
