"""Core CMDP data model and discounted-aggregate computations.

All types are immutable after construction and all operations are pure,
so anything here is safe to share across concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One environment step (s, a, r, c, s', done)."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    cost: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError(f"cost must be >= 0, got {self.cost}")
        if self.state.shape != self.next_state.shape:
            raise ValueError("state and next_state must have the same dimension")


@dataclass(frozen=True)
class Trajectory:
    """An episode: consecutive transitions, optionally cut at the horizon."""

    transitions: tuple[Transition, ...]
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        for t, (a, b) in enumerate(zip(self.transitions, self.transitions[1:])):
            if not np.array_equal(a.next_state, b.state):
                raise ValueError(f"transition {t}: next_state != state of transition {t + 1}")
        for t, tr in enumerate(self.transitions[:-1]):
            if tr.terminal:
                raise ValueError(f"non-final transition {t} marked terminal")

    def __len__(self):
        return len(self.transitions)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions])

    @property
    def costs(self) -> np.ndarray:
        return np.array([t.cost for t in self.transitions])


@dataclass(frozen=True)
class CmdpConfig:
    """Discount, cost limit and horizon for a single-constraint CMDP."""

    gamma: float = 0.99
    cost_limit: float = 25.0
    horizon: int = 200

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        if self.cost_limit <= 0:
            raise ValueError(f"cost_limit must be > 0, got {self.cost_limit}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")


def discounted_sum(values: Sequence[float], gamma: float) -> float:
    """Sum of gamma^t * values[t]; 0 for an empty sequence."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    return float(np.polynomial.polynomial.polyval(gamma, v))


def trajectory_return_and_cost(traj: Trajectory, gamma: float) -> tuple[float, float]:
    """Discounted (return, cost) pair over one trajectory."""
    return discounted_sum(traj.rewards, gamma), discounted_sum(traj.costs, gamma)


def batch_estimates(trajs: Iterable[Trajectory], gamma: float) -> tuple[float, float]:
    """Mean per-trajectory discounted (return, cost) over a batch."""
    pairs = [trajectory_return_and_cost(t, gamma) for t in trajs]
    if not pairs:
        raise ValueError("empty trajectory batch (sampling bug?)")
    arr = np.array(pairs)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def save_trajectories(trajs: Sequence[Trajectory], path) -> None:
    """Write a batch to a line-delimited record file, one transition per line:
    episode id, step, state..., action..., reward, cost, terminal.
    """
    with open(path, "w") as fh:
        for ep, traj in enumerate(trajs):
            for step, tr in enumerate(traj.transitions):
                fields = (
                    [str(ep), str(step)]
                    + [repr(float(x)) for x in tr.state]
                    + [repr(float(x)) for x in np.atleast_1d(tr.action)]
                    + [repr(float(tr.reward)), repr(float(tr.cost)), str(int(tr.terminal))]
                )
                fh.write(",".join(fields) + "\n")


def load_transition_records(path, obs_dim: int, act_dim: int):
    """Read back records written by save_trajectories.

    Yields (episode id, step, state, action, reward, cost, terminal) tuples;
    next_state is not stored in the log, so full Trajectory objects cannot be
    rebuilt - replay re-simulation handles that.
    """
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            ep, step = int(parts[0]), int(parts[1])
            state = np.array([float(x) for x in parts[2 : 2 + obs_dim]])
            action = np.array([float(x) for x in parts[2 + obs_dim : 2 + obs_dim + act_dim]])
            reward = float(parts[2 + obs_dim + act_dim])
            cost = float(parts[3 + obs_dim + act_dim])
            terminal = bool(int(parts[4 + obs_dim + act_dim]))
            yield ep, step, state, action, reward, cost, terminal
