"""Desk-scale CMDP environments: a hazard-avoidance goal task, a circle task
with a keep-in band, and a grid navigation task with a penalized wall.

Dynamics are deterministic; all stochasticity enters through the seeded
reset placement (and goal resampling, which draws from the state's own
generator). That makes logged rollouts bit-exactly replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from esbcpo.cmdp import Trajectory, Transition

ARENA = 2.0  # positions live in [-ARENA, ARENA]^2
DT = 0.1
DAMPING = 0.9
HAZARD_RADIUS = 0.3
GOAL_RADIUS = 0.3
CIRCLE_RADIUS = 1.0
X_LIMIT = 0.8
GRID_N = 8
# Wall with a gap between start and goal: column 4, rows 0..5 blocked,
# rows 6..7 open. Passable but each step on a wall cell costs 1.
GRID_OBSTACLES = frozenset((r, 4) for r in range(6))
GRID_START = (3, 0)
GRID_GOAL = (3, 7)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    continuous: bool
    act_dim: int  # action vector dim (continuous) or number of actions
    action_low: float
    action_high: float
    default_horizon: int

    def __post_init__(self):
        if self.obs_dim < 1:
            raise ValueError("obs_dim must be >= 1")
        if self.continuous and not self.action_low < self.action_high:
            raise ValueError("continuous action bounds must satisfy low < high")


SPECS = {
    "point-goal": EnvSpec("point-goal", 14, True, 2, -1.0, 1.0, 200),
    "point-circle": EnvSpec("point-circle", 4, True, 2, -1.0, 1.0, 200),
    "grid-nav": EnvSpec("grid-nav", GRID_N * GRID_N, False, 4, 0, 3, 64),
}


def get_spec(name: str) -> EnvSpec:
    try:
        return SPECS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(SPECS)}") from None


@dataclass(frozen=True)
class EnvState:
    name: str
    t: int
    horizon: int
    pos: Optional[np.ndarray] = None
    vel: Optional[np.ndarray] = None
    goal: Optional[np.ndarray] = None
    hazards: Optional[np.ndarray] = None
    cell: Optional[tuple[int, int]] = None
    rng_state: Optional[dict] = field(default=None, repr=False)


def _rng_from(state: EnvState) -> np.random.Generator:
    g = np.random.default_rng()
    g.bit_generator.state = state.rng_state
    return g


def _point_goal_obs(state: EnvState) -> np.ndarray:
    rel_haz = (state.hazards - state.pos).ravel()
    return np.concatenate([state.pos, state.vel, state.goal - state.pos, rel_haz])


def _point_circle_obs(state: EnvState) -> np.ndarray:
    return np.concatenate([state.pos, state.vel])


def _grid_obs(cell) -> np.ndarray:
    obs = np.zeros(GRID_N * GRID_N)
    obs[cell[0] * GRID_N + cell[1]] = 1.0
    return obs


def env_reset(spec: EnvSpec, seed: int, horizon: Optional[int] = None) -> tuple[EnvState, np.ndarray]:
    """Deterministic function of the seed; the agent starts outside hazards."""
    horizon = horizon or spec.default_horizon
    rng = np.random.default_rng(seed)
    if spec.name == "point-goal":
        hazards = np.empty((4, 2))
        for i in range(4):
            while True:
                p = rng.uniform(-ARENA + 0.2, ARENA - 0.2, 2)
                if np.linalg.norm(p) > HAZARD_RADIUS + 0.2:
                    hazards[i] = p
                    break
        while True:
            goal = rng.uniform(-ARENA + 0.2, ARENA - 0.2, 2)
            if np.linalg.norm(goal) > 0.5:
                break
        state = EnvState(
            spec.name, 0, horizon, pos=np.zeros(2), vel=np.zeros(2),
            goal=goal, hazards=hazards, rng_state=rng.bit_generator.state,
        )
        return state, _point_goal_obs(state)
    if spec.name == "point-circle":
        # start on the circle inside the keep-in band |x| <= X_LIMIT
        side = rng.choice([0.5, 1.5]) * np.pi  # top or bottom arc center
        ang = side + rng.uniform(-0.6, 0.6)
        pos = CIRCLE_RADIUS * np.array([np.cos(ang), np.sin(ang)])
        state = EnvState(
            spec.name, 0, horizon, pos=pos, vel=np.zeros(2),
            rng_state=rng.bit_generator.state,
        )
        return state, _point_circle_obs(state)
    if spec.name == "grid-nav":
        state = EnvState(spec.name, 0, horizon, cell=GRID_START, rng_state=rng.bit_generator.state)
        return state, _grid_obs(GRID_START)
    raise ValueError(f"unknown environment {spec.name!r}")


def env_step(state: EnvState, action) -> tuple[EnvState, np.ndarray, float, float, bool]:
    """One deterministic step; cost is the hazard indicator in {0, 1}."""
    spec = get_spec(state.name)
    if state.name in ("point-goal", "point-circle"):
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape[0] != spec.act_dim:
            raise ValueError(f"action dim {a.shape[0]} != {spec.act_dim}")
        a = np.clip(a, spec.action_low, spec.action_high)
        vel = DAMPING * state.vel + DT * a
        pos = np.clip(state.pos + vel, -ARENA, ARENA)
        t = state.t + 1
        if state.name == "point-goal":
            prev_dist = float(np.linalg.norm(state.goal - state.pos))
            new_dist = float(np.linalg.norm(state.goal - pos))
            reward = prev_dist - new_dist
            goal = state.goal
            rng_state = state.rng_state
            if new_dist < GOAL_RADIUS:
                reward += 5.0
                rng = _rng_from(state)
                while True:
                    goal = rng.uniform(-ARENA + 0.2, ARENA - 0.2, 2)
                    if np.linalg.norm(goal - pos) > 0.5:
                        break
                rng_state = rng.bit_generator.state
            cost = float(np.any(np.linalg.norm(state.hazards - pos, axis=1) < HAZARD_RADIUS))
            new = replace(state, t=t, pos=pos, vel=vel, goal=goal, rng_state=rng_state)
            return new, _point_goal_obs(new), reward, cost, t >= state.horizon
        # point-circle
        rad = float(np.linalg.norm(pos))
        if rad > 1e-9:
            tangent = np.array([-pos[1], pos[0]]) / rad
            reward = float(vel @ tangent) - 0.1 * abs(rad - CIRCLE_RADIUS)
        else:
            reward = -0.1 * CIRCLE_RADIUS
        cost = float(abs(pos[0]) > X_LIMIT)
        new = replace(state, t=t, pos=pos, vel=vel)
        return new, _point_circle_obs(new), reward, cost, t >= state.horizon
    if state.name == "grid-nav":
        a = int(np.asarray(action).reshape(()))
        if not 0 <= a < 4:
            raise ValueError(f"discrete action {a} out of range [0, 4)")
        moves = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
        r = min(max(state.cell[0] + moves[a][0], 0), GRID_N - 1)
        c = min(max(state.cell[1] + moves[a][1], 0), GRID_N - 1)
        cell = (r, c)
        t = state.t + 1
        at_goal = cell == GRID_GOAL
        reward = -0.05 + (1.0 if at_goal else 0.0)
        cost = float(cell in GRID_OBSTACLES)
        new = replace(state, t=t, cell=cell)
        return new, _grid_obs(cell), reward, cost, at_goal or t >= state.horizon
    raise ValueError(f"unknown environment {state.name!r}")


def cost_from_observation(name: str, obs: np.ndarray) -> float:
    """Recompute the hazard indicator from a logged observation; must
    reproduce the logged cost bit-exactly.
    """
    obs = np.asarray(obs, dtype=float)
    if name == "point-goal":
        rel = obs[6:14].reshape(4, 2)
        return float(np.any(np.linalg.norm(rel, axis=1) < HAZARD_RADIUS))
    if name == "point-circle":
        return float(abs(obs[0]) > X_LIMIT)
    if name == "grid-nav":
        idx = int(np.argmax(obs))
        return float((idx // GRID_N, idx % GRID_N) in GRID_OBSTACLES)
    raise ValueError(f"unknown environment {name!r}")


def rollout(policy, spec: EnvSpec, seed: int, n_steps: int, horizon: Optional[int] = None) -> list[Trajectory]:
    """Collect whole episodes until the total step count reaches n_steps;
    the last episode always runs to its own end.
    """
    from esbcpo.policy import sample_and_logprob

    rng = np.random.default_rng(seed)
    goal_idx = GRID_GOAL[0] * GRID_N + GRID_GOAL[1]
    trajs: list[Trajectory] = []
    total = 0
    while total < n_steps:
        state, obs = env_reset(spec, int(rng.integers(2**63)), horizon)
        transitions = []
        done = False
        while not done:
            acts, _ = sample_and_logprob(policy, obs, rng)
            act_env = acts[0] if spec.continuous else int(acts[0])
            state, next_obs, reward, cost, done = env_step(state, act_env)
            # horizon exhaustion is truncation, not a true terminal; reaching
            # the grid goal counts as terminal even on the last step
            true_term = done and (
                state.t < state.horizon
                or (spec.name == "grid-nav" and int(np.argmax(next_obs)) == goal_idx)
            )
            transitions.append(
                Transition(obs, np.atleast_1d(np.asarray(act_env, dtype=float)), reward, cost, next_obs, true_term)
            )
            obs = next_obs
        trajs.append(Trajectory(tuple(transitions), truncated=not transitions[-1].terminal))
        total += len(transitions)
    return trajs
