"""Deterministic 2D cooperative-navigation environment.

N agents move on the square [-half_extent, +half_extent]^2 with discrete
cardinal actions and must simultaneously occupy their assigned landmarks.
Two scenarios (same_landmark, different_landmark) in 2- and 4-agent
versions, each with a sparse and a dense reward mode.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ACTION_NAMES = ("up", "down", "left", "right", "stay")
N_ACTIONS = len(ACTION_NAMES)

# Unit displacement per action, scaled by step_size in step().
_ACTION_DELTAS = np.array(
    [[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]
)

SCENARIOS = ("same_landmark", "different_landmark")
REWARD_MODES = ("sparse", "dense")

# Canonical layout constants (start jitter is added on top of these).
AGENT_SPACING = 0.15
SAME_LANDMARK_POS = np.array([[1.0, 0.6]])
DIFFERENT_LANDMARK_POS = np.array([[-1.0, 0.45], [1.0, 0.45]])


class ConfigurationError(ValueError):
    """Raised for invalid scenario/world configuration."""


class EpisodeExhaustedError(RuntimeError):
    """Raised when step() is called after the episode horizon."""


@dataclass(frozen=True)
class WorldConfig:
    n_agents: int = 2
    scenario: str = "same_landmark"
    reward_mode: str = "sparse"
    half_extent: float = 1.0
    step_size: float = 0.1
    episode_length: int = 50
    success_radius: float = 0.1
    collision_radius: float = 0.05
    c_collide: float = 1.0
    c_success: float = 5.0
    start_jitter: float = 0.05

    @property
    def n_landmarks(self) -> int:
        return 1 if self.scenario == "same_landmark" else 2

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_landmarks + 2 * (self.n_agents - 1)

    def validate(self) -> None:
        if self.n_agents not in (2, 4):
            raise ConfigurationError(f"n_agents must be 2 or 4, got {self.n_agents}")
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.reward_mode not in REWARD_MODES:
            raise ConfigurationError(f"unknown reward_mode {self.reward_mode!r}")
        if not 0.0 < self.step_size < self.half_extent:
            raise ConfigurationError("need 0 < step_size < half_extent")
        if not 0.0 < self.success_radius < self.half_extent:
            raise ConfigurationError("need 0 < success_radius < half_extent")
        if self.episode_length < 1:
            raise ConfigurationError("episode_length must be >= 1")
        if self.c_success < 0.0:
            raise ConfigurationError("c_success must be >= 0")
        if self.start_jitter < 0.0:
            raise ConfigurationError("start_jitter must be >= 0")


@dataclass(frozen=True)
class EnvState:
    agent_positions: np.ndarray  # (N, 2)
    landmark_positions: np.ndarray  # (L, 2)
    landmark_assignment: tuple[int, ...]  # agent index -> landmark index
    timestep: int


@dataclass(frozen=True)
class StepResult:
    next_joint_obs: np.ndarray  # (N, obs_dim)
    extrinsic_reward: float
    done: bool
    success: bool


def landmark_assignment(scenario: str, n_agents: int) -> tuple[int, ...]:
    """Fixed agent-to-landmark mapping: all to 0, or alternating by index."""
    if scenario == "same_landmark":
        return tuple(0 for _ in range(n_agents))
    if scenario == "different_landmark":
        return tuple(i % 2 for i in range(n_agents))
    raise ConfigurationError(f"unknown scenario {scenario!r}")


def canonical_layout(config: WorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Jitter-free start positions and landmark positions for a scenario.

    Agents always start in a centered row at the origin. same_landmark puts
    the shared landmark on the right edge, well away from the corners;
    different_landmark puts one landmark on the left edge and one on the
    right, slightly lower. Every landmark is 14-16 grid moves from the
    center, so a straight run reaches it with over half the episode left to
    sit on it — but an agent that merely holds a constant direction ends up
    pinned in a corner, not docked, so stopping on the landmark has to be
    learned.
    """
    n = config.n_agents
    offsets = AGENT_SPACING * (np.arange(n) - (n - 1) / 2.0)
    starts = np.zeros((n, 2))
    starts[:, 0] = offsets
    if config.scenario == "same_landmark":
        landmarks = SAME_LANDMARK_POS.copy()
    else:
        landmarks = DIFFERENT_LANDMARK_POS.copy()
    return starts, landmarks


def reset(config: WorldConfig, rng: np.random.Generator) -> tuple[EnvState, np.ndarray]:
    """Start a new episode; agents get per-component uniform start jitter."""
    config.validate()
    starts, landmarks = canonical_layout(config)
    j = config.start_jitter
    starts = starts + rng.uniform(-j, j, size=starts.shape)
    h = config.half_extent
    state = EnvState(
        agent_positions=np.clip(starts, -h, h),
        landmark_positions=landmarks,
        landmark_assignment=landmark_assignment(config.scenario, config.n_agents),
        timestep=0,
    )
    return state, observe(state)


def observe(state: EnvState) -> np.ndarray:
    """Per-agent observations: relative landmark positions, then relative
    positions of the other agents in ascending index order (self skipped)."""
    pos = state.agent_positions
    n = pos.shape[0]
    rel_landmarks = state.landmark_positions[None, :, :] - pos[:, None, :]  # (N, L, 2)
    rel_agents = pos[None, :, :] - pos[:, None, :]  # (N, N, 2), row n: others - n
    obs = np.empty((n, 2 * state.landmark_positions.shape[0] + 2 * (n - 1)))
    lm_flat = rel_landmarks.reshape(n, -1)
    obs[:, : lm_flat.shape[1]] = lm_flat
    for i in range(n):
        others = np.delete(rel_agents[i], i, axis=0)
        obs[i, lm_flat.shape[1]:] = others.ravel()
    return obs


def step(
    config: WorldConfig, state: EnvState, joint_action: tuple[int, ...] | list[int]
) -> tuple[EnvState, StepResult]:
    """Move every agent one step_size along its action, clamp to the world,
    advance the clock, and score the new state under the reward mode."""
    if state.timestep >= config.episode_length:
        raise EpisodeExhaustedError(
            f"episode already finished at t={state.timestep}"
        )
    actions = np.asarray(joint_action, dtype=int)
    if actions.shape != (config.n_agents,) or actions.min() < 0 or actions.max() >= N_ACTIONS:
        raise ValueError(f"joint_action must be {config.n_agents} indices in [0, 5)")
    h = config.half_extent
    new_pos = np.clip(
        state.agent_positions + config.step_size * _ACTION_DELTAS[actions], -h, h
    )
    new_state = replace(state, agent_positions=new_pos, timestep=state.timestep + 1)
    if config.reward_mode == "sparse":
        reward, success = sparse_reward(config, new_state)
    else:
        reward = dense_reward(config, new_state)
        _, success = sparse_reward(config, new_state)
    return new_state, StepResult(
        next_joint_obs=observe(new_state),
        extrinsic_reward=reward,
        done=new_state.timestep >= config.episode_length,
        success=success,
    )


def sparse_reward(config: WorldConfig, state: EnvState) -> tuple[float, bool]:
    """1 iff every agent is within success_radius of its assigned landmark."""
    targets = state.landmark_positions[list(state.landmark_assignment)]
    dists = np.linalg.norm(state.agent_positions - targets, axis=1)
    success = bool(np.all(dists <= config.success_radius))
    return (1.0 if success else 0.0), success


def dense_reward(config: WorldConfig, state: EnvState) -> float:
    """Distance-and-collision shaping with a success bonus on top.

    Negative sum over agents of the distance to each agent's assigned
    landmark, minus a penalty per colliding agent pair (pairwise distance
    < 2*collision_radius), plus c_success whenever the all-agents success
    predicate holds. The pull term alone pays hovering near a landmark
    almost as well as sitting on it, so a critic trained on it ranks
    actions by approach direction and never by the final docking step;
    the bonus separates docked from nearly-docked states by a margin the
    critic cannot smooth away."""
    pos = state.agent_positions
    targets = state.landmark_positions[list(state.landmark_assignment)]
    dists = np.linalg.norm(pos - targets, axis=1)
    reward = -float(dists.sum())
    if np.all(dists <= config.success_radius):
        reward += config.c_success
    n = pos.shape[0]
    threshold = 2.0 * config.collision_radius
    for i in range(n):
        for k in range(i + 1, n):
            if np.linalg.norm(pos[i] - pos[k]) < threshold:
                reward -= config.c_collide
    return reward


class NavEnv:
    """Stateful convenience wrapper over the functional reset/step core.

    One instance per logical training thread; instances share nothing.
    """

    def __init__(self, config: WorldConfig):
        config.validate()
        self.config = config
        self.state: EnvState | None = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state, obs = reset(self.config, rng)
        return obs

    def step(self, joint_action) -> StepResult:
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        self.state, result = step(self.config, self.state, joint_action)
        return result


def trajectory_line(
    timestep: int,
    positions: np.ndarray,
    joint_action: tuple[int, ...] | list[int],
    reward: float,
    success: bool,
) -> str:
    """One replay-log line: timestep, positions, action names, reward, success.

    Floats use 17 significant digits so parsing the line back is bit-exact.
    """
    fields = [str(timestep)]
    fields.extend(f"{v:.17g}" for v in np.asarray(positions).ravel())
    fields.extend(ACTION_NAMES[a] for a in joint_action)
    fields.append(f"{reward:.17g}")
    fields.append("1" if success else "0")
    return ",".join(fields)


def parse_trajectory_line(line: str, n_agents: int) -> dict:
    """Inverse of trajectory_line."""
    parts = line.strip().split(",")
    t = int(parts[0])
    coords = [float(v) for v in parts[1 : 1 + 2 * n_agents]]
    actions = tuple(
        ACTION_NAMES.index(name) for name in parts[1 + 2 * n_agents : 1 + 3 * n_agents]
    )
    reward = float(parts[1 + 3 * n_agents])
    success = parts[2 + 3 * n_agents] == "1"
    return {
        "timestep": t,
        "positions": np.array(coords).reshape(n_agents, 2),
        "joint_action": actions,
        "reward": reward,
        "success": success,
    }
