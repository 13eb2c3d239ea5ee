from __future__ import annotations

from collections import deque
from typing import NamedTuple

import numpy as np

from replaylab.core.errors import EnvironmentStateError
from replaylab.schemas.study import EnvSection

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
_MOVES: dict[int, tuple[int, int]] = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

FOUR_ROOMS = (
    "     #     ",
    "     #     ",
    "           ",
    "     #     ",
    "     #     ",
    "# ####     ",
    "     ### ##",
    "     #     ",
    "     #     ",
    "           ",
    "     #     ",
)
FOUR_ROOMS_START = (0, 0)
FOUR_ROOMS_GOAL = (10, 10)
FOUR_ROOMS_OPTIMAL_STEPS = 20
FOUR_ROOMS_CAP = 100


def _maze_layout() -> tuple[str, ...]:
    rows = [" " * 15 for _ in range(15)]
    rows[3] = "#" * 14 + " "
    rows[7] = " " + "#" * 14
    rows[11] = "#" * 14 + " "
    return tuple(rows)


SPARSE_MAZE = _maze_layout()
SPARSE_MAZE_START = (0, 0)
SPARSE_MAZE_GOAL = (14, 0)
SPARSE_MAZE_OPTIMAL_STEPS = 70
SPARSE_MAZE_CAP = 400

CHAIN_CAP = 50
GOAL_REWARD = 1.0


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool


class ModelStep(NamedTuple):
    next_state: int
    reward: float
    terminal: bool


class Environment:
    """Episodic environment over integer states with one-hot observations."""

    name: str
    num_states: int
    num_actions: int

    def __init__(
        self,
        *,
        episode_cap: int,
        reward_noise: bool = False,
        noise_sigma: float = 0.5,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.episode_cap = episode_cap
        self.reward_noise = reward_noise
        self.noise_sigma = noise_sigma
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state = self.start_state
        self.steps = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.num_states

    @property
    def start_state(self) -> int:
        raise NotImplementedError

    def model(self, state: int, action: int) -> ModelStep:
        """Deterministic dynamics with the mean reward."""
        raise NotImplementedError

    def open_states(self) -> list[int]:
        raise NotImplementedError

    def observe(self, state: int) -> np.ndarray:
        observation = np.zeros(self.num_states, dtype=np.float64)
        observation[state] = 1.0
        return observation

    def reset(self) -> np.ndarray:
        self.state = self.start_state
        self.steps = 0
        self.done = False
        return self.observe(self.state)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvironmentStateError(f"{self.name}: step called on a finished episode; call reset()")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} outside [0, {self.num_actions})")
        outcome = self.model(self.state, action)
        reward = outcome.reward
        if outcome.terminal and self.reward_noise:
            reward += self.noise_sigma * float(self.rng.standard_normal())
        self.state = outcome.next_state
        self.steps += 1
        truncated = not outcome.terminal and self.steps >= self.episode_cap
        self.done = outcome.terminal or truncated
        return StepResult(self.observe(self.state), reward, outcome.terminal, truncated)

    def return_range(self) -> tuple[float, float]:
        if not self.reward_noise:
            return 0.0, GOAL_REWARD
        spread = 3.0 * self.noise_sigma
        return min(0.0, GOAL_REWARD - spread), GOAL_REWARD + spread

    def terminal_states(self) -> set[int]:
        return set()


class GridEnvironment(Environment):
    """Grid from a layout of ' ' (open) and '#' (wall); reaching the goal ends the episode with reward 1."""

    def __init__(
        self,
        name: str,
        layout: tuple[str, ...],
        start: tuple[int, int],
        goal: tuple[int, int],
        **kwargs: object,
    ) -> None:
        self.name = name
        self.layout = layout
        self.height = len(layout)
        self.width = len(layout[0])
        if any(len(row) != self.width for row in layout):
            raise ValueError(f"{name}: layout rows must share one width")
        self.start = start
        self.goal = goal
        for cell in (start, goal):
            if not self.is_open(cell):
                raise ValueError(f"{name}: {cell} is not an open cell")
        self.num_states = self.height * self.width
        self.num_actions = len(_MOVES)
        super().__init__(**kwargs)

    def is_open(self, cell: tuple[int, int]) -> bool:
        row, col = cell
        return 0 <= row < self.height and 0 <= col < self.width and self.layout[row][col] != "#"

    def index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, state: int) -> tuple[int, int]:
        return divmod(state, self.width)

    @property
    def start_state(self) -> int:
        return self.index(self.start)

    def open_states(self) -> list[int]:
        return [self.index((r, c)) for r in range(self.height) for c in range(self.width) if self.is_open((r, c))]

    def terminal_states(self) -> set[int]:
        return {self.index(self.goal)}

    def model(self, state: int, action: int) -> ModelStep:
        row, col = self.cell(state)
        d_row, d_col = _MOVES[action]
        target = (row + d_row, col + d_col)
        if not self.is_open(target):
            target = (row, col)
        if target == self.goal:
            return ModelStep(self.index(target), GOAL_REWARD, True)
        return ModelStep(self.index(target), 0.0, False)


class ChainEnvironment(Environment):
    """States 0..length-1; action 1 moves right, action 0 left; the last state is the goal."""

    def __init__(self, length: int = 5, **kwargs: object) -> None:
        if length < 2:
            raise ValueError(f"chain length must be >= 2, got {length}")
        self.name = "chain"
        self.num_states = length
        self.num_actions = 2
        super().__init__(**kwargs)

    @property
    def start_state(self) -> int:
        return 0

    def open_states(self) -> list[int]:
        return list(range(self.num_states))

    def terminal_states(self) -> set[int]:
        return {self.num_states - 1}

    def model(self, state: int, action: int) -> ModelStep:
        target = min(state + 1, self.num_states - 1) if action == 1 else max(state - 1, 0)
        if target == self.num_states - 1:
            return ModelStep(target, GOAL_REWARD, True)
        return ModelStep(target, 0.0, False)


class StickyActions:
    """With probability `stickiness` the previous executed action repeats instead of the requested one."""

    def __init__(self, env: Environment, stickiness: float, rng: np.random.Generator) -> None:
        if not 0.0 <= stickiness <= 1.0:
            raise ValueError(f"stickiness must lie in [0, 1], got {stickiness}")
        self.env = env
        self.stickiness = stickiness
        self.rng = rng
        self.last_action: int | None = None
        self.repeated = False

    def __getattr__(self, name: str) -> object:
        return getattr(self.env, name)

    def reset(self) -> np.ndarray:
        self.last_action = None
        self.repeated = False
        return self.env.reset()

    def step(self, action: int) -> StepResult:
        executed = action
        self.repeated = False
        if self.stickiness > 0.0 and self.last_action is not None and self.rng.random() < self.stickiness:
            executed = self.last_action
            self.repeated = True
        self.last_action = executed
        return self.env.step(executed)


def gridworld(**kwargs: object) -> GridEnvironment:
    kwargs.setdefault("episode_cap", FOUR_ROOMS_CAP)
    return GridEnvironment("gridworld", FOUR_ROOMS, FOUR_ROOMS_START, FOUR_ROOMS_GOAL, **kwargs)


def sparse_maze(**kwargs: object) -> GridEnvironment:
    kwargs.setdefault("episode_cap", SPARSE_MAZE_CAP)
    return GridEnvironment("sparse_maze", SPARSE_MAZE, SPARSE_MAZE_START, SPARSE_MAZE_GOAL, **kwargs)


def chain(length: int = 5, **kwargs: object) -> ChainEnvironment:
    kwargs.setdefault("episode_cap", CHAIN_CAP)
    return ChainEnvironment(length, **kwargs)


def make_env(section: EnvSection, rng: np.random.Generator) -> Environment | StickyActions:
    noise_rng, sticky_rng = rng.spawn(2)
    kwargs: dict[str, object] = {
        "reward_noise": section.reward_noise,
        "noise_sigma": section.noise_sigma,
        "rng": noise_rng,
    }
    if section.episode_cap is not None:
        kwargs["episode_cap"] = section.episode_cap
    match section.name:
        case "gridworld":
            env: Environment = gridworld(**kwargs)
        case "sparse_maze":
            env = sparse_maze(**kwargs)
        case "chain":
            env = chain(section.chain_length, **kwargs)
        case _:
            raise ValueError(f"Unknown environment: {section.name}")
    if section.sticky > 0.0:
        return StickyActions(env, section.sticky, sticky_rng)
    return env


def unwrap(env: Environment | StickyActions) -> Environment:
    return env.env if isinstance(env, StickyActions) else env


def bfs_distance(env: GridEnvironment | ChainEnvironment) -> int:
    start = env.start_state
    goals = env.terminal_states()
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        state, distance = queue.popleft()
        if state in goals:
            return distance
        for action in range(env.num_actions):
            nxt = env.model(state, action).next_state
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, distance + 1))
    raise ValueError(f"{env.name}: goal unreachable from start")


def value_iteration(env: Environment, gamma: float, *, tol: float = 1e-12, max_sweeps: int = 100_000) -> np.ndarray:
    """Q* over (num_states, num_actions); rows of walls and the goal stay 0."""
    q = np.zeros((env.num_states, env.num_actions))
    states = env.open_states()
    terminals = env.terminal_states()
    model = {(s, a): env.model(s, a) for s in states if s not in terminals for a in range(env.num_actions)}
    for _ in range(max_sweeps):
        delta = 0.0
        for (state, action), outcome in model.items():
            bootstrap = 0.0 if outcome.terminal else gamma * q[outcome.next_state].max()
            value = outcome.reward + bootstrap
            delta = max(delta, abs(value - q[state, action]))
            q[state, action] = value
        if delta <= tol:
            return q
    raise RuntimeError(f"value iteration did not converge within {max_sweeps} sweeps")
