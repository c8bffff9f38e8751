"""Surrogate for the frozen policy backbone.

Maps (observation, task) to a fixed-dimension latent readout and proposes
action chunks. The proposal is greedy toward the task's current subgoal, but
with probability epsilon it heads for the decoy region instead, so the prior
can be made deliberately inaccurate. All parameters are frozen at
construction; nothing here is ever trained.

The readout is an entangled representation on purpose: raw geometric features
pass through a fixed random projection and a tanh, so no coordinate is
directly readable and a value head has to actually decode it. The interface a
real policy adapter must provide is exactly `readout` plus
`sample_candidates`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chunks import (
    DEFAULT_TAU,
    DOWN,
    GRASP,
    LEFT,
    NOOP,
    RELEASE,
    RIGHT,
    UP,
    Chunk,
    ChunkDistribution,
    ChunkLibrary,
    beta_distribution,
    psi_distribution,
)
from .envsim import FAMILIES, ChunkGrid, Coord, Observation, TaskSpec
from .errors import ConfigError

DEFAULT_LATENT_DIM = 32
DEFAULT_EPSILON_COLLECT = 0.1
DEFAULT_EPSILON_EVAL = 0.3


@dataclass(frozen=True)
class PriorConfig:
    epsilon: float = DEFAULT_EPSILON_COLLECT
    tau: float = DEFAULT_TAU
    latent_dim: int = DEFAULT_LATENT_DIM
    seed: int = 7

    def validate(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")


class SurrogatePrior:
    """Frozen proposal policy + latent readout over a ChunkGrid environment."""

    def __init__(self, env: ChunkGrid, library: ChunkLibrary, config: PriorConfig | None = None):
        self.config = config if config is not None else PriorConfig()
        self.config.validate()
        self.env = env
        self.library = library
        self.chunk_len = library.chunk_len
        self.num_tasks = len(env.layouts.tasks)
        # gripper + objects + goal rect + relative vectors + held flags
        # + remaining-horizon fraction + family one-hot + task-id encoding
        self.feature_dim = 2 + 2 * env.layouts.num_objects + 4 + 4 + 2 + 1 + len(FAMILIES) + 1
        if self.config.latent_dim < self.feature_dim:
            raise ConfigError(
                f"latent_dim {self.config.latent_dim} below feature dimension "
                f"{self.feature_dim}; readout would not be injective"
            )
        rng = np.random.default_rng(self.config.seed)
        self.projection = rng.normal(
            0.0, 1.0 / np.sqrt(self.feature_dim), size=(self.config.latent_dim, self.feature_dim)
        )
        if np.linalg.matrix_rank(self.projection) < self.feature_dim:
            raise ConfigError("projection matrix is rank-deficient; pick another seed")
        self._nearest_cache: dict[Chunk, int] = {}

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def _raw_features(self, obs: Observation, task: TaskSpec) -> np.ndarray:
        n = self.env.grid_size - 1

        def norm(v: float) -> float:
            return 2.0 * v / n - 1.0

        target = obs.object_pos[task.target_object]
        goal = obs.goal_region
        goal_cx = (goal.x0 + goal.x1) / 2.0
        goal_cy = (goal.y0 + goal.y1) / 2.0
        feats = [norm(obs.gripper_pos[0]), norm(obs.gripper_pos[1])]
        for pos in obs.object_pos:
            feats.extend([norm(pos[0]), norm(pos[1])])
        feats.extend([norm(goal.x0), norm(goal.y0), norm(goal.x1), norm(goal.y1)])
        feats.extend(
            [
                (target[0] - obs.gripper_pos[0]) / n,
                (target[1] - obs.gripper_pos[1]) / n,
                (goal_cx - target[0]) / n,
                (goal_cy - target[1]) / n,
            ]
        )
        feats.append(1.0 if obs.held is not None else 0.0)
        feats.append(1.0 if obs.held == task.target_object else 0.0)
        # Remaining-horizon fraction: under a hard timeout the value of a state
        # is genuinely time-dependent, so the summary has to carry it.
        feats.append(2.0 * obs.step_index / self.env.timeout - 1.0)
        for family in FAMILIES:
            feats.append(1.0 if task.family == family else 0.0)
        feats.append(2.0 * task.task_id / max(1, self.num_tasks - 1) - 1.0)
        return np.array(feats)

    def readout(self, obs: Observation, task: TaskSpec) -> np.ndarray:
        """Deterministic latent summary of (observation, task); entries in (-1, 1)."""
        return np.tanh(self.projection @ self._raw_features(obs, task))

    def _move_chunk(self, src: Coord, dst: Coord) -> Chunk:
        dx = dst[0] - src[0]
        dy = dst[1] - src[1]
        if dx == 0 and dy == 0:
            return (NOOP,) * self.chunk_len
        if abs(dx) >= abs(dy):
            direction = RIGHT if dx > 0 else LEFT
            run = min(self.chunk_len, abs(dx))
        else:
            direction = UP if dy > 0 else DOWN
            run = min(self.chunk_len, abs(dy))
        return (direction,) * run + (NOOP,) * (self.chunk_len - run)

    def _desired_chunk(self, obs: Observation, task: TaskSpec, toward_decoy: bool) -> Chunk:
        gripper = obs.gripper_pos
        if toward_decoy:
            # The inaccurate branch confuses which basket is the goal: it
            # navigates toward the decoy, but the place-down reflex inside
            # either basket is unaffected.
            if obs.held is not None and (
                task.decoy_region.contains(gripper) or task.goal_region.contains(gripper)
            ):
                return (RELEASE,) * self.chunk_len
            if task.decoy_region.contains(gripper):
                return (NOOP,) * self.chunk_len
            return self._move_chunk(gripper, task.decoy_region.nearest_cell(gripper))
        if obs.held is None:
            target = obs.object_pos[task.target_object]
            if gripper == target:
                return (GRASP,) * self.chunk_len
            return self._move_chunk(gripper, target)
        if obs.held != task.target_object:
            return (RELEASE,) * self.chunk_len
        if task.goal_region.contains(gripper):
            return (RELEASE,) * self.chunk_len
        return self._move_chunk(gripper, task.goal_region.nearest_cell(gripper))

    def _nearest_library_chunk(self, desired: Chunk) -> Chunk:
        idx = self._nearest_cache.get(desired)
        if idx is None:
            idx = self.library.nearest(desired)
            self._nearest_cache[desired] = idx
        return self.library[idx]

    def propose_center(self, obs: Observation, task: TaskSpec, rng: np.random.Generator) -> Chunk:
        """Library chunk best matching the greedy move toward the current subgoal.

        With probability epsilon the subgoal is swapped for the decoy region.
        The epsilon draw is consumed on every call so streams stay aligned
        across configurations.
        """
        toward_decoy = rng.random() < self.config.epsilon
        desired = self._desired_chunk(obs, task, toward_decoy)
        return self._nearest_library_chunk(desired)

    def sample_candidates(
        self, obs: Observation, task: TaskSpec, k: int, rng: np.random.Generator
    ) -> tuple[list[Chunk], ChunkDistribution]:
        """Draw k distinct chunks from the proposal softmax around a sampled center."""
        m = len(self.library)
        if k < 1:
            raise ConfigError(f"candidate count must be >= 1, got {k}")
        if k > m:
            raise ConfigError(f"candidate count {k} exceeds library size {m}")
        center = self.propose_center(obs, task, rng)
        beta = beta_distribution(center, self.library, self.config.tau)
        idx = rng.choice(m, size=k, replace=False, p=beta.probs)
        candidates = [self.library[int(i)] for i in idx]
        psi = psi_distribution(
            candidates, center, self.config.tau, support=tuple(int(i) for i in idx)
        )
        return candidates, psi
