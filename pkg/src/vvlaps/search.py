"""Tree search over action chunks, guided by the prior and optionally a value head.

Each search call builds a fresh tree from the current state. A simulation is
one select / expand / rollout / backpropagate pass. Selection maximizes

    score = Q + psi * sqrt(N) / (1 + N)

where in "v-vlaps" mode Q is the cached value of the successor state (exact
reward for terminal successors, value-head estimate otherwise; never updated
by backpropagation), and in baseline "vlaps" mode Q is the backed-up mean
return W/N (0 when unvisited). The U term is implemented verbatim: it is 0 at
N = 0 and peaks at N = 1, so unvisited edges are ranked purely by Q.

The search stops at the first simulated trajectory that reaches success and
returns the full chunk sequence as an executable plan; replaying it from the
root state reproduces the success because transitions are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .chunks import Chunk
from .envsim import ChunkGrid, EnvState, EpisodeOutcome, Observation, TaskSpec
from .errors import ConfigError, InvariantError, UsageError
from .prior import SurrogatePrior
from .valuehead import ValueHeadParams, forward

MODE_VLAPS = "vlaps"
MODE_V_VLAPS = "v-vlaps"
MODES = (MODE_VLAPS, MODE_V_VLAPS)

DEFAULT_BUDGET = 32
DEFAULT_CANDIDATES = 5

ValueFn = Callable[[Observation, TaskSpec], float]


@dataclass
class SearchConfig:
    mode: str = MODE_V_VLAPS
    budget: int = DEFAULT_BUDGET
    k: int = DEFAULT_CANDIDATES
    rollout_depth: int | None = None  # None: the environment horizon is the cap
    gamma: float = 0.99
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.rollout_depth is not None and self.rollout_depth < 0:
            raise ConfigError(f"rollout_depth must be >= 0, got {self.rollout_depth}")


class Edge:
    __slots__ = ("chunk", "psi", "n", "w", "child", "child_value")

    def __init__(self, chunk: Chunk, psi: float, child: "SearchNode", child_value: float | None):
        self.chunk = chunk
        self.psi = psi
        self.n = 0
        self.w = 0.0
        self.child = child
        self.child_value = child_value


class SearchNode:
    __slots__ = ("state", "obs", "terminal", "reward", "edges")

    def __init__(self, state: EnvState, obs: Observation, terminal: bool, reward: int):
        self.state = state
        self.obs = obs
        self.terminal = terminal
        self.reward = reward
        self.edges: list[Edge] | None = None  # None until expanded

    @property
    def expanded(self) -> bool:
        return self.edges is not None


def u_term(psi: float, n: int) -> float:
    """Exploration term psi * sqrt(N) / (1 + N); zero at N=0, maximal at N=1."""
    return psi * math.sqrt(n) / (1.0 + n)


def edge_score(edge: Edge, mode: str) -> float:
    if mode == MODE_V_VLAPS:
        if edge.child_value is None:
            raise InvariantError("v-vlaps edge without a cached child value")
        q = edge.child_value
    elif mode == MODE_VLAPS:
        q = edge.w / edge.n if edge.n > 0 else 0.0
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return q + u_term(edge.psi, edge.n)


def select(node: SearchNode, mode: str) -> Edge:
    """Edge with the maximal score; exact ties go to the lowest index."""
    if node.edges is None:
        raise UsageError("select called on an unexpanded node")
    if node.terminal:
        raise UsageError("select called on a terminal node")
    best = node.edges[0]
    best_score = edge_score(best, mode)
    for edge in node.edges[1:]:
        score = edge_score(edge, mode)
        if score > best_score:
            best, best_score = edge, score
    return best


def expand(
    node: SearchNode,
    env: ChunkGrid,
    prior: SurrogatePrior,
    task: TaskSpec,
    k: int,
    rng: np.random.Generator,
    mode: str,
    value_fn: Optional[ValueFn] = None,
) -> None:
    """Create k candidate edges, stepping a cloned state for each successor.

    In v-vlaps mode every edge caches its successor's value: the exact reward
    for terminal children, the value head's estimate otherwise.
    """
    if node.terminal:
        raise UsageError("expand called on a terminal node")
    if node.edges is not None:
        raise UsageError("node already expanded")
    candidates, psi = prior.sample_candidates(node.obs, task, k, rng)
    edges = []
    for chunk, p in zip(candidates, psi.probs):
        result = env.step_chunk(env.clone_state(node.state), chunk)
        child = SearchNode(result.state, result.obs, result.terminal, result.reward)
        if mode == MODE_V_VLAPS:
            if result.terminal:
                child_value = float(result.reward)
            else:
                if value_fn is None:
                    raise ConfigError("v-vlaps mode requires a value function")
                child_value = float(value_fn(result.obs, task))
        else:
            child_value = None
        edges.append(Edge(chunk, float(p), child, child_value))
    node.edges = edges


@dataclass
class RolloutResult:
    value: float  # gamma^(decision steps to success), or 0
    chunks: list[Chunk]
    success: bool


def rollout(
    env: ChunkGrid,
    prior: SurrogatePrior,
    state: EnvState,
    rng: np.random.Generator,
    gamma: float = 0.99,
    depth_cap: int | None = None,
) -> RolloutResult:
    """Execute prior proposals from the state until terminal or the depth cap."""
    if state.terminated:
        return RolloutResult(float(state.reward), [], state.reward == 1)
    task = env.task(state.task_id)
    obs = env.observe(state)
    discount = 1.0
    chunks: list[Chunk] = []
    steps = 0
    while depth_cap is None or steps < depth_cap:
        chunk = prior.propose_center(obs, task, rng)
        result = env.step_chunk(state, chunk)
        chunks.append(chunk)
        steps += 1
        discount *= gamma
        state, obs = result.state, result.obs
        if result.terminal:
            if result.reward == 1:
                return RolloutResult(discount, chunks, True)
            return RolloutResult(0.0, chunks, False)
    return RolloutResult(0.0, chunks, False)


def backpropagate(path: list[Edge], g: float, gamma: float = 0.99) -> None:
    """Increment visits along the path; accumulate returns discounted toward the root."""
    below = 0
    for edge in reversed(path):
        edge.n += 1
        edge.w += (gamma**below) * g
        below += 1


@dataclass
class SearchResult:
    plan: list[Chunk]
    simulations: int
    success_found: bool
    root: SearchNode

    def root_stats(self) -> list[dict]:
        if self.root.edges is None:
            return []
        return [
            {
                "chunk": list(e.chunk),
                "psi": e.psi,
                "n": e.n,
                "w": e.w,
                "child_value": e.child_value,
            }
            for e in self.root.edges
        ]


def search(
    env: ChunkGrid,
    prior: SurrogatePrior,
    root_state: EnvState,
    config: SearchConfig,
    value_fn: Optional[ValueFn] = None,
    rng: np.random.Generator | None = None,
) -> SearchResult:
    """Run up to `budget` simulations from the root state.

    Returns at the first simulated success with the full plan (tree-path
    chunks plus rollout chunks); otherwise the plan holds the root edge with
    the most visits (ties: higher score, then lower index).
    """
    config.validate()
    if root_state.terminated:
        raise UsageError("search called on a terminal root state")
    if config.mode == MODE_V_VLAPS and value_fn is None:
        raise ConfigError("v-vlaps mode requires a value function")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    task = env.task(root_state.task_id)
    root = SearchNode(root_state, env.observe(root_state), False, 0)

    for sim in range(1, config.budget + 1):
        node = root
        path: list[Edge] = []
        while node.expanded and not node.terminal:
            edge = select(node, config.mode)
            path.append(edge)
            node = edge.child

        rollout_chunks: list[Chunk] = []
        if node.terminal:
            g = float(node.reward)
            success = node.reward == 1
        else:
            expand(node, env, prior, task, config.k, rng, config.mode, value_fn)
            assert node.edges is not None
            success_edge = next(
                (e for e in node.edges if e.child.terminal and e.child.reward == 1), None
            )
            if success_edge is not None:
                path.append(success_edge)
                g = 1.0
                success = True
            else:
                edge = select(node, config.mode)
                path.append(edge)
                result = rollout(
                    env, prior, edge.child.state, rng, config.gamma, config.rollout_depth
                )
                g = result.value
                success = result.success
                rollout_chunks = result.chunks

        backpropagate(path, g, config.gamma)
        if success:
            plan = [e.chunk for e in path] + rollout_chunks
            return SearchResult(plan, sim, True, root)

    assert root.edges is not None
    best = root.edges[0]
    for edge in root.edges[1:]:
        if edge.n > best.n or (
            edge.n == best.n and edge_score(edge, config.mode) > edge_score(best, config.mode)
        ):
            best = edge
    return SearchResult([best.chunk], config.budget, False, root)


@dataclass
class ActResult:
    outcome: EpisodeOutcome
    simulations_per_call: list[int]
    success_found_per_call: list[bool]


def act_episode(
    env: ChunkGrid,
    prior: SurrogatePrior,
    task_id: int,
    init_id: int,
    config: SearchConfig,
    value_fn: Optional[ValueFn] = None,
    rng: np.random.Generator | None = None,
) -> ActResult:
    """Search at every decision step of a real episode.

    A successful search executes its whole plan; otherwise the best root chunk
    is executed and the search restarts from the new state.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    state, _ = env.reset(task_id, init_id)
    decision_steps = 0
    sims: list[int] = []
    found: list[bool] = []
    while not state.terminated:
        result = search(env, prior, state, config, value_fn, rng)
        sims.append(result.simulations)
        found.append(result.success_found)
        if result.success_found:
            for chunk in result.plan:
                step = env.step_chunk(state, chunk)
                state = step.state
                decision_steps += 1
                if step.terminal:
                    break
            if not (state.terminated and state.reward == 1):
                raise InvariantError("replaying a successful plan did not end in success")
        else:
            step = env.step_chunk(state, result.plan[0])
            state = step.state
            decision_steps += 1
    outcome = EpisodeOutcome(
        reward=state.reward,
        final_step=decision_steps - 1,
        decision_steps=decision_steps,
        wall_steps=state.step_index,
    )
    return ActResult(outcome, sims, found)


def value_fn_from_params(prior: SurrogatePrior, params: ValueHeadParams) -> ValueFn:
    """Adapter: evaluate the value head on the prior's readout of (obs, task)."""

    def fn(obs: Observation, task: TaskSpec) -> float:
        return forward(params, prior.readout(obs, task))

    return fn
