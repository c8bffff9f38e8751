"""ChunkGrid: a deterministic, resettable grid manipulation environment.

A gripper moves on a small grid, grasps objects and releases them; a task is
solved when its target object sits inside the goal region and is not held.
Reward is sparse: 1 at the terminal step of a successful episode, 0 otherwise.
Episodes are hard-capped at a low-level step horizon.

States are immutable values; every operation is a pure function of its inputs,
so cloned states can be stepped independently (and concurrently) without any
shared mutable state.

Task and layout definitions live in a JSON file; the packaged default defines
two families x ten tasks x ten initializations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .chunks import DOWN, GRASP, LEFT, NOOP, RELEASE, RIGHT, UP, Chunk
from .errors import ConfigError, UsageError

FETCH = "fetch"
SPATIAL = "spatial"
FAMILIES = (FETCH, SPATIAL)

DEFAULT_GRID_SIZE = 12
DEFAULT_NUM_OBJECTS = 2
DEFAULT_TIMEOUT = 120

Coord = tuple[int, int]


@dataclass(frozen=True)
class Rect:
    """Inclusive axis-aligned cell rectangle."""

    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, pos: Coord) -> bool:
        return self.x0 <= pos[0] <= self.x1 and self.y0 <= pos[1] <= self.y1

    def nearest_cell(self, pos: Coord) -> Coord:
        """Cell of the rectangle closest to pos (componentwise clamp)."""
        return (min(max(pos[0], self.x0), self.x1), min(max(pos[1], self.y0), self.y1))

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.x1 < other.x0 or other.x1 < self.x0 or self.y1 < other.y0 or other.y1 < self.y0
        )

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    family: str
    target_object: int
    goal_region: Rect
    decoy_region: Rect
    instruction: str


@dataclass(frozen=True)
class Observation:
    gripper_pos: Coord
    object_pos: tuple[Coord, ...]
    held: int | None
    goal_region: Rect
    step_index: int
    task_id: int


@dataclass(frozen=True)
class EnvState:
    """Full world state. Immutable; transitions return new states."""

    gripper: Coord
    objects: tuple[Coord, ...]
    held: int | None
    step_index: int
    terminated: bool
    reward: int
    task_id: int


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    obs: Observation
    terminal: bool
    reward: int


@dataclass(frozen=True)
class EpisodeOutcome:
    """Terminal summary of one episode: R, final decision step T, and step counts."""

    reward: int
    final_step: int
    decision_steps: int
    wall_steps: int


@dataclass(frozen=True)
class InitLayout:
    init_id: int
    gripper: Coord
    objects: tuple[Coord, ...]


class LayoutSet:
    """Grid geometry plus all (task, init) layouts, loadable from JSON."""

    def __init__(
        self,
        grid_size: int,
        num_objects: int,
        tasks: list[TaskSpec],
        inits: dict[int, list[InitLayout]],
    ):
        self.grid_size = grid_size
        self.num_objects = num_objects
        self.tasks = {t.task_id: t for t in tasks}
        self.inits = inits
        self._validate()

    def _validate(self) -> None:
        bounds = Rect(0, 0, self.grid_size - 1, self.grid_size - 1)
        for task in self.tasks.values():
            for region in (task.goal_region, task.decoy_region):
                if not (
                    bounds.contains((region.x0, region.y0))
                    and bounds.contains((region.x1, region.y1))
                    and region.x0 <= region.x1
                    and region.y0 <= region.y1
                ):
                    raise ConfigError(f"task {task.task_id}: region {region} out of bounds")
            if task.goal_region.overlaps(task.decoy_region):
                raise ConfigError(f"task {task.task_id}: goal and decoy regions overlap")
            if not 0 <= task.target_object < self.num_objects:
                raise ConfigError(f"task {task.task_id}: bad target object {task.target_object}")
            if task.family not in FAMILIES:
                raise ConfigError(f"task {task.task_id}: unknown family {task.family!r}")
            for init in self.inits.get(task.task_id, []):
                if len(init.objects) != self.num_objects:
                    raise ConfigError(
                        f"task {task.task_id} init {init.init_id}: expected "
                        f"{self.num_objects} objects"
                    )
                for pos in (init.gripper, *init.objects):
                    if not bounds.contains(pos):
                        raise ConfigError(
                            f"task {task.task_id} init {init.init_id}: {pos} out of bounds"
                        )
                if len(set(init.objects)) != len(init.objects):
                    raise ConfigError(
                        f"task {task.task_id} init {init.init_id}: objects share a cell"
                    )

    def task_ids(self) -> list[int]:
        return sorted(self.tasks)

    def init_ids(self, task_id: int) -> list[int]:
        return [init.init_id for init in self.inits.get(task_id, [])]

    def to_json(self) -> str:
        tasks_out = []
        for task_id in self.task_ids():
            task = self.tasks[task_id]
            tasks_out.append(
                {
                    "task_id": task.task_id,
                    "family": task.family,
                    "target_object": task.target_object,
                    "goal_region": task.goal_region.as_list(),
                    "decoy_region": task.decoy_region.as_list(),
                    "instruction": task.instruction,
                    "inits": [
                        {
                            "init_id": init.init_id,
                            "gripper": list(init.gripper),
                            "objects": [list(p) for p in init.objects],
                        }
                        for init in self.inits[task_id]
                    ],
                }
            )
        return json.dumps(
            {"grid_size": self.grid_size, "num_objects": self.num_objects, "tasks": tasks_out},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "LayoutSet":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"layout file is not valid JSON: {exc}") from exc
        tasks = []
        inits: dict[int, list[InitLayout]] = {}
        for entry in data["tasks"]:
            task = TaskSpec(
                task_id=int(entry["task_id"]),
                family=entry["family"],
                target_object=int(entry["target_object"]),
                goal_region=Rect(*entry["goal_region"]),
                decoy_region=Rect(*entry["decoy_region"]),
                instruction=entry["instruction"],
            )
            tasks.append(task)
            inits[task.task_id] = [
                InitLayout(
                    init_id=int(e["init_id"]),
                    gripper=tuple(e["gripper"]),
                    objects=tuple(tuple(p) for p in e["objects"]),
                )
                for e in entry["inits"]
            ]
        return cls(int(data["grid_size"]), int(data["num_objects"]), tasks, inits)

    @classmethod
    def load(cls, path: str | Path) -> "LayoutSet":
        return cls.from_json(Path(path).read_text())


def load_default_layouts() -> LayoutSet:
    """Load the packaged default layout file (2 families x 10 tasks x 10 inits)."""
    text = resources.files("vvlaps").joinpath("data/layouts.json").read_text()
    return LayoutSet.from_json(text)


class ChunkGrid:
    """The environment: static config plus pure transition functions over EnvState."""

    def __init__(self, layouts: LayoutSet | None = None, timeout: int = DEFAULT_TIMEOUT):
        self.layouts = layouts if layouts is not None else load_default_layouts()
        if timeout < 1:
            raise ConfigError(f"timeout must be >= 1, got {timeout}")
        self.timeout = timeout
        self.grid_size = self.layouts.grid_size

    def task(self, task_id: int) -> TaskSpec:
        try:
            return self.layouts.tasks[task_id]
        except KeyError:
            raise ConfigError(f"unknown task_id {task_id}") from None

    def reset(self, task_id: int, init_id: int) -> tuple[EnvState, Observation]:
        task = self.task(task_id)
        inits = {init.init_id: init for init in self.layouts.inits.get(task_id, [])}
        if init_id not in inits:
            raise ConfigError(f"unknown init_id {init_id} for task {task_id}")
        init = inits[init_id]
        state = EnvState(
            gripper=init.gripper,
            objects=init.objects,
            held=None,
            step_index=0,
            terminated=False,
            reward=0,
            task_id=task.task_id,
        )
        return state, self.observe(state)

    def observe(self, state: EnvState) -> Observation:
        task = self.task(state.task_id)
        return Observation(
            gripper_pos=state.gripper,
            object_pos=state.objects,
            held=state.held,
            goal_region=task.goal_region,
            step_index=state.step_index,
            task_id=state.task_id,
        )

    def is_success(self, state: EnvState) -> bool:
        task = self.task(state.task_id)
        in_goal = task.goal_region.contains(state.objects[task.target_object])
        return in_goal and state.held != task.target_object

    def clone_state(self, state: EnvState) -> EnvState:
        # States are immutable values, so an independent copy is just a copy.
        return replace(state)

    def _apply_action(self, state: EnvState, action: str, task: TaskSpec) -> EnvState:
        gx, gy = state.gripper
        objects = state.objects
        held = state.held
        hi = self.grid_size - 1
        if action == UP:
            gy = min(gy + 1, hi)
        elif action == DOWN:
            gy = max(gy - 1, 0)
        elif action == LEFT:
            gx = max(gx - 1, 0)
        elif action == RIGHT:
            gx = min(gx + 1, hi)
        elif action == GRASP:
            if held is None:
                # The decoy basket is deep: objects dropped inside cannot be
                # grasped again, so a misdirected release there is final.
                at_gripper = [
                    i
                    for i, p in enumerate(objects)
                    if p == state.gripper and not task.decoy_region.contains(p)
                ]
                if at_gripper:
                    # Prefer the task's target when several objects share the cell.
                    held = (
                        task.target_object
                        if task.target_object in at_gripper
                        else at_gripper[0]
                    )
        elif action == RELEASE:
            held = None if held is not None else held
        elif action != NOOP:
            raise UsageError(f"unknown action symbol {action!r}")
        gripper = (gx, gy)
        if held is not None and gripper != state.gripper:
            objects = tuple(gripper if i == held else p for i, p in enumerate(objects))
        return replace(
            state, gripper=gripper, objects=objects, held=held, step_index=state.step_index + 1
        )

    def step_chunk(self, state: EnvState, chunk: Chunk) -> StepResult:
        """Apply the chunk's actions in order, stopping early on success or timeout."""
        if state.terminated:
            raise UsageError("step_chunk called on a terminal state")
        task = self.task(state.task_id)
        for action in chunk:
            state = self._apply_action(state, action, task)
            if self.is_success(state):
                state = replace(state, terminated=True, reward=1)
                return StepResult(state, self.observe(state), True, 1)
            if state.step_index >= self.timeout:
                state = replace(state, terminated=True, reward=0)
                return StepResult(state, self.observe(state), True, 0)
        return StepResult(state, self.observe(state), False, 0)


def greedy_decision_steps(
    gripper: Coord, target: Coord, goal_region: Rect, chunk_len: int
) -> int:
    """Decision steps the greedy proposer needs: axis moves + grasp + carry + release."""

    def leg(src: Coord, dst: Coord) -> int:
        return math.ceil(abs(dst[0] - src[0]) / chunk_len) + math.ceil(
            abs(dst[1] - src[1]) / chunk_len
        )

    goal_cell = goal_region.nearest_cell(target)
    return leg(gripper, target) + 1 + leg(target, goal_cell) + 1


def generate_layouts(
    seed: int = 0,
    grid_size: int = DEFAULT_GRID_SIZE,
    num_objects: int = DEFAULT_NUM_OBJECTS,
    tasks_per_family: int = 10,
    inits_per_task: int = 10,
    chunk_len: int = 4,
    min_steps: int = 8,
    max_steps: int = 12,
) -> LayoutSet:
    """Procedurally generate a layout set (deterministic per seed).

    Goal and decoy regions sit against opposite grid edges so that
    decoy-directed behavior genuinely regresses progress. Initial positions
    are rejection-sampled until the greedy solve length lands in
    [min_steps, max_steps] decision steps.
    """
    rng = np.random.default_rng(seed)
    hi = grid_size - 1
    # Anchor pairs: (goal corner, decoy corner) on opposite sides.
    corners = [(0, 0), (0, hi), (hi, 0), (hi, hi)]
    tasks: list[TaskSpec] = []
    inits: dict[int, list[InitLayout]] = {}
    object_names = ["red block", "blue block", "green block", "yellow block"]

    def make_region(corner: Coord, size: int) -> Rect:
        x0 = corner[0] if corner[0] == 0 else corner[0] - size + 1
        y0 = corner[1] if corner[1] == 0 else corner[1] - size + 1
        return Rect(x0, y0, x0 + size - 1, y0 + size - 1)

    task_id = 0
    for family in FAMILIES:
        region_size = 3 if family == FETCH else 2
        for _ in range(tasks_per_family):
            goal_idx = int(rng.integers(0, len(corners)))
            goal_corner = corners[goal_idx]
            decoy_corner = corners[3 - goal_idx]  # diagonal opposite
            goal = make_region(goal_corner, region_size)
            decoy = make_region(decoy_corner, region_size)
            target = int(rng.integers(0, num_objects))
            if family == FETCH:
                instruction = f"carry the {object_names[target]} to the goal basket"
            else:
                instruction = f"pick the {object_names[target]} from its cell and place it on the goal plate"
            task = TaskSpec(task_id, family, target, goal, decoy, instruction)
            tasks.append(task)
            layouts = []
            for init_id in range(inits_per_task):
                while True:
                    cells = [
                        (int(rng.integers(0, grid_size)), int(rng.integers(0, grid_size)))
                        for _ in range(num_objects + 1)
                    ]
                    gripper, objects = cells[0], cells[1:]
                    if len(set(objects)) != num_objects:
                        continue
                    if any(goal.contains(p) or decoy.contains(p) for p in objects):
                        continue
                    steps = greedy_decision_steps(gripper, objects[target], goal, chunk_len)
                    if min_steps <= steps <= max_steps:
                        break
                layouts.append(
                    InitLayout(init_id=init_id, gripper=gripper, objects=tuple(objects))
                )
            inits[task_id] = layouts
            task_id += 1
    return LayoutSet(grid_size, num_objects, tasks, inits)
