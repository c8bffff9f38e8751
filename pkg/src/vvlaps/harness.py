"""Experiment harness: run method comparisons, aggregate metrics, export artifacts.

Four method presets mirror the comparison structure: the prior executed
greedily without planning ("vla-only"), prior-only search ("vlaps"),
value-guided search with one head per task family ("v-vlaps-family"), and
value-guided search with a single head trained on both families
("v-vlaps-joint").

Every episode is seeded from (seed, method index, task, init, rollout), so
results are independent of execution order and a worker pool never changes
output bytes. Simulation counts are reported both per search call and per
episode; the tables use per-call as the headline efficiency number.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chunks import DEFAULT_CHUNK_LEN, DEFAULT_LIBRARY_SIZE, ChunkLibrary, build_library
from .collect import DEFAULT_GAMMA, FLOAT_FMT, ValueDataset, run_episode
from .envsim import DEFAULT_TIMEOUT, ChunkGrid, LayoutSet, load_default_layouts
from .errors import ConfigError, UsageError
from .prior import PriorConfig, SurrogatePrior
from .search import (
    MODE_V_VLAPS,
    MODE_VLAPS,
    SearchConfig,
    act_episode,
    value_fn_from_params,
)
from .valuehead import ValueHeadParams, forward, model_from_json

METHOD_VLA_ONLY = "vla-only"
METHOD_VLAPS = "vlaps"
METHOD_V_VLAPS_FAMILY = "v-vlaps-family"
METHOD_V_VLAPS_JOINT = "v-vlaps-joint"
METHODS = (METHOD_VLA_ONLY, METHOD_VLAPS, METHOD_V_VLAPS_FAMILY, METHOD_V_VLAPS_JOINT)
SEARCH_METHODS = (METHOD_VLAPS, METHOD_V_VLAPS_FAMILY, METHOD_V_VLAPS_JOINT)


@dataclass(frozen=True)
class EnvSetup:
    layout_file: str | None = None  # None: packaged default layouts
    timeout: int = DEFAULT_TIMEOUT
    library_size: int = DEFAULT_LIBRARY_SIZE
    chunk_len: int = DEFAULT_CHUNK_LEN
    library_seed: int = 11


def build_env(setup: EnvSetup) -> ChunkGrid:
    layouts = (
        load_default_layouts() if setup.layout_file is None else LayoutSet.load(setup.layout_file)
    )
    return ChunkGrid(layouts, timeout=setup.timeout)


def build_library_for(setup: EnvSetup) -> ChunkLibrary:
    return build_library(setup.library_size, setup.chunk_len, setup.library_seed)


def build_prior(env: ChunkGrid, prior_cfg: PriorConfig, setup: EnvSetup) -> SurrogatePrior:
    return SurrogatePrior(env, build_library_for(setup), prior_cfg)


@dataclass(frozen=True)
class EvalSetup:
    seed: int
    tasks: tuple[int, ...] | None = None  # None: every task in the layout set
    inits: tuple[int, ...] | None = None  # None: every init of each task
    rollouts_per_init: int = 10
    methods: tuple[str, ...] = METHODS
    budget: int = 32
    k: int = 5
    gamma: float = DEFAULT_GAMMA
    rollout_depth: int | None = None


@dataclass(frozen=True)
class EpisodeRecord:
    method: str
    task_id: int
    family: str
    init_id: int
    rollout: int
    reward: int
    decision_steps: int
    wall_steps: int
    simulations: tuple[int, ...]  # per search call; empty for vla-only
    success_found: tuple[bool, ...]


@dataclass
class EvalResult:
    episodes: list[EpisodeRecord]
    methods: list[str]

    def episodes_for(self, method: str) -> list[EpisodeRecord]:
        return [e for e in self.episodes if e.method == method]


def success_rate(outcomes: list[int]) -> float:
    """Success percentage of a list of {0,1} outcomes."""
    if not outcomes:
        raise UsageError("success_rate of an empty outcome list")
    return 100.0 * float(np.mean(outcomes))


def avg_simulations(sims_per_episode: list[list[int]]) -> tuple[float, float]:
    """(mean simulations per search call, mean simulations per episode)."""
    if not sims_per_episode:
        raise UsageError("avg_simulations of an empty episode list")
    if any(len(calls) == 0 for calls in sims_per_episode):
        raise UsageError("simulation metrics only apply to search-based methods")
    all_calls = [s for calls in sims_per_episode for s in calls]
    per_episode = [sum(calls) for calls in sims_per_episode]
    return float(np.mean(all_calls)), float(np.mean(per_episode))


# ---------------------------------------------------------------------------
# Episode execution

_WORKER_CTX: dict = {}


def _value_params_for(
    method: str, family: str, models: dict[str, ValueHeadParams]
) -> ValueHeadParams | None:
    if method == METHOD_V_VLAPS_FAMILY:
        return models[family]
    if method == METHOD_V_VLAPS_JOINT:
        return models["joint"]
    return None


def _required_model_keys(methods: tuple[str, ...] | list[str], env: ChunkGrid) -> set[str]:
    keys: set[str] = set()
    if METHOD_V_VLAPS_FAMILY in methods:
        keys.update(task.family for task in env.layouts.tasks.values())
    if METHOD_V_VLAPS_JOINT in methods:
        keys.add("joint")
    return keys


def _run_unit(
    env: ChunkGrid,
    prior: SurrogatePrior,
    models: dict[str, ValueHeadParams],
    setup: EvalSetup,
    method_index: int,
    task_id: int,
    init_id: int,
    rollout: int,
) -> EpisodeRecord:
    method = setup.methods[method_index]
    family = env.task(task_id).family
    rng = np.random.default_rng(
        np.random.SeedSequence([setup.seed, method_index, task_id, init_id, rollout])
    )
    if method == METHOD_VLA_ONLY:
        trace = run_episode(env, prior, task_id, init_id, rng)
        outcome = trace.outcome
        sims: tuple[int, ...] = ()
        found: tuple[bool, ...] = ()
    else:
        mode = MODE_VLAPS if method == METHOD_VLAPS else MODE_V_VLAPS
        params = _value_params_for(method, family, models)
        value_fn = value_fn_from_params(prior, params) if params is not None else None
        config = SearchConfig(
            mode=mode,
            budget=setup.budget,
            k=setup.k,
            gamma=setup.gamma,
            rollout_depth=setup.rollout_depth,
        )
        act = act_episode(env, prior, task_id, init_id, config, value_fn, rng)
        outcome = act.outcome
        sims = tuple(act.simulations_per_call)
        found = tuple(act.success_found_per_call)
    return EpisodeRecord(
        method=method,
        task_id=task_id,
        family=family,
        init_id=init_id,
        rollout=rollout,
        reward=outcome.reward,
        decision_steps=outcome.decision_steps,
        wall_steps=outcome.wall_steps,
        simulations=sims,
        success_found=found,
    )


def _init_worker(env_setup: EnvSetup, prior_cfg: PriorConfig, model_texts: dict[str, str]) -> None:
    env = build_env(env_setup)
    prior = build_prior(env, prior_cfg, env_setup)
    models = {name: model_from_json(text)[0] for name, text in model_texts.items()}
    _WORKER_CTX.update(env=env, prior=prior, models=models)


def _worker_run(args: tuple) -> tuple[tuple, EpisodeRecord]:
    setup, unit = args
    record = _run_unit(
        _WORKER_CTX["env"], _WORKER_CTX["prior"], _WORKER_CTX["models"], setup, *unit
    )
    return unit, record


def run_eval(
    env_setup: EnvSetup,
    prior_cfg: PriorConfig,
    setup: EvalSetup,
    model_texts: dict[str, str],
    workers: int = 1,
) -> EvalResult:
    """Run the full (method, task, init, rollout) grid.

    `model_texts` maps model names ("fetch", "spatial", "joint") to model JSON
    strings. Validation happens before any episode runs; results are merged in
    a fixed order regardless of worker count.
    """
    if setup.rollouts_per_init < 1:
        raise ConfigError("rollouts_per_init must be >= 1")
    for method in setup.methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    env = build_env(env_setup)
    missing = _required_model_keys(setup.methods, env) - set(model_texts)
    if missing:
        raise ConfigError(f"missing model(s) for value-guided methods: {sorted(missing)}")
    task_ids = list(setup.tasks) if setup.tasks is not None else env.layouts.task_ids()
    for task_id in task_ids:
        env.task(task_id)  # raises ConfigError on unknown ids
    SearchConfig(budget=setup.budget, k=setup.k, gamma=setup.gamma).validate()

    units = []
    for method_index in range(len(setup.methods)):
        for task_id in task_ids:
            init_ids = (
                list(setup.inits) if setup.inits is not None else env.layouts.init_ids(task_id)
            )
            for init_id in init_ids:
                if init_id not in env.layouts.init_ids(task_id):
                    raise ConfigError(f"unknown init {init_id} for task {task_id}")
                for rollout in range(setup.rollouts_per_init):
                    units.append((method_index, task_id, init_id, rollout))

    records: dict[tuple, EpisodeRecord] = {}
    if workers <= 1:
        prior = build_prior(env, prior_cfg, env_setup)
        models = {name: model_from_json(text)[0] for name, text in model_texts.items()}
        for unit in units:
            records[unit] = _run_unit(env, prior, models, setup, *unit)
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(env_setup, prior_cfg, model_texts),
        ) as pool:
            for unit, record in pool.map(
                _worker_run, [(setup, u) for u in units], chunksize=8
            ):
                records[unit] = record
    episodes = [records[u] for u in units]
    return EvalResult(episodes=episodes, methods=list(setup.methods))


# ---------------------------------------------------------------------------
# Metrics tables

METRIC_SUCCESS = "success_rate_percent"
METRIC_SIMS_PER_CALL = "avg_simulations_per_call"
METRIC_SIMS_PER_EPISODE = "avg_simulations_per_episode"


@dataclass
class MetricsTable:
    metric: str
    methods: list[str]
    rows: list[tuple[str, dict]] = field(default_factory=list)  # (task label, method -> value)
    overall: dict = field(default_factory=dict)


def _metric_value(metric: str, episodes: list[EpisodeRecord]) -> float:
    if metric == METRIC_SUCCESS:
        return success_rate([e.reward for e in episodes])
    per_call, per_episode = avg_simulations([list(e.simulations) for e in episodes])
    return per_call if metric == METRIC_SIMS_PER_CALL else per_episode


def build_metrics(result: EvalResult) -> list[MetricsTable]:
    """One table per metric; sims tables cover search methods only."""
    task_ids = sorted({e.task_id for e in result.episodes})
    tables = []
    for metric in (METRIC_SUCCESS, METRIC_SIMS_PER_CALL, METRIC_SIMS_PER_EPISODE):
        if metric == METRIC_SUCCESS:
            methods = list(result.methods)
        else:
            methods = [m for m in result.methods if m in SEARCH_METHODS]
        if not methods:
            continue
        table = MetricsTable(metric=metric, methods=methods)
        by_key: dict[tuple[str, int], list[EpisodeRecord]] = {}
        for e in result.episodes:
            by_key.setdefault((e.method, e.task_id), []).append(e)
        for task_id in task_ids:
            row = {m: _metric_value(metric, by_key[(m, task_id)]) for m in methods}
            table.rows.append((str(task_id), row))
        table.overall = {
            m: _metric_value(metric, result.episodes_for(m)) for m in methods
        }
        tables.append(table)
    return tables


def _format_cell(metric: str, value: float) -> str:
    return f"{value:.1f}" if metric == METRIC_SUCCESS else f"{value:.2f}"


def render_table(table: MetricsTable, fmt: str = "csv") -> str:
    """Render as CSV or markdown; identical numeric cells in both formats."""
    if fmt not in ("csv", "markdown"):
        raise UsageError(f"format must be 'csv' or 'markdown', got {fmt!r}")
    header = ["task"] + table.methods
    body = [
        (label, [_format_cell(table.metric, row[m]) for m in table.methods])
        for label, row in table.rows
    ]
    body.append(("Overall", [_format_cell(table.metric, table.overall[m]) for m in table.methods]))
    if fmt == "csv":
        lines = [",".join(header)]
        lines += [",".join([label] + cells) for label, cells in body]
        return "\n".join(lines) + "\n"
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(["---"] * len(header)) + "|")
    lines += ["| " + " | ".join([label] + cells) + " |" for label, cells in body]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Raw logs and output files

def episodes_csv(result: EvalResult) -> str:
    lines = [
        "method,task_id,family,init_id,rollout,reward,decision_steps,wall_steps,"
        "search_calls,total_simulations"
    ]
    for e in result.episodes:
        lines.append(
            f"{e.method},{e.task_id},{e.family},{e.init_id},{e.rollout},{e.reward},"
            f"{e.decision_steps},{e.wall_steps},{len(e.simulations)},{sum(e.simulations)}"
        )
    return "\n".join(lines) + "\n"


def calls_csv(result: EvalResult) -> str:
    lines = ["method,task_id,init_id,rollout,call_index,simulations,success_found"]
    for e in result.episodes:
        for idx, (sims, found) in enumerate(zip(e.simulations, e.success_found)):
            lines.append(
                f"{e.method},{e.task_id},{e.init_id},{e.rollout},{idx},{sims},{int(found)}"
            )
    return "\n".join(lines) + "\n"


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def eval_output_files(
    result: EvalResult,
    config_snapshot: dict,
    model_texts: dict[str, str],
    timestamp: str,
) -> dict[str, str]:
    """Assemble the output directory as {relative path: content}.

    Timestamps are confined to run_meta.json; everything else is a pure
    function of the config, so reruns are byte-identical.
    """
    files: dict[str, str] = {}
    snapshot = dict(config_snapshot)
    snapshot["model_hashes"] = {name: content_hash(text) for name, text in sorted(model_texts.items())}
    files["config.json"] = json.dumps(snapshot, indent=2, sort_keys=True) + "\n"
    files["episodes.csv"] = episodes_csv(result)
    files["calls.csv"] = calls_csv(result)
    for table in build_metrics(result):
        files[f"metrics_{table.metric}.csv"] = render_table(table, "csv")
        files[f"metrics_{table.metric}.md"] = render_table(table, "markdown")
    files["run_meta.json"] = json.dumps({"timestamp": timestamp}, indent=2) + "\n"
    return files


# ---------------------------------------------------------------------------
# Value traces and latent export

@dataclass(frozen=True)
class TraceResult:
    points: tuple[tuple[int, float], ...]  # (decision step, predicted value)
    reward: int

    @property
    def decision_steps(self) -> int:
        return len(self.points) - 1


def value_trace(
    env: ChunkGrid,
    prior: SurrogatePrior,
    params: ValueHeadParams,
    task_id: int,
    init_id: int,
    rng: np.random.Generator,
) -> TraceResult:
    """Predicted value at every decision state of one prior-only episode.

    The final terminal state is included, so the trace has decision_steps + 1
    entries.
    """
    task = env.task(task_id)
    state, obs = env.reset(task_id, init_id)
    values = []
    while not state.terminated:
        values.append(forward(params, prior.readout(obs, task)))
        chunk = prior.propose_center(obs, task, rng)
        step = env.step_chunk(state, chunk)
        state, obs = step.state, step.obs
    values.append(forward(params, prior.readout(obs, task)))
    return TraceResult(points=tuple(enumerate(values)), reward=state.reward)


def trace_csv(trace: TraceResult) -> str:
    lines = ["decision_step,v_hat"]
    lines += [f"{step},{v:{FLOAT_FMT}}" for step, v in trace.points]
    return "\n".join(lines) + "\n"


def export_latents_csv(dataset: ValueDataset) -> str:
    """One row per example: readout components, target, task id."""
    d = dataset.latent_dim
    header = ",".join([f"h_{i}" for i in range(d)] + ["G", "task_id"])
    lines = [header]
    for ex in dataset.examples:
        hs = ",".join(f"{x:{FLOAT_FMT}}" for x in ex.h)
        lines.append(f"{hs},{ex.g:{FLOAT_FMT}},{ex.task_id}")
    return "\n".join(lines) + "\n"
