"""Rollout collection and Monte Carlo value targets.

Episodes are rolled out with the prior alone (no planning). Each decision
step records the latent readout and the chunk taken; the terminal reward is
then propagated backward to produce per-step targets: gamma^(T - t) for
success episodes, 0 everywhere for failures. Targets are computed by the
backward recurrence G_t = gamma * G_{t+1}, so the recurrence holds exactly in
floating point.

Datasets round-trip through CSV with 17-significant-digit floats, which
reproduces doubles exactly. The per-step observation digest is the chunk
history itself: in a deterministic environment that is sufficient to replay
and audit any example.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chunks import Chunk, as_chunk
from .envsim import ChunkGrid, EpisodeOutcome
from .errors import DatasetParseError, UsageError
from .prior import SurrogatePrior
from .valuehead import TrainingExample, balance

DEFAULT_GAMMA = 0.99

FLOAT_FMT = ".17g"


@dataclass(frozen=True)
class DecisionRecord:
    readout: np.ndarray
    chunk: Chunk


@dataclass(frozen=True)
class EpisodeTrace:
    task_id: int
    init_id: int
    records: tuple[DecisionRecord, ...]
    outcome: EpisodeOutcome


@dataclass
class ValueDataset:
    examples: list[TrainingExample]
    gamma: float
    latent_dim: int
    provenance: dict = field(default_factory=dict)

    def counts(self) -> tuple[int, int]:
        succ = sum(1 for ex in self.examples if ex.reward == 1)
        return succ, len(self.examples) - succ


def run_episode(
    env: ChunkGrid,
    prior: SurrogatePrior,
    task_id: int,
    init_id: int,
    rng: np.random.Generator,
) -> EpisodeTrace:
    """Roll the prior policy from reset to termination, recording every decision step."""
    task = env.task(task_id)
    state, obs = env.reset(task_id, init_id)
    records = []
    while not state.terminated:
        h = prior.readout(obs, task)
        chunk = prior.propose_center(obs, task, rng)
        records.append(DecisionRecord(readout=h, chunk=chunk))
        result = env.step_chunk(state, chunk)
        state, obs = result.state, result.obs
    outcome = EpisodeOutcome(
        reward=state.reward,
        final_step=len(records) - 1,
        decision_steps=len(records),
        wall_steps=state.step_index,
    )
    return EpisodeTrace(task_id=task_id, init_id=init_id, records=tuple(records), outcome=outcome)


def mc_targets(trace: EpisodeTrace, gamma: float = DEFAULT_GAMMA) -> list[float]:
    """Backward-propagated discounted targets; all zero for failure episodes."""
    n = trace.outcome.decision_steps
    if trace.outcome.reward == 0:
        return [0.0] * n
    targets = [0.0] * n
    targets[-1] = 1.0
    for t in range(n - 2, -1, -1):
        targets[t] = gamma * targets[t + 1]
    return targets


def episode_examples(trace: EpisodeTrace, gamma: float = DEFAULT_GAMMA) -> list[TrainingExample]:
    targets = mc_targets(trace, gamma)
    return [
        TrainingExample(
            h=rec.readout,
            g=g,
            task_id=trace.task_id,
            init_id=trace.init_id,
            t=t,
            reward=trace.outcome.reward,
        )
        for t, (rec, g) in enumerate(zip(trace.records, targets))
    ]


def build_dataset(
    env: ChunkGrid,
    prior: SurrogatePrior,
    tasks: list[int],
    episodes_per_init: int,
    gamma: float = DEFAULT_GAMMA,
    seed: int = 0,
    apply_balance: bool = False,
    inits: list[int] | None = None,
) -> ValueDataset:
    """Collect episodes across (task, init, episode) triples into one dataset.

    Episode seeds derive from (seed, task, init, episode), so any subset of
    tasks reproduces exactly the episodes it would contribute to a larger run.
    """
    if not tasks:
        raise UsageError("at least one task required")
    for task_id in tasks:
        env.task(task_id)  # raises ConfigError on unknown ids
    examples: list[TrainingExample] = []
    episodes = 0
    success_episodes = 0
    for task_id in tasks:
        init_ids = inits if inits is not None else env.layouts.init_ids(task_id)
        for init_id in init_ids:
            for episode in range(episodes_per_init):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, task_id, init_id, episode])
                )
                trace = run_episode(env, prior, task_id, init_id, rng)
                examples.extend(episode_examples(trace, gamma))
                episodes += 1
                success_episodes += trace.outcome.reward
    warnings: list[str] = []
    if apply_balance:
        balance_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA1A]))
        examples, warning = balance(examples, balance_rng)
        if warning:
            warnings.append(warning)
    succ = sum(1 for ex in examples if ex.reward == 1)
    dataset = ValueDataset(
        examples=examples,
        gamma=gamma,
        latent_dim=prior.latent_dim,
        provenance={
            "tasks": list(tasks),
            "seed": seed,
            "epsilon": prior.config.epsilon,
            "episodes": episodes,
            "success_episodes": int(success_episodes),
            "failure_episodes": episodes - int(success_episodes),
            "success_examples": succ,
            "failure_examples": len(examples) - succ,
            "balanced": apply_balance,
            "warnings": warnings,
        },
    )
    return dataset


def balance_dataset(dataset: ValueDataset, rng: np.random.Generator) -> ValueDataset:
    examples, warning = balance(dataset.examples, rng)
    succ = sum(1 for ex in examples if ex.reward == 1)
    provenance = dict(dataset.provenance)
    provenance.update(
        balanced=True,
        success_examples=succ,
        failure_examples=len(examples) - succ,
    )
    if warning:
        provenance["warnings"] = list(provenance.get("warnings", [])) + [warning]
    return ValueDataset(examples, dataset.gamma, dataset.latent_dim, provenance)


def dataset_to_csv(dataset: ValueDataset) -> str:
    lines = ["d,gamma"]
    lines.append(f"{dataset.latent_dim},{dataset.gamma:{FLOAT_FMT}}")
    h_cols = ",".join(f"h_{i}" for i in range(dataset.latent_dim))
    lines.append(f"task_id,init_id,t,R,G,{h_cols}")
    for ex in dataset.examples:
        values = ",".join(f"{x:{FLOAT_FMT}}" for x in ex.h)
        lines.append(f"{ex.task_id},{ex.init_id},{ex.t},{ex.reward},{ex.g:{FLOAT_FMT}},{values}")
    return "\n".join(lines) + "\n"


def dataset_from_csv(text: str) -> ValueDataset:
    lines = text.splitlines()
    if len(lines) < 3:
        raise DatasetParseError("file has fewer than 3 header lines")
    if lines[0].strip() != "d,gamma":
        raise DatasetParseError(f"expected 'd,gamma', got {lines[0]!r}", line=1)
    try:
        d_str, gamma_str = lines[1].split(",")
        d = int(d_str)
        gamma = float(gamma_str)
    except ValueError as exc:
        raise DatasetParseError(f"bad d,gamma values: {exc}", line=2) from exc
    expected_cols = 5 + d
    header_cols = lines[2].split(",")
    if len(header_cols) != expected_cols:
        raise DatasetParseError(
            f"data header has {len(header_cols)} columns, expected {expected_cols} for d={d}",
            line=3,
        )
    examples = []
    for i, raw in enumerate(lines[3:], start=4):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != expected_cols:
            raise DatasetParseError(
                f"row has {len(parts)} columns, expected {expected_cols}", line=i
            )
        try:
            task_id, init_id, t, reward = (int(p) for p in parts[:4])
            g = float(parts[4])
            h = np.array([float(p) for p in parts[5:]])
        except ValueError as exc:
            raise DatasetParseError(f"bad value: {exc}", line=i) from exc
        examples.append(
            TrainingExample(h=h, g=g, task_id=task_id, init_id=init_id, t=t, reward=reward)
        )
    succ = sum(1 for ex in examples if ex.reward == 1)
    return ValueDataset(
        examples=examples,
        gamma=gamma,
        latent_dim=d,
        provenance={
            "source": "file",
            "success_examples": succ,
            "failure_examples": len(examples) - succ,
        },
    )


def save_dataset(dataset: ValueDataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv(dataset))


def load_dataset(path: str | Path) -> ValueDataset:
    return dataset_from_csv(Path(path).read_text())


def replay_readouts(
    env: ChunkGrid, prior: SurrogatePrior, trace: EpisodeTrace
) -> list[np.ndarray]:
    """Recompute readouts by replaying the trace's chunks from its (task, init)."""
    task = env.task(trace.task_id)
    state, obs = env.reset(trace.task_id, trace.init_id)
    readouts = []
    for rec in trace.records:
        readouts.append(prior.readout(obs, task))
        result = env.step_chunk(state, as_chunk(rec.chunk, prior.chunk_len))
        state, obs = result.state, result.obs
    return readouts
