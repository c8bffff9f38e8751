"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..chunks import DEFAULT_CHUNK_LEN, DEFAULT_LIBRARY_SIZE, DEFAULT_TAU
from ..collect import DEFAULT_GAMMA
from ..envsim import DEFAULT_TIMEOUT
from ..harness import METHODS
from ..prior import DEFAULT_EPSILON_COLLECT, DEFAULT_LATENT_DIM
from ..search import DEFAULT_BUDGET, DEFAULT_CANDIDATES, MODE_V_VLAPS


class EnvModel(BaseModel):
    layout_file: str | None = None
    timeout: int = DEFAULT_TIMEOUT
    library_size: int = DEFAULT_LIBRARY_SIZE
    chunk_len: int = DEFAULT_CHUNK_LEN
    library_seed: int = 11


class PriorModel(BaseModel):
    epsilon: float = DEFAULT_EPSILON_COLLECT
    tau: float = DEFAULT_TAU
    latent_dim: int = DEFAULT_LATENT_DIM
    seed: int = 7


class CollectModel(BaseModel):
    tasks: list[int] | None = None
    inits: list[int] | None = None
    episodes_per_init: int = 3
    gamma: float = DEFAULT_GAMMA
    seed: int = 0
    balance: bool = True


class TrainModel(BaseModel):
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    train_fraction: float = 0.9
    hidden1: int = 64
    hidden2: int = 32


class EvalModel(BaseModel):
    seed: int
    tasks: list[int] | None = None
    inits: list[int] | None = None
    rollouts_per_init: int = 10
    methods: list[str] = Field(default_factory=lambda: list(METHODS))
    budget: int = DEFAULT_BUDGET
    k: int = DEFAULT_CANDIDATES
    gamma: float = DEFAULT_GAMMA
    rollout_depth: int | None = None


class HealthResponse(BaseModel):
    status: str
    version: str


class TaskInfo(BaseModel):
    task_id: int
    family: str
    instruction: str
    inits: list[int]


class TasksResponse(BaseModel):
    grid_size: int
    num_objects: int
    tasks: list[TaskInfo]


class CollectRequest(BaseModel):
    env: EnvModel = EnvModel()
    prior: PriorModel = PriorModel()
    collect: CollectModel = CollectModel()


class CollectResponse(BaseModel):
    dataset_csv: str
    examples: int
    success_examples: int
    failure_examples: int
    episodes: int
    success_episodes: int
    balanced: bool
    warnings: list[str]


class TrainRequest(BaseModel):
    dataset_csv: str
    train: TrainModel = TrainModel()
    meta: dict = Field(default_factory=dict)


class TrainResponse(BaseModel):
    model_json: str
    loss_curve_csv: str
    initial_train_loss: float
    final_train_loss: float
    test_mse: float
    ranking_score: float
    train_examples: int
    test_examples: int


class EvalRequest(BaseModel):
    env: EnvModel = EnvModel()
    prior: PriorModel = PriorModel()
    eval: EvalModel
    models: dict[str, str] = Field(default_factory=dict)  # name -> model JSON text
    workers: int = 1


class EvalResponse(BaseModel):
    files: dict[str, str]  # relative path -> content
    overall: dict[str, dict[str, float]]  # metric -> method -> value


class TraceRequest(BaseModel):
    env: EnvModel = EnvModel()
    prior: PriorModel = PriorModel()
    model_json: str
    task_id: int
    init_id: int
    seed: int = 0


class TraceResponse(BaseModel):
    trace_csv: str
    decision_steps: int
    reward: int


class ExportLatentsRequest(BaseModel):
    dataset_csv: str


class ExportLatentsResponse(BaseModel):
    latents_csv: str
    rows: int


class PlanRequest(BaseModel):
    env: EnvModel = EnvModel()
    prior: PriorModel = PriorModel()
    task_id: int
    init_id: int
    executed_chunks: list[list[str]] = Field(default_factory=list)
    mode: str = MODE_V_VLAPS
    budget: int = DEFAULT_BUDGET
    k: int = DEFAULT_CANDIDATES
    gamma: float = DEFAULT_GAMMA
    seed: int = 0
    model_json: str | None = None


class PlanResponse(BaseModel):
    plan: list[list[str]]
    simulations: int
    success_found: bool
    root_stats: list[dict]
