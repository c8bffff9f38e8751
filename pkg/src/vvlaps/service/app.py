"""FastAPI service wrapping the core package.

The service is stateless: every request carries its full configuration and
file contents travel in request/response bodies, so a thin client can run
against a remote server or an in-process app interchangeably. Client-side
errors (bad config, malformed files, misuse) map to HTTP 400; internal
failures map to 500.
"""

from __future__ import annotations

import datetime

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

import numpy as np

from .. import __version__
from ..collect import build_dataset, dataset_from_csv, dataset_to_csv
from ..envsim import load_default_layouts
from ..errors import BalanceError, ConfigError, DatasetParseError, UsageError, VvlapsError
from ..harness import (
    EnvSetup,
    EvalSetup,
    build_env,
    build_metrics,
    build_prior,
    eval_output_files,
    export_latents_csv,
    run_eval,
    trace_csv,
    value_trace,
)
from ..prior import PriorConfig
from ..search import SearchConfig, search, value_fn_from_params
from ..valuehead import TrainConfig, model_from_json, model_to_json, train
from ..chunks import as_chunk
from . import schemas

CLIENT_ERRORS = (ConfigError, UsageError, DatasetParseError, BalanceError)


def _env_setup(model: schemas.EnvModel) -> EnvSetup:
    return EnvSetup(
        layout_file=model.layout_file,
        timeout=model.timeout,
        library_size=model.library_size,
        chunk_len=model.chunk_len,
        library_seed=model.library_seed,
    )


def _prior_config(model: schemas.PriorModel) -> PriorConfig:
    return PriorConfig(
        epsilon=model.epsilon,
        tau=model.tau,
        latent_dim=model.latent_dim,
        seed=model.seed,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="vvlaps", version=__version__)

    @app.exception_handler(VvlapsError)
    async def _vvlaps_error(_: Request, exc: VvlapsError):
        status = 400 if isinstance(exc, CLIENT_ERRORS) else 500
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.get("/tasks", response_model=schemas.TasksResponse)
    def tasks():
        layouts = load_default_layouts()
        return schemas.TasksResponse(
            grid_size=layouts.grid_size,
            num_objects=layouts.num_objects,
            tasks=[
                schemas.TaskInfo(
                    task_id=t.task_id,
                    family=t.family,
                    instruction=t.instruction,
                    inits=layouts.init_ids(t.task_id),
                )
                for t in (layouts.tasks[i] for i in layouts.task_ids())
            ],
        )

    @app.post("/collect", response_model=schemas.CollectResponse)
    def collect(req: schemas.CollectRequest):
        env = build_env(_env_setup(req.env))
        prior = build_prior(env, _prior_config(req.prior), _env_setup(req.env))
        tasks = req.collect.tasks if req.collect.tasks is not None else env.layouts.task_ids()
        dataset = build_dataset(
            env,
            prior,
            tasks,
            episodes_per_init=req.collect.episodes_per_init,
            gamma=req.collect.gamma,
            seed=req.collect.seed,
            apply_balance=req.collect.balance,
            inits=req.collect.inits,
        )
        succ, fail = dataset.counts()
        return schemas.CollectResponse(
            dataset_csv=dataset_to_csv(dataset),
            examples=len(dataset.examples),
            success_examples=succ,
            failure_examples=fail,
            episodes=dataset.provenance["episodes"],
            success_episodes=dataset.provenance["success_episodes"],
            balanced=req.collect.balance,
            warnings=dataset.provenance.get("warnings", []),
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train_head(req: schemas.TrainRequest):
        dataset = dataset_from_csv(req.dataset_csv)
        config = TrainConfig(
            learning_rate=req.train.learning_rate,
            adam_beta1=req.train.adam_beta1,
            adam_beta2=req.train.adam_beta2,
            adam_eps=req.train.adam_eps,
            batch_size=req.train.batch_size,
            epochs=req.train.epochs,
            seed=req.train.seed,
            train_fraction=req.train.train_fraction,
            hidden1=req.train.hidden1,
            hidden2=req.train.hidden2,
        )
        result = train(dataset.examples, config)
        meta = dict(req.meta)
        meta.update(
            latent_dim=dataset.latent_dim,
            gamma=dataset.gamma,
            seed=config.seed,
            epochs=config.epochs,
            test_mse=result.test_mse,
            ranking_score=result.ranking_score,
        )
        curve = "epoch,train_mse\n" + "\n".join(
            f"{epoch},{loss:.17g}" for epoch, loss in result.loss_curve
        ) + "\n"
        return schemas.TrainResponse(
            model_json=model_to_json(result.params, meta),
            loss_curve_csv=curve,
            initial_train_loss=result.initial_train_loss,
            final_train_loss=result.final_train_loss,
            test_mse=result.test_mse,
            ranking_score=result.ranking_score,
            train_examples=result.train_examples,
            test_examples=result.test_examples,
        )

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest):
        setup = EvalSetup(
            seed=req.eval.seed,
            tasks=tuple(req.eval.tasks) if req.eval.tasks is not None else None,
            inits=tuple(req.eval.inits) if req.eval.inits is not None else None,
            rollouts_per_init=req.eval.rollouts_per_init,
            methods=tuple(req.eval.methods),
            budget=req.eval.budget,
            k=req.eval.k,
            gamma=req.eval.gamma,
            rollout_depth=req.eval.rollout_depth,
        )
        result = run_eval(
            _env_setup(req.env), _prior_config(req.prior), setup, req.models, req.workers
        )
        snapshot = {
            "env": req.env.model_dump(),
            "prior": req.prior.model_dump(),
            "eval": req.eval.model_dump(),
        }
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
        files = eval_output_files(result, snapshot, req.models, timestamp)
        overall = {
            table.metric: dict(table.overall) for table in build_metrics(result)
        }
        return schemas.EvalResponse(files=files, overall=overall)

    @app.post("/trace", response_model=schemas.TraceResponse)
    def trace(req: schemas.TraceRequest):
        env = build_env(_env_setup(req.env))
        prior = build_prior(env, _prior_config(req.prior), _env_setup(req.env))
        params, _ = model_from_json(req.model_json)
        rng = np.random.default_rng(np.random.SeedSequence([req.seed, req.task_id, req.init_id]))
        result = value_trace(env, prior, params, req.task_id, req.init_id, rng)
        return schemas.TraceResponse(
            trace_csv=trace_csv(result),
            decision_steps=result.decision_steps,
            reward=result.reward,
        )

    @app.post("/export-latents", response_model=schemas.ExportLatentsResponse)
    def export_latents(req: schemas.ExportLatentsRequest):
        dataset = dataset_from_csv(req.dataset_csv)
        return schemas.ExportLatentsResponse(
            latents_csv=export_latents_csv(dataset), rows=len(dataset.examples)
        )

    @app.post("/plan", response_model=schemas.PlanResponse)
    def plan(req: schemas.PlanRequest):
        env = build_env(_env_setup(req.env))
        prior = build_prior(env, _prior_config(req.prior), _env_setup(req.env))
        state, _ = env.reset(req.task_id, req.init_id)
        for chunk in req.executed_chunks:
            step = env.step_chunk(state, as_chunk(chunk, prior.chunk_len))
            state = step.state
        value_fn = None
        if req.model_json is not None:
            params, _ = model_from_json(req.model_json)
            value_fn = value_fn_from_params(prior, params)
        config = SearchConfig(
            mode=req.mode, budget=req.budget, k=req.k, gamma=req.gamma, seed=req.seed
        )
        result = search(env, prior, state, config, value_fn)
        return schemas.PlanResponse(
            plan=[list(c) for c in result.plan],
            simulations=result.simulations,
            success_found=result.success_found,
            root_stats=result.root_stats(),
        )

    return app
