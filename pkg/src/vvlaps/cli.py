"""Thin command-line client for the service.

Every subcommand serializes its configuration into a request, posts it to the
service, and writes the returned artifacts to disk. By default the app runs
in-process; pass --server to target a running instance (`vvlaps serve`).

Subcommands read an optional JSON config file (--config) with sections
"env", "prior", "collect", "train", "eval"; individual flags override config
values. Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _post(client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise CliFailure(3, f"service unreachable: {exc}") from exc
    if response.status_code in (400, 422):
        raise CliFailure(2, f"config error: {_detail(response)}")
    if response.status_code != 200:
        raise CliFailure(3, f"service error ({response.status_code}): {_detail(response)}")
    return response.json()


def _detail(response) -> str:
    try:
        return json.dumps(response.json().get("detail"))
    except Exception:
        return response.text[:500]


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliFailure(2, f"config file not found: {path}")
    try:
        config = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliFailure(2, f"config file is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise CliFailure(2, "config file must hold a JSON object")
    return config


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise CliFailure(2, f"config section {name!r} must be an object")
    return dict(section)


def _apply_overrides(section: dict, overrides: dict) -> dict:
    for key, value in overrides.items():
        if value is not None:
            section[key] = value
    return section


def _int_list(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise CliFailure(2, f"expected comma-separated integers, got {text!r}") from exc


def _read_file(path: str, what: str) -> str:
    p = Path(path)
    if not p.exists():
        raise CliFailure(2, f"{what} not found: {path}")
    return p.read_text()


def _write(path: str | Path, content: str) -> None:
    p = Path(path)
    if p.parent != Path(""):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(content)


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def cmd_collect(args) -> int:
    config = _load_config(args.config)
    collect = _apply_overrides(
        _section(config, "collect"),
        {
            "tasks": _int_list(args.tasks),
            "inits": _int_list(args.inits),
            "episodes_per_init": args.episodes_per_init,
            "gamma": args.gamma,
            "seed": args.seed,
            "balance": args.balance,
        },
    )
    prior = _apply_overrides(_section(config, "prior"), {"epsilon": args.epsilon})
    payload = {"env": _section(config, "env"), "prior": prior, "collect": collect}
    client = _make_client(args.server)
    data = _post(client, "/collect", payload)
    _write(args.out, data["dataset_csv"])
    print(
        f"collected {data['examples']} examples "
        f"({data['success_examples']} success / {data['failure_examples']} failure) "
        f"from {data['episodes']} episodes ({data['success_episodes']} successful) "
        f"-> {args.out}"
    )
    for warning in data["warnings"]:
        print(f"warning: {warning}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    train = _apply_overrides(
        _section(config, "train"),
        {"seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size},
    )
    payload = {
        "dataset_csv": _read_file(args.dataset, "dataset"),
        "train": train,
        "meta": {"dataset": args.dataset},
    }
    client = _make_client(args.server)
    data = _post(client, "/train", payload)
    _write(args.model_out, data["model_json"])
    if args.curve_out:
        _write(args.curve_out, data["loss_curve_csv"])
    print(
        f"trained on {data['train_examples']} examples: "
        f"train mse {data['initial_train_loss']:.4f} -> {data['final_train_loss']:.4f}, "
        f"held-out mse {data['test_mse']:.4f}, ranking {data['ranking_score']:.4f} "
        f"-> {args.model_out}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    eval_section = _apply_overrides(
        _section(config, "eval"),
        {
            "seed": args.seed,
            "tasks": _int_list(args.tasks),
            "inits": _int_list(args.inits),
            "rollouts_per_init": args.rollouts,
            "methods": args.methods.split(",") if args.methods else None,
            "budget": args.budget,
            "k": args.k,
        },
    )
    if "seed" not in eval_section or eval_section["seed"] is None:
        raise CliFailure(2, "--seed is required for eval")
    model_paths = dict(eval_section.pop("models", {}))
    models = {name: _read_file(path, f"model {name!r}") for name, path in model_paths.items()}
    payload = {
        "env": _section(config, "env"),
        "prior": _section(config, "prior"),
        "eval": eval_section,
        "models": models,
        "workers": args.workers,
    }
    client = _make_client(args.server)
    data = _post(client, "/eval", payload)
    outdir = Path(args.out)
    for rel, content in sorted(data["files"].items()):
        _write(outdir / rel, content)
    print(f"wrote {len(data['files'])} files to {outdir}")
    for metric, row in data["overall"].items():
        cells = "  ".join(f"{m}={v:.2f}" for m, v in row.items())
        print(f"overall {metric}: {cells}")
    return 0


def cmd_trace(args) -> int:
    config = _load_config(args.config)
    prior = _apply_overrides(_section(config, "prior"), {"epsilon": args.epsilon})
    payload = {
        "env": _section(config, "env"),
        "prior": prior,
        "model_json": _read_file(args.model, "model"),
        "task_id": args.task,
        "init_id": args.init,
        "seed": args.seed,
    }
    client = _make_client(args.server)
    data = _post(client, "/trace", payload)
    _write(args.out, data["trace_csv"])
    outcome = "success" if data["reward"] == 1 else "failure"
    print(f"traced {data['decision_steps']} decision steps ({outcome}) -> {args.out}")
    return 0


def cmd_export_latents(args) -> int:
    payload = {"dataset_csv": _read_file(args.dataset, "dataset")}
    client = _make_client(args.server)
    data = _post(client, "/export-latents", payload)
    _write(args.out, data["latents_csv"])
    print(f"exported {data['rows']} rows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vvlaps",
        description="Client for the value-guided chunk-search service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--server", help="service URL (default: run in-process)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("collect", help="roll out the prior and build a value dataset")
    common(p)
    p.add_argument("--tasks", help="comma-separated task ids (default: all)")
    p.add_argument("--inits", help="comma-separated init ids (default: all)")
    p.add_argument("--episodes-per-init", type=int, dest="episodes_per_init")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    balance = p.add_mutually_exclusive_group()
    balance.add_argument("--balance", dest="balance", action="store_true", default=None)
    balance.add_argument("--no-balance", dest="balance", action="store_false")
    p.add_argument("--out", default="dataset.csv")
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train", help="train a value head on a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--model-out", dest="model_out", default="model.json")
    p.add_argument("--curve-out", dest="curve_out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run the method comparison")
    common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--tasks")
    p.add_argument("--inits")
    p.add_argument("--rollouts", type=int)
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--budget", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="eval_out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("trace", help="value trace along one prior-only episode")
    common(p)
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--init", type=int, required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("export-latents", help="export (readout, target, task) rows")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="latents.csv")
    p.set_defaults(fn=cmd_export_latents)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
