"""Learnable value head: a three-layer MLP regressing Monte Carlo returns.

Everything is written directly against numpy: forward pass, exact analytic
backprop for the mean-squared-error objective, and Adam with bias correction.
The output passes through a sigmoid because targets lie in [0, 1] (a discount
power for success states, 0 for failures).

Models persist as JSON holding shapes plus flat weight arrays, so files stay
portable and diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BalanceError, ConfigError, UsageError

DEFAULT_HIDDEN1 = 64
DEFAULT_HIDDEN2 = 32

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class TrainingExample:
    """One (latent readout, Monte Carlo target) pair with its episode metadata."""

    h: np.ndarray
    g: float
    task_id: int
    init_id: int
    t: int
    reward: int


@dataclass
class ValueHeadParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def items(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def copy(self) -> "ValueHeadParams":
        return ValueHeadParams(**{name: arr.copy() for name, arr in self.items()})


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    train_fraction: float = 0.9
    hidden1: int = DEFAULT_HIDDEN1
    hidden2: int = DEFAULT_HIDDEN2

    def validate(self) -> None:
        positive = {
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "hidden1": self.hidden1,
            "hidden2": self.hidden2,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def init_params(
    d: int,
    h1: int = DEFAULT_HIDDEN1,
    h2: int = DEFAULT_HIDDEN2,
    rng: np.random.Generator | None = None,
) -> ValueHeadParams:
    """He-initialized weights, zero biases. Deterministic given the generator."""
    if rng is None:
        rng = np.random.default_rng(0)
    return ValueHeadParams(
        W1=rng.normal(0.0, np.sqrt(2.0 / d), size=(h1, d)),
        b1=np.zeros(h1),
        W2=rng.normal(0.0, np.sqrt(2.0 / h1), size=(h2, h1)),
        b2=np.zeros(h2),
        W3=rng.normal(0.0, np.sqrt(1.0 / h2), size=(1, h2)),
        b3=np.zeros(1),
    )


def zero_params(d: int, h1: int = DEFAULT_HIDDEN1, h2: int = DEFAULT_HIDDEN2) -> ValueHeadParams:
    return ValueHeadParams(
        W1=np.zeros((h1, d)),
        b1=np.zeros(h1),
        W2=np.zeros((h2, h1)),
        b2=np.zeros(h2),
        W3=np.zeros((1, h2)),
        b3=np.zeros(1),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cached(params: ValueHeadParams, X: np.ndarray):
    Z1 = X @ params.W1.T + params.b1
    A1 = np.maximum(Z1, 0.0)
    Z2 = A1 @ params.W2.T + params.b2
    A2 = np.maximum(Z2, 0.0)
    Z3 = A2 @ params.W3.T + params.b3
    V = _sigmoid(Z3[:, 0])
    return V, (X, Z1, A1, Z2, A2)


def _as_batch(params: ValueHeadParams, h) -> tuple[np.ndarray, bool]:
    X = np.asarray(h, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise UsageError(
            f"readout dimension mismatch: expected {params.input_dim}, got shape {X.shape}"
        )
    return X, single


def forward(params: ValueHeadParams, h):
    """Predicted value in (0, 1). Accepts one readout (1-d) or a batch (2-d)."""
    X, single = _as_batch(params, h)
    V, _ = _forward_cached(params, X)
    return float(V[0]) if single else V


def _batch_arrays(batch: list[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise UsageError("batch is empty")
    X = np.stack([np.asarray(ex.h, dtype=float) for ex in batch])
    G = np.array([ex.g for ex in batch], dtype=float)
    return X, G


def mse_loss(params: ValueHeadParams, batch: list[TrainingExample]) -> float:
    X, G = _batch_arrays(batch)
    V, _ = _forward_cached(params, X)
    return float(np.mean((V - G) ** 2))


def gradient(params: ValueHeadParams, batch: list[TrainingExample]) -> ValueHeadParams:
    """Exact analytic gradient of mse_loss w.r.t. every parameter."""
    X, G = _batch_arrays(batch)
    n = X.shape[0]
    V, (X, Z1, A1, Z2, A2) = _forward_cached(params, X)
    # dL/dz3 = 2/n * (v - g) * sigmoid'(z3), with sigmoid' = v(1-v)
    dZ3 = (2.0 / n) * (V - G) * V * (1.0 - V)
    gW3 = dZ3[None, :] @ A2
    gb3 = np.array([dZ3.sum()])
    dA2 = dZ3[:, None] @ params.W3
    dZ2 = dA2 * (Z2 > 0)
    gW2 = dZ2.T @ A1
    gb2 = dZ2.sum(axis=0)
    dA1 = dZ2 @ params.W2
    dZ1 = dA1 * (Z1 > 0)
    gW1 = dZ1.T @ X
    gb1 = dZ1.sum(axis=0)
    return ValueHeadParams(W1=gW1, b1=gb1, W2=gW2, b2=gb2, W3=gW3, b3=gb3)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def like(cls, params: ValueHeadParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.items()},
            v={name: np.zeros_like(arr) for name, arr in params.items()},
        )


def adam_step(
    params: ValueHeadParams,
    grads: ValueHeadParams,
    state: AdamState,
    t: int,
    config: TrainConfig,
) -> ValueHeadParams:
    """One Adam update with bias correction. Mutates `state`; returns new params."""
    if t < 1:
        raise UsageError(f"Adam step index must be >= 1, got {t}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    updated = {}
    for name, p in params.items():
        g = getattr(grads, name)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        updated[name] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return ValueHeadParams(**updated)


@dataclass
class TrainResult:
    params: ValueHeadParams
    loss_curve: list[tuple[int, float]]  # (epoch, train mse); epoch 0 is pre-training
    test_mse: float
    ranking_score: float
    train_examples: int
    test_examples: int

    @property
    def initial_train_loss(self) -> float:
        return self.loss_curve[0][1]

    @property
    def final_train_loss(self) -> float:
        return self.loss_curve[-1][1]


def success_failure_ranking(values_success: np.ndarray, values_failure: np.ndarray) -> float:
    """Fraction of (success, failure) pairs ranked correctly; ties count half."""
    if len(values_success) == 0 or len(values_failure) == 0:
        return float("nan")
    combined = np.concatenate([values_success, values_failure])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1)
    # average ranks over ties
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    n_s = len(values_success)
    n_f = len(values_failure)
    u = ranks[:n_s].sum() - n_s * (n_s + 1) / 2.0
    return float(u / (n_s * n_f))


def train(examples: list[TrainingExample], config: TrainConfig | None = None) -> TrainResult:
    """Shuffle, split, and fit the head with mini-batch Adam. Deterministic per seed."""
    config = config if config is not None else TrainConfig()
    config.validate()
    n = len(examples)
    if n < 2 * config.batch_size:
        raise UsageError(
            f"dataset too small: {n} examples, need at least {2 * config.batch_size}"
        )
    d = len(examples[0].h)
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_train = int(round(n * config.train_fraction))
    n_train = min(max(n_train, 1), n - 1)
    train_set = [examples[i] for i in perm[:n_train]]
    test_set = [examples[i] for i in perm[n_train:]]

    params = init_params(d, config.hidden1, config.hidden2, rng)
    state = AdamState.like(params)
    curve: list[tuple[int, float]] = [(0, mse_loss(params, train_set))]
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            batch_losses.append(mse_loss(params, batch))
            step += 1
            params = adam_step(params, gradient(params, batch), state, step, config)
        curve.append((epoch, float(np.mean(batch_losses))))

    X_test, G_test = _batch_arrays(test_set)
    v_test, _ = _forward_cached(params, X_test)
    test_mse = float(np.mean((v_test - G_test) ** 2))
    rewards = np.array([ex.reward for ex in test_set])
    ranking = success_failure_ranking(v_test[rewards == 1], v_test[rewards == 0])
    return TrainResult(
        params=params,
        loss_curve=curve,
        test_mse=test_mse,
        ranking_score=ranking,
        train_examples=n_train,
        test_examples=n - n_train,
    )


def balance(
    examples: list[TrainingExample], rng: np.random.Generator
) -> tuple[list[TrainingExample], str | None]:
    """Downsample failure examples so success and failure counts match.

    Keeps every success example. If failures are already the minority the
    input is returned unchanged along with a warning record.
    """
    successes = [ex for ex in examples if ex.reward == 1]
    failures = [ex for ex in examples if ex.reward == 0]
    if not successes:
        raise BalanceError("no success examples; a head trained on this would collapse to zero")
    if len(failures) < len(successes):
        return list(examples), (
            f"failure examples ({len(failures)}) fewer than success examples "
            f"({len(successes)}); returned unchanged"
        )
    keep = rng.choice(len(failures), size=len(successes), replace=False)
    kept_failures = [failures[i] for i in sorted(keep)]
    return successes + kept_failures, None


def save_model(params: ValueHeadParams, path: str | Path, meta: dict | None = None) -> None:
    payload = {
        "meta": meta or {},
        "shapes": {name: list(arr.shape) for name, arr in params.items()},
        "weights": {name: arr.ravel().tolist() for name, arr in params.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def model_to_json(params: ValueHeadParams, meta: dict | None = None) -> str:
    return json.dumps(
        {
            "meta": meta or {},
            "shapes": {name: list(arr.shape) for name, arr in params.items()},
            "weights": {name: arr.ravel().tolist() for name, arr in params.items()},
        }
    )


def model_from_json(text: str) -> tuple[ValueHeadParams, dict]:
    data = json.loads(text)
    arrays = {}
    for name in PARAM_NAMES:
        shape = tuple(data["shapes"][name])
        flat = np.array(data["weights"][name], dtype=float)
        if flat.size != int(np.prod(shape)):
            raise ConfigError(f"model file corrupt: {name} has {flat.size} values, shape {shape}")
        arrays[name] = flat.reshape(shape)
    return ValueHeadParams(**arrays), data.get("meta", {})


def load_model(path: str | Path) -> tuple[ValueHeadParams, dict]:
    return model_from_json(Path(path).read_text())
