"""Adam, the per-epoch learning-rate decay, the training loop and evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset, augment_flip
from .metrics import EvalReport, evaluate_arrays
from .model import ModelConfig, ModelParams, encode_checkpoint, forward, init_params, param_dict
from .skeleton import SkeletonGraph, horizontal_flip
from .tensor import GradTape, Tensor

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, best_params: ModelParams | None, history: list[dict]):
        super().__init__(msg)
        self.best_params = best_params
        self.history = history


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr0: float = 0.001
    lr_decay: float = 0.95
    seed: int = 0
    eval_every: int = 1
    flip_prob: float = 0.5
    grad_clip: float | None = None  # global L2 norm; None disables
    max_steps: int | None = None
    train_scales: bool = False  # guidance scales are fixed hyperparameters unless set
    workers: int = 1  # >1 splits each batch across threads; not bitwise reproducible
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1 or self.workers < 1:
            raise ValueError("epochs, batch_size, eval_every and workers must be positive")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "OptimState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **kw,
        )


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState
) -> tuple[dict[str, np.ndarray], OptimState]:
    """One bias-corrected Adam update. Returns new parameter arrays and a new state.

    Parameters without an entry in ``grads`` are left untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    for name, g in grads.items():
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_m[name], new_v[name] = m, v
        new_p[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_p, dataclasses.replace(state, m=new_m, v=new_v, t=t)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay**epoch


# ---------------------------------------------------------------------------
# loss and gradients


def mpjpe_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean per-joint Euclidean distance."""
    return T.mean(T.norm_lastdim(T.sub(pred, target)))


def _trainable(params: ModelParams, cfg: TrainConfig) -> dict[str, Tensor]:
    named = param_dict(params)
    if not cfg.train_scales:
        named = {k: v for k, v in named.items() if not k.endswith((".s_g2a", ".s_a2g"))}
    return named


def loss_and_grads(params, config, graph, x, y, names, tensors, rng=None):
    with GradTape() as tape:
        loss = mpjpe_loss(forward(x, params, config, graph, rng), Tensor(y))
    grads = tape.gradient(loss, tensors)
    return loss.item(), dict(zip(names, grads))


def _parallel_loss_and_grads(params, config, graph, x, y, names, tensors, workers):
    shards = [s for s in np.array_split(np.arange(len(x)), workers) if len(s)]

    def run(idx):
        loss, grads = loss_and_grads(params, config, graph, x[idx], y[idx], names, tensors)
        return loss, grads, len(idx)

    with ThreadPoolExecutor(max_workers=len(shards)) as pool:
        results = list(pool.map(run, shards))
    total = sum(n for _, _, n in results)
    loss = sum(l * n for l, _, n in results) / total
    grads = {k: sum(g[k] * (n / total) for _, g, n in results) for k in names}
    return loss, grads


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    f = max_norm / total
    return {k: g * f for k, g in grads.items()}


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ModelParams  # best by eval MPJPE
    last_params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_eval: float = math.inf
    steps: int = 0


def _snapshot(params: ModelParams) -> ModelParams:
    """Deep copy of the parameter tree with fresh arrays."""
    return _copy_tree(params)


def _copy_tree(obj):
    if isinstance(obj, Tensor):
        return Tensor(obj.data.copy(), requires_grad=obj.requires_grad)
    if dataclasses.is_dataclass(obj):
        return dataclasses.replace(
            obj, **{f.name: _copy_tree(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        )
    if isinstance(obj, list):
        return [_copy_tree(o) for o in obj]
    return obj


def train(
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    graph: SkeletonGraph,
    eval_set: Dataset | None = None,
    params: ModelParams | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    flip_test: bool = True,
) -> TrainResult:
    """Minimize mean per-joint L2 loss with Adam; keep the best parameters by eval MPJPE.

    ``eval_set`` defaults to the training set. When ``checkpoint_path`` is
    given the best parameters are written there each time they improve.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_params(model_cfg, seed=train_cfg.seed)
    eval_set = dataset if eval_set is None else eval_set
    x_all, y_all = dataset.inputs(), dataset.targets()
    n = len(dataset)

    trainable = _trainable(params, train_cfg)
    names = list(trainable)
    tensors = [trainable[k] for k in names]
    state = OptimState.zeros_like(
        {k: t.data for k, t in trainable.items()},
        lr=train_cfg.lr0,
        beta1=train_cfg.beta1,
        beta2=train_cfg.beta2,
        eps=train_cfg.adam_eps,
    )
    history: list[dict] = []
    best = _snapshot(params)
    best_eval = math.inf
    step = 0
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(train_cfg.epochs):
            state = dataclasses.replace(state, lr=lr_schedule(epoch, train_cfg))
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, train_cfg.batch_size):
                idx = order[start:start + train_cfg.batch_size]
                xb, yb = augment_flip(x_all[idx], y_all[idx], graph, train_cfg.flip_prob, rng)
                drop_rng = rng if model_cfg.dropout > 0 else None
                if train_cfg.workers > 1 and drop_rng is None:
                    loss, grads = _parallel_loss_and_grads(
                        params, model_cfg, graph, xb, yb, names, tensors, train_cfg.workers
                    )
                else:
                    loss, grads = loss_and_grads(params, model_cfg, graph, xb, yb, names, tensors, drop_rng)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} at step {step}", best, history)
                if train_cfg.grad_clip is not None:
                    grads = _clip(grads, train_cfg.grad_clip)
                try:
                    new, state = adam_step({k: t.data for k, t in trainable.items()}, grads, state)
                except FloatingPointError as exc:
                    raise TrainingDiverged(str(exc), best, history) from exc
                for k, t in trainable.items():
                    t.data = new[k]
                losses.append(loss)
                step += 1
                if train_cfg.max_steps is not None and step >= train_cfg.max_steps:
                    break
            entry = {"epoch": epoch, "lr": state.lr, "train_loss": float(np.mean(losses)), "steps": step}
            last_epoch = train_cfg.max_steps is not None and step >= train_cfg.max_steps
            if (epoch + 1) % train_cfg.eval_every == 0 or epoch == train_cfg.epochs - 1 or last_epoch:
                report = evaluate(eval_set, params, model_cfg, graph, flip_test=flip_test)
                entry["eval_mpjpe"] = report.mpjpe_mm
                if report.mpjpe_mm < best_eval:
                    best_eval = report.mpjpe_mm
                    best = _snapshot(params)
                    if checkpoint_path is not None:
                        Path(checkpoint_path).write_bytes(
                            encode_checkpoint(best, model_cfg, {"epoch": epoch, "eval_mpjpe": best_eval})
                        )
            history.append(entry)
            log.info("epoch %d lr %.3g loss %.3f eval %s", epoch, entry["lr"], entry["train_loss"],
                     entry.get("eval_mpjpe"))
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if last_epoch:
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(best, params, history, best_eval, step)


# ---------------------------------------------------------------------------
# evaluation


def predict_batch(
    x: np.ndarray, params, config, graph, flip_test: bool = True, batch_size: int = 512
) -> np.ndarray:
    """Predict ``(B, J, 3)``; with ``flip_test`` average with the un-flipped prediction of the flipped input."""
    out = []
    for s in range(0, len(x), batch_size):
        xb = x[s:s + batch_size]
        y = forward(xb, params, config, graph).data
        if flip_test:
            yf = forward(horizontal_flip(xb, graph), params, config, graph).data
            y = 0.5 * (y + horizontal_flip(yf, graph))
        out.append(y)
    return np.concatenate(out) if out else np.zeros((0, config.num_joints, 3))


def evaluate(
    dataset: Dataset,
    params: ModelParams,
    config: ModelConfig,
    graph: SkeletonGraph,
    flip_test: bool = True,
    verbose: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Metrics on ``dataset``. ``verbose`` also reports the metric for the other flip setting."""
    x, y = dataset.inputs(), dataset.targets()

    def run(flip):
        if workers <= 1:
            return predict_batch(x, params, config, graph, flip)
        shards = [s for s in np.array_split(np.arange(len(x)), workers) if len(s)]
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            parts = pool.map(lambda idx: predict_batch(x[idx], params, config, graph, flip), shards)
            return np.concatenate(list(parts))

    report = evaluate_arrays(run(flip_test), y, dataset.actions())
    report.extra["flip_test"] = flip_test
    if verbose:
        other = evaluate_arrays(run(not flip_test), y)
        key = "mpjpe_no_flip" if flip_test else "mpjpe_flip"
        report.extra[key] = other.mpjpe_mm
    return report
