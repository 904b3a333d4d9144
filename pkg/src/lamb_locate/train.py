"""Supervised training with a loss taken at every time step.

Gradients are computed by hand-written backpropagation through time over
the batched forward pass in :mod:`lamb_locate.gru`. An *episode* is one
AdamW step on one randomly drawn batch.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, NumericError
from .gru import ModelParams, PARAM_ORDER, PredictionTrace, forward_batch, init_params, save_checkpoint
from .pipeline import Dataset, PipelineConfig, stack_windows, windows_for

logger = logging.getLogger(__name__)

LOSS_MODES = ("per_step", "final")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    batch_size: int = 500
    lr0: float = 1e-2
    decay_factor: float = 0.9
    decay_every: int = 100
    weight_decay: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 50
    patience: int = 20
    seed: int = 0
    clip_norm: Optional[float] = 1.0
    loss_mode: str = "per_step"
    eval_last_n: int = 10
    eval_seed: int = 0

    def __post_init__(self):
        if self.episodes < 0 or self.batch_size < 1 or self.decay_every < 1 or self.eval_every < 1:
            raise ConfigError("episodes, batch_size, decay_every and eval_every must be positive")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")


@dataclass
class OptimizerState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)  # (episode, mean error in metres)
    best_episode: Optional[int] = None
    best_error: float = float("inf")
    stopped_early: bool = False

    def record_eval(self, episode: int, error: float) -> bool:
        self.evaluations.append((episode, float(error)))
        if error < self.best_error:
            self.best_error, self.best_episode = float(error), episode
            return True
        return False

    def to_csv(self, path) -> None:
        evals = dict(self.evaluations)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "loss", "lr", "val_error"])
            n = max(len(self.losses), max(evals, default=-1) + 1)
            for ep in range(n):
                loss = repr(self.losses[ep]) if ep < len(self.losses) else ""
                lr = repr(self.lrs[ep]) if ep < len(self.lrs) else ""
                val = repr(evals[ep]) if ep in evals else ""
                w.writerow([ep, loss, lr, val])


def _preds(trace):
    return trace.predictions if isinstance(trace, PredictionTrace) else np.asarray(trace)


def sequence_loss(trace, target) -> float:
    """Mean over time steps of the squared Euclidean prediction error."""
    P = _preds(trace)
    if P.shape[0] < 1:
        raise ConfigError("empty trace")
    d = P - np.asarray(target, dtype=float)
    return float(np.mean(np.sum(d * d, axis=1)))


def batch_loss(traces, targets) -> float:
    if len(traces) == 0:
        raise ConfigError("empty batch")
    if len(traces) != len(targets):
        raise ConfigError("traces and targets differ in count")
    return float(np.mean([sequence_loss(t, y) for t, y in zip(traces, targets)]))


def _loss_from_predictions(Y, T, mode):
    if mode == "final":
        d = Y[:, -1, :] - T
        return float(np.mean(np.sum(d * d, axis=-1)))
    d = Y - T[:, None, :]
    return float(np.mean(np.sum(d * d, axis=-1)))


def loss_and_grad(X, targets, params: ModelParams, loss_mode: str = "per_step"):
    """Batch loss and its exact gradient for windows ``X`` (B, L, S)."""
    T = np.asarray(targets, dtype=params.W_in.dtype)
    Y, c = forward_batch(X, params, keep_cache=True)
    loss = _loss_from_predictions(Y, T, loss_mode)
    B, L, _ = Y.shape
    H = params.H
    p = params

    # dLoss/dY, time-major (L, B, 2)
    dY = np.zeros((L, B, 2), dtype=Y.dtype)
    if loss_mode == "final":
        dY[-1] = 2.0 * (Y[:, -1, :] - T) / B
    else:
        dY[:] = (2.0 / (B * L)) * (Y - T[:, None, :]).transpose(1, 0, 2)

    hs = c.h[1:]
    g = {}
    g["W_out"] = np.einsum("tbo,tbh->oh", dY, hs)
    g["b_out"] = dY.sum(axis=(0, 1))
    dH = dY @ p.W_out  # (L, B, H)

    U = np.concatenate([p.U_r, p.U_u, p.U_n])
    dGI = np.empty((L, B, 3 * H), dtype=Y.dtype)
    dGH = np.empty((L, B, 3 * H), dtype=Y.dtype)
    dh = np.zeros((B, H), dtype=Y.dtype)
    for t in range(L - 1, -1, -1):
        dh = dh + dH[t]
        h_prev = c.h[t]
        r, u, n, hn = c.r[t], c.u[t], c.n[t], c.hn[t]
        da_n = dh * (1.0 - u) * (1.0 - n * n)
        da_u = dh * (h_prev - n) * u * (1.0 - u)
        da_r = da_n * hn * r * (1.0 - r)
        gi = dGI[t]
        gi[:, :H] = da_r
        gi[:, H:2 * H] = da_u
        gi[:, 2 * H:] = da_n
        gh = dGH[t]
        gh[:, :2 * H] = gi[:, :2 * H]
        gh[:, 2 * H:] = da_n * r
        dh = dh * u + gh @ U

    Hprev = c.h[:-1].reshape(L * B, H)
    dGH2 = dGH.reshape(L * B, 3 * H)
    dU = dGH2.T @ Hprev
    g["U_r"], g["U_u"], g["U_n"] = dU[:H], dU[H:2 * H], dU[2 * H:]
    g["b_hn"] = dGH2[:, 2 * H:].sum(axis=0)
    dGI2 = dGI.reshape(L * B, 3 * H)
    Z2 = c.Z.reshape(L * B, H)
    dW = dGI2.T @ Z2
    g["W_r"], g["W_u"], g["W_n"] = dW[:H], dW[H:2 * H], dW[2 * H:]
    db = dGI2.sum(axis=0)
    g["b_r"], g["b_u"], g["b_n"] = db[:H], db[H:2 * H], db[2 * H:]
    Wg = np.concatenate([p.W_r, p.W_u, p.W_n])
    dZ = dGI2 @ Wg
    g["W_in"] = dZ.T @ c.X.reshape(L * B, -1)
    g["b_in"] = dZ.sum(axis=0)

    grads = ModelParams(**{k: g[k] for k in PARAM_ORDER})
    for k, a in grads.tensors().items():
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite gradient in {k}")
    return loss, grads


def backward(X, targets, params: ModelParams, loss_mode: str = "per_step") -> ModelParams:
    """Gradient of the batch loss with respect to every parameter tensor."""
    return loss_and_grad(X, targets, params, loss_mode)[1]


def global_norm(grads: ModelParams) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in grads.tensors().values())))


def clip_by_global_norm(grads: ModelParams, max_norm: float) -> ModelParams:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / (norm + 1e-6)
    return grads.map(lambda a: a * scale)


def adamw_step(params: ModelParams, grads: ModelParams, state: OptimizerState, lr: float,
               config: TrainConfig = TrainConfig()):
    """One AdamW update with decoupled weight decay and bias correction.

    Returns new ``(params, state)``; the inputs are not modified.
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    b1, b2, eps, wd = config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    m = state.m.map(lambda m_, g: b1 * m_ + (1 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1 - b2) * g * g, grads)
    new = params.map(
        lambda p, m_, v_: p * (1 - lr * wd) - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), m, v
    )
    new.metadata = dict(params.metadata)
    return new, OptimizerState(m, v, t)


def lr_schedule(episode: int, config: TrainConfig = TrainConfig()) -> float:
    if episode < 0:
        raise ConfigError("episode must be >= 0")
    return config.lr0 * config.decay_factor ** (episode // config.decay_every)


def mean_position_error(Y, targets, last_n: int = 10) -> float:
    """Mean over items of the distance between the last-``last_n`` averaged prediction and target."""
    est = np.asarray(Y)[:, -last_n:, :].mean(axis=1)
    return float(np.mean(np.linalg.norm(est - np.asarray(targets), axis=1)))


@dataclass
class TrainResult:
    params: ModelParams  # best validation checkpoint
    history: TrainHistory
    last_params: ModelParams


def _episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode, 0x5EED]).generate_state(1)[0])


def train(dataset: Dataset, pipeline: PipelineConfig, hidden: int, config: TrainConfig = TrainConfig(),
          out_dir=None, init: Optional[ModelParams] = None) -> TrainResult:
    """Train an estimator on the ``train`` split, selecting on ``val``.

    With ``out_dir`` the best checkpoint (``model.ckpt``), the history
    (``history.csv``) and the training configuration are written there.
    """
    train_ids = dataset.usable(dataset.split_ids("train"), pipeline.threshold)
    val_ids = dataset.usable(dataset.split_ids("val"), pipeline.threshold)
    if not train_ids or not val_ids:
        raise ConfigError("train and val splits must be non-empty")
    S = len(pipeline.sensors)
    params = init if init is not None else init_params(S, hidden, config.seed)
    params.metadata = {
        "pipeline": asdict(pipeline),
        "train": asdict(config),
        "hidden": hidden,
    }
    Xv, Tv = stack_windows(windows_for(dataset, val_ids, pipeline, config.eval_seed))
    state = OptimizerState.zeros(params)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best = params.copy()
    stale = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def evaluate(ep):
        nonlocal best, stale
        Yv, _ = forward_batch(Xv, params)
        err = mean_position_error(Yv, Tv, config.eval_last_n)
        if history.record_eval(ep, err):
            best = params.copy()
            best.metadata["episode"] = ep
            stale = 0
        else:
            stale += 1
        logger.info("episode %d: val error %.4f m (best %.4f m)", ep, err, history.best_error)

    batch = min(config.batch_size, len(train_ids))
    ep = 0
    for ep in range(config.episodes):
        if ep % config.eval_every == 0:
            evaluate(ep)
            if stale >= config.patience:
                history.stopped_early = True
                logger.info("early stop at episode %d", ep)
                break
        lr = lr_schedule(ep, config)
        ids = [train_ids[i] for i in rng.choice(len(train_ids), size=batch, replace=False)]
        X, T = stack_windows(windows_for(dataset, ids, pipeline, _episode_seed(config.seed, ep)))
        try:
            loss, grads = loss_and_grad(X, T, params, config.loss_mode)
        except NumericError as exc:
            loss, grads = float("nan"), None
            reason = str(exc)
        else:
            reason = "non-finite loss"
        if grads is None or not np.isfinite(loss):
            if out_dir is not None:
                save_checkpoint(best, out_dir / "model.ckpt")
                history.to_csv(out_dir / "history.csv")
            raise DivergenceError(f"training diverged at episode {ep}: {reason}", best, history)
        if config.clip_norm:
            grads = clip_by_global_norm(grads, config.clip_norm)
        params, state = adamw_step(params, grads, state, lr, config)
        history.losses.append(loss)
        history.lrs.append(lr)
    else:
        if config.episodes > 0:
            evaluate(config.episodes)

    if out_dir is not None:
        save_checkpoint(best, out_dir / "model.ckpt")
        history.to_csv(out_dir / "history.csv")
        (out_dir / "train_config.json").write_text(json.dumps(best.metadata, indent=1, sort_keys=True) + "\n")
    return TrainResult(best, history, params)
