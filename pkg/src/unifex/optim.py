"""Training loop for the projection head: Adam + linear warmup + cosine decay.

Only the projection head and the classifier weights are trainable; the
backbone embeddings arrive precomputed and frozen. Batches are shuffled
with a Philox stream per epoch, so runs are exactly reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .data import ClassStats, DatasetManifest, EmbeddingMatrix
from .errors import ConfigError, NumericError, ShapeError
from .losses import (
    ClassifierWeights,
    LossConfig,
    init_loss_state,
    loss_and_grad,
    margins_from_counts,
)
from .probe import ProbeModel, probe_backward, project
from .rand import STREAM_SHUFFLE, philox

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-2
    lr_min: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_epochs: int = 1
    seed: int = 0
    max_seen_samples: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.lr_min <= self.lr:
            raise ConfigError("need 0 < lr_min <= lr")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.epochs <= self.warmup_epochs:
            raise ConfigError("epochs must exceed warmup_epochs")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if self.max_seen_samples is not None and self.max_seen_samples < 1:
            raise ConfigError("max_seen_samples must be positive when present")


def lr_at(step: int, steps_per_epoch: int, cfg: TrainerConfig) -> float:
    """Learning rate for a global step.

    Warmup climbs linearly from lr/warmup_steps to lr (reached at the last
    warmup step); afterwards a cosine takes lr down to lr_min at the final
    step of training.
    """
    if step < 0 or steps_per_epoch < 1:
        raise ConfigError("step must be >= 0 and steps_per_epoch >= 1")
    warm = cfg.warmup_epochs * steps_per_epoch
    if step < warm:
        return cfg.lr * (step + 1) / warm
    span = cfg.epochs * steps_per_epoch - 1 - warm
    if span <= 0:
        return cfg.lr_min
    tau = min(1.0, (step - warm) / span)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * tau))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainerConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step; weight decay folds into the gradient."""
    if set(params) != set(grads):
        raise ShapeError("params and grads must share the same keys")
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name!r} at optimizer step {t}")
        g = g + cfg.weight_decay * p
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    metric: float | None = None


def count_trainable_params(model: ProbeModel) -> int:
    """D_in*64 + 64 + C*K*64 — nothing else trains (backbone frozen)."""
    return model.w_proj.size + model.b_proj.size + model.classifier.values.size


def train_probe(
    train: tuple[EmbeddingMatrix, DatasetManifest],
    model: ProbeModel,
    loss_cfg: LossConfig,
    cfg: TrainerConfig,
    eval_hook: Callable[[ProbeModel, int], float] | None = None,
) -> tuple[ProbeModel, list[EpochStats]]:
    """Train the projection head + classifier; everything else stays frozen.

    When an eval hook is given, the model snapshot from the epoch with the
    highest metric is returned (ties keep the earliest epoch); otherwise
    the final model is returned.
    """
    embeddings, manifest = train
    n = embeddings.rows
    if n == 0:
        raise ConfigError("training set is empty")
    if len(manifest) != n:
        raise ShapeError(
            f"manifest has {len(manifest)} records but embeddings have {n} rows"
        )
    if embeddings.dim != model.input_dim:
        raise ShapeError(
            f"embeddings are {embeddings.dim}-d but the model expects {model.input_dim}-d"
        )
    labels = manifest.class_ids
    num_classes = model.classifier.num_classes
    if labels.max() >= num_classes:
        raise ConfigError(
            f"manifest class ids reach {labels.max()} but the classifier has "
            f"{num_classes} classes; remap ids first"
        )

    if loss_cfg.variant == "dynmargin-arcface" and loss_cfg.class_margins is None:
        stats = ClassStats.from_manifest(manifest)
        margins = margins_from_counts(stats.counts, loss_cfg.m_min, loss_cfg.m_max)
        loss_cfg = replace(loss_cfg, class_margins=tuple(margins))

    x_all = embeddings.values.astype(np.float64)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    loss_state = init_loss_state(loss_cfg, num_classes)
    params = {
        "w_proj": model.w_proj.copy(),
        "b_proj": model.b_proj.copy(),
        "classifier": model.classifier.values.copy(),
    }
    adam = AdamState.init_like(params)

    def snapshot() -> ProbeModel:
        live = ProbeModel(
            w_proj=params["w_proj"],
            b_proj=params["b_proj"],
            dropout_rate=model.dropout_rate,
            classifier=ClassifierWeights(params["classifier"]),
        )
        return live.copy()

    history: list[EpochStats] = []
    best_metric = -math.inf
    best_model: ProbeModel | None = None
    step = 0
    seen = 0
    stop = False
    for epoch in range(cfg.epochs):
        order = philox(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        samples = 0
        lr = cfg.lr
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb = x_all[idx]
            yb = labels[idx]
            live = ProbeModel(
                w_proj=params["w_proj"],
                b_proj=params["b_proj"],
                dropout_rate=model.dropout_rate,
                classifier=ClassifierWeights(params["classifier"]),
            )
            projected, mask = project(live, xb, mode="train", seed=cfg.seed, step=step)
            try:
                loss, dl_dy, dl_dcls, loss_state = loss_and_grad(
                    loss_cfg, projected, live.classifier, yb, loss_state
                )
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            dw, db, _ = probe_backward(live, xb, dl_dy, mask)
            lr = lr_at(step, steps_per_epoch, cfg)
            try:
                params, adam = adam_step(
                    params, {"w_proj": dw, "b_proj": db, "classifier": dl_dcls}, adam, lr, cfg
                )
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            loss_sum += loss * len(idx)
            samples += len(idx)
            seen += len(idx)
            step += 1
            if cfg.max_seen_samples is not None and seen >= cfg.max_seen_samples:
                stop = True
                break
        stats = EpochStats(epoch=epoch, mean_loss=loss_sum / samples, lr=lr)
        if eval_hook is not None:
            current = snapshot()
            stats.metric = float(eval_hook(current, epoch))
            if stats.metric > best_metric:
                best_metric = stats.metric
                best_model = current
        history.append(stats)
        logger.info(
            "epoch %d: loss %.6f lr %.2e%s",
            epoch,
            stats.mean_loss,
            stats.lr,
            "" if stats.metric is None else f" metric {stats.metric:.4f}",
        )
        if stop:
            logger.info("stopping early: %d samples seen >= budget", seen)
            break

    final = snapshot()
    return (best_model if best_model is not None else final), history
