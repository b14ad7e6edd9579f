from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..intervals import IntervalPartition, build_partition
from ..losses import batch_loss, classify_to_counts
from ..metrics import EvalSummary, evaluate
from ..nnkit import CountNet, ModelSpec, OptimState, adam_step, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import Split, load_split

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 0x5348


@dataclass
class RunResult:
    digest: str
    config: dict
    loss_curve: list = field(default_factory=list)
    summary: dict | None = None
    wall_time: float = 0.0
    status: str = "ok"
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(**d)


def lr_at(epoch: int, t) -> float:
    if t.lr_schedule == "fixed":
        return t.lr
    drops = (epoch >= int(0.6 * t.epochs)) + (epoch >= int(0.85 * t.epochs))
    return t.lr * 0.1 ** drops


class DivergenceError(FloatingPointError):
    pass


def make_partition(cfg: ExperimentConfig, train_counts: np.ndarray) -> IntervalPartition | None:
    if cfg.loss.main == "reg":
        return None
    p = cfg.partition
    return build_partition(p.scheme, p.n_intervals, float(train_counts.max()), train_counts, p.eps0)


def build_model(cfg: ExperimentConfig, partition: IntervalPartition | None, zero_head: bool = False) -> CountNet:
    if cfg.loss.main == "cls":
        spec = ModelSpec("logits", partition.n + 1)
    else:
        spec = ModelSpec("count")
    return CountNet(spec, seed=cfg.training.seed, zero_head=zero_head)


def predict_counts(model: CountNet, images: np.ndarray, partition: IntervalPartition | None) -> np.ndarray:
    out = model.predict(images)
    if model.spec.head == "logits":
        return classify_to_counts(out, partition)
    return out


def train_model(cfg: ExperimentConfig, train: Split, model: CountNet | None = None,
                partition: IntervalPartition | None = None, log_every: int = 0):
    """Fixed-epoch Adam training on the observed count maps.

    Returns (model, partition, per-epoch mean loss). Raises DivergenceError on a
    non-finite loss.
    """
    t = cfg.training
    if partition is None:
        partition = make_partition(cfg, train.observed)
    if model is None:
        model = build_model(cfg, partition)
    state = OptimState(lr=t.lr)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(t.seed), SHUFFLE_STREAM])))
    n = len(train.images)
    curve = []
    for epoch in range(t.epochs):
        state.lr = lr_at(epoch, t)
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, t.batch_size):
            idx = order[start:start + t.batch_size]
            out = model(train.images[idx])
            rep = batch_loss(cfg.loss.main, cfg.loss.gc, cfg.loss.w_gc, train.observed[idx], out.data, partition)
            if not np.isfinite(rep.value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            grads = model.backward(out, rep.grad)
            adam_step(model.params, grads, state)
            total += rep.value
            batches += 1
        curve.append(total / batches)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d loss %.6f", epoch + 1, curve[-1])
    return model, partition, curve


def evaluate_model(cfg: ExperimentConfig, model: CountNet, split: Split,
                   partition: IntervalPartition | None) -> EvalSummary:
    preds = predict_counts(model, split.images, partition)
    target = split.true if cfg.eval.target == "true" else split.observed
    return evaluate(list(preds), list(target), list(split.true), [tuple(b) for b in cfg.eval.bins])


def run(cfg: ExperimentConfig, data_dir: str, out_dir: str | None = None) -> RunResult:
    """Train on <data_dir>/train, evaluate on <data_dir>/test (train if absent), persist."""
    cfg.validate()
    t0 = time.perf_counter()
    result = RunResult(cfg.digest(), cfg.to_dict())
    train = load_split(data_dir, "train")
    try:
        model, partition, curve = train_model(cfg, train)
        result.loss_curve = curve
        test_dir = os.path.join(data_dir, "test", "meta.json")
        test = load_split(data_dir, "test") if os.path.exists(test_dir) else train
        result.summary = evaluate_model(cfg, model, test, partition).to_dict()
    except FloatingPointError as exc:
        result.status, result.error = "diverged", str(exc)
        model = partition = None
    result.wall_time = time.perf_counter() - t0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if model is not None:
            save_checkpoint(model, out_dir, extra={
                "config": cfg.to_dict(), "digest": result.digest,
                "partition": partition.to_dict() if partition is not None else None})
        with open(os.path.join(out_dir, "run.json"), "w") as f:
            json.dump(result.to_dict(), f, indent=2)
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            json.dump(cfg.to_dict(), f, indent=2)
    return result


def load_trained(model_dir: str):
    model, extra = load_checkpoint(model_dir)
    cfg = ExperimentConfig.from_dict(extra["config"])
    part = extra.get("partition")
    partition = IntervalPartition.from_dict(part) if part else None
    if model.spec.head == "logits" and partition is None:
        raise ConfigError("classification checkpoint without a partition")
    if model.spec.head == "logits" and partition.n + 1 != model.spec.n_classes:
        raise ConfigError(f"partition has {partition.n + 1} intervals, head has {model.spec.n_classes} classes")
    return model, cfg, partition
