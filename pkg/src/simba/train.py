"""Optimization loop, schedule, score fusion, and evaluation."""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import SkeletonDataset, assemble_batch
from .errors import TrainingAbort, ValidationError
from .model import SimbaModel
from .tensor import cross_entropy_logits, no_grad, softmax


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then step decay at each milestone."""
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs
    passed = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.base_lr * cfg.lr_decay_rate ** passed


class SGD:
    """Momentum SGD with optional Nesterov lookahead.

    Weight decay touches only parameters flagged ``decay`` (conv/linear
    weights); a non-finite gradient aborts the step naming the parameter.
    """

    def __init__(self, named_params, momentum: float = 0.9,
                 weight_decay: float = 0.0, nesterov: bool = True):
        self._params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self._velocity = {name: np.zeros_like(p.data) for name, p in self._params}

    def named_velocities(self):
        return list(self._velocity.items())

    def zero_grad(self):
        for _, p in self._params:
            p.zero_grad()

    def step(self, lr: float):
        for name, p in self._params:
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingAbort(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay and getattr(p, "decay", False):
                g = g + self.weight_decay * p.data
            v = self._velocity[name]
            v *= self.momentum
            v += g
            update = g + self.momentum * v if self.nesterov else v
            p.data = p.data - lr * update


def evaluate(model: SimbaModel, dataset: SkeletonDataset, cfg: TrainConfig,
             modality: str = "joint"):
    """Deterministic full-dataset pass; returns (probs [N, K], labels [N])."""
    model.eval()
    probs = np.empty((len(dataset), model.num_classes))
    labels = np.empty(len(dataset), dtype=np.int64)
    with no_grad():
        for start in range(0, len(dataset), cfg.batch_size_eval):
            idx = range(start, min(start + cfg.batch_size_eval, len(dataset)))
            x, y = assemble_batch(dataset, idx, cfg.window_T, "eval", modality,
                                  dtype=T.get_default_dtype())
            logits = model(T.Tensor(x))
            probs[idx.start:idx.stop] = softmax(logits, axis=1).data
            labels[idx.start:idx.stop] = y
    return probs, labels


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(probs.argmax(axis=1) == labels))


def _occurrence_counts(order: np.ndarray) -> np.ndarray:
    """How many times each entry's value has already appeared in the order."""
    occ = np.empty(len(order), dtype=np.int64)
    seen = {}
    for pos, idx in enumerate(order):
        idx = int(idx)
        occ[pos] = seen.get(idx, 0)
        seen[idx] = occ[pos] + 1
    return occ


def build_model(cfg: TrainConfig, dataset: SkeletonDataset) -> SimbaModel:
    T.set_default_dtype(cfg.precision)
    rng = np.random.default_rng(cfg.seed)
    labels = dataset.partition_labels() if cfg.partitions_enabled else None
    return SimbaModel(
        in_channels=3, channels=cfg.channels_C, mamba_d=cfg.mamba_D,
        vertices=dataset.num_joints, ssm_w=cfg.ssm_W, depth=cfg.depth_l,
        num_classes=dataset.num_classes, rng=rng, with_imamba=cfg.with_imamba,
        partition_labels=labels, tcn_radius=cfg.temporal_shift_radius,
        conv_kernel=cfg.conv_kernel, norm_placement=cfg.norm_placement,
        scan_chunk=cfg.scan_chunk)


def train(model: SimbaModel, train_ds: SkeletonDataset, eval_ds: SkeletonDataset,
          cfg: TrainConfig, out_dir=None, modality: str = "joint",
          verbose: bool = True):
    """Run the full schedule; returns (metrics list, best eval accuracy).

    Per-epoch metrics records hold only seed-deterministic fields so the
    JSON-lines log is reproducible byte-for-byte; wall-clock timing goes to
    the console instead.
    """
    T.set_default_dtype(cfg.precision)
    opt = SGD(model.named_parameters(), momentum=cfg.momentum,
              weight_decay=cfg.weight_decay, nesterov=cfg.nesterov)
    shuffle_rng = np.random.default_rng([cfg.seed, 0xD5])
    metrics = []
    best_acc = -1.0
    log_path = ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "metrics.jsonl")
        ckpt_path = os.path.join(out_dir, "checkpoint.bin")
        with open(log_path, "w"):
            pass

    order_base = np.repeat(np.arange(len(train_ds)), cfg.repeat_augmentation)
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        lr = lr_at(epoch, cfg)
        model.train()
        order = shuffle_rng.permutation(order_base)
        occurrence = _occurrence_counts(order)
        losses, hits, seen = [], 0, 0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size_train)):
            idx = order[start:start + cfg.batch_size_train]
            x, y = assemble_batch(train_ds, idx, cfg.window_T, "train", modality,
                                  seed_parts=(cfg.seed, epoch),
                                  occurrences=occurrence[start:start + cfg.batch_size_train],
                                  dtype=T.get_default_dtype())
            logits = model(T.Tensor(x))
            loss = cross_entropy_logits(logits, y)
            if not np.isfinite(loss.item()):
                raise TrainingAbort(f"non-finite loss at epoch {epoch}, batch {batch_no}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            losses.append(loss.item() * len(idx))
            hits += int(np.sum(logits.data.argmax(axis=1) == y))
            seen += len(idx)
        probs, labels = evaluate(model, eval_ds, cfg, modality)
        eval_acc = accuracy(probs, labels)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": sum(losses) / seen,
            "train_acc": hits / seen,
            "eval_acc": eval_acc,
        }
        metrics.append(record)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        if eval_acc > best_acc:
            best_acc = eval_acc
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, model, opt, meta={
                    "epoch": epoch, "eval_acc": eval_acc,
                    "config": json.loads(cfg.to_json()), "modality": modality,
                    "num_classes": train_ds.num_classes,
                    "num_joints": train_ds.num_joints,
                })
        if verbose:
            wall = time.perf_counter() - tic
            print(f"epoch {epoch:3d}  lr {lr:.5f}  loss {record['train_loss']:.4f}  "
                  f"train {record['train_acc']:.3f}  eval {eval_acc:.3f}  [{wall:.1f}s]")
    return metrics, best_acc


# ---------------------------------------------------------------------------
# multi-stream fusion
# ---------------------------------------------------------------------------

def fuse_scores(streams):
    """Sum per-stream softmax scores; argmax (lowest index on ties) predicts.

    Every stream must cover the same samples in the same order.
    """
    streams = [np.asarray(s, dtype=np.float64) for s in streams]
    if not streams:
        raise ValidationError("need at least one score stream")
    n = streams[0].shape
    for i, s in enumerate(streams[1:], start=1):
        if s.shape != n:
            raise ValidationError(f"stream 0 has shape {n} but stream {i} has {s.shape}")
    fused = np.sum(streams, axis=0)
    return fused, fused.argmax(axis=1)


def save_scores(path, probs: np.ndarray, ids=None) -> None:
    ids = list(range(len(probs))) if ids is None else list(ids)
    payload = {
        "version": 1,
        "num_classes": int(probs.shape[1]),
        "entries": [{"id": int(i), "probs": [float(p) for p in row]}
                    for i, row in zip(ids, probs)],
    }
    with open(path, "w") as f:
        json.dump(payload, f)
        f.write("\n")


def load_scores(path):
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != 1:
        raise ValidationError(f"{path}: unsupported score format")
    ids = [e["id"] for e in payload["entries"]]
    probs = np.array([e["probs"] for e in payload["entries"]], dtype=np.float64)
    if probs.size and (np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6)):
        raise ValidationError(f"{path}: rows must be probability vectors summing to 1")
    return probs, ids
