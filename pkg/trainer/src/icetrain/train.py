"""Training loops: single device and synchronous data-parallel.

Data parallelism is one replica per device, run as threads (the tensor
kernels release the GIL). Every step is collective: replicas compute
gradients on their shard of the union batch, the shard-size-weighted
average replaces everyone's gradients, and each optimizer applies the
identical update. Initial parameters broadcast from replica 0, so the
replicas never drift. The weighting makes a synchronized step exactly
equal a single-device step on the union batch, ragged final batch
included.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import train_val_split
from .model import UNet, UNetSpec

# The standard batch sizes; anything >= 1 is accepted for toy corpora.
BATCH_CHOICES = (16, 32, 64)
TABLE_COLUMNS = ("devices", "total_s", "s_per_epoch", "samples_per_s", "speedup")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 5          # 50 is the full-scale default
    lr: float = 1e-3
    val_fraction: float = 0.2
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.device not in ("cpu", "cuda"):
            raise ValueError(f"device must be cpu or cuda, got {self.device!r}")


@dataclass
class TrainResult:
    model: UNet
    spec: UNetSpec
    config: TrainConfig
    history: list = field(default_factory=list)


def _tensors(pairs: list) -> tuple:
    images = np.stack([p[0] for p in pairs])
    masks = np.stack([p[1] for p in pairs])
    x = torch.from_numpy(images).permute(0, 3, 1, 2).float() / 255.0
    y = torch.from_numpy(masks).long()
    return x, y


def _validate_pairs(pairs: list, spec: UNetSpec) -> None:
    if not pairs:
        raise ValueError("training corpus is empty")
    step = 2 ** spec.depth
    shape = pairs[0][0].shape
    for i, (tile, mask) in enumerate(pairs):
        if tile.shape != shape or mask.shape != shape[:2]:
            raise ValueError(f"pair {i}: shape {tile.shape}/{mask.shape} does "
                             f"not match the corpus shape {shape}")
        if mask.min() < 0 or mask.max() >= spec.classes:
            raise ValueError(f"pair {i}: class index out of range for "
                             f"{spec.classes} classes")
    if shape[2] != spec.in_channels or shape[0] % step or shape[1] % step:
        raise ValueError(f"tile shape {shape} does not fit the model "
                         f"(needs {spec.in_channels} channels, dims divisible by {step})")


def synchronized_step(models: list, optimizers: list, shards: list) -> tuple:
    """One collective training step. ``shards[i]`` is replica i's
    ``(x, y)`` slice of the union batch (may be empty). Returns the
    union-batch mean loss and the sample count."""
    criterion = nn.CrossEntropyLoss()

    def backward(i: int) -> tuple:
        model, (x, y) = models[i], shards[i]
        if len(x) == 0:
            return [torch.zeros_like(p) for p in model.parameters()], 0, 0.0
        model.zero_grad(set_to_none=True)
        loss = criterion(model(x), y)
        loss.backward()
        grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                 for p in model.parameters()]
        return grads, len(x), float(loss.detach())

    if len(models) > 1:
        with ThreadPoolExecutor(max_workers=len(models)) as pool:
            outcomes = list(pool.map(backward, range(len(models))))
    else:
        outcomes = [backward(0)]

    total = sum(n for _, n, _ in outcomes)
    if total == 0:
        raise ValueError("synchronized step got only empty shards")
    averaged = [
        sum(n * grads[k] for grads, n, _ in outcomes) / total
        for k in range(len(outcomes[0][0]))
    ]
    for model, optimizer in zip(models, optimizers):
        for p, g in zip(model.parameters(), averaged):
            p.grad = g.clone()
        optimizer.step()
    mean_loss = sum(n * loss for _, n, loss in outcomes) / total
    return mean_loss, total


def _evaluate(model: UNet, x: torch.Tensor, y: torch.Tensor, batch: int) -> tuple:
    criterion = nn.CrossEntropyLoss()
    model.eval()
    loss_sum, correct, pixels = 0.0, 0, 0
    with torch.no_grad():
        for start in range(0, len(x), batch):
            xb, yb = x[start:start + batch], y[start:start + batch]
            logits = model(xb)
            loss_sum += float(criterion(logits, yb)) * len(xb)
            correct += int((logits.argmax(dim=1) == yb).sum())
            pixels += yb.numel()
    return loss_sum / len(x), correct / pixels


def _fit(pairs: list, spec: UNetSpec, config: TrainConfig, replicas: int) -> tuple:
    _validate_pairs(pairs, spec)
    torch.manual_seed(config.seed)
    train_pairs, val_pairs = train_val_split(pairs, config.val_fraction, config.seed)
    x_train, y_train = _tensors(train_pairs)
    x_val, y_val = _tensors(val_pairs) if val_pairs else (None, None)

    models = [UNet(spec)]
    for _ in range(replicas - 1):
        twin = UNet(spec)
        twin.load_state_dict(models[0].state_dict())
        models.append(twin)
    optimizers = [torch.optim.Adam(m.parameters(), lr=config.lr) for m in models]

    shuffler = torch.Generator().manual_seed(config.seed)
    history = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        for m in models:
            m.train()
        order = torch.randperm(len(x_train), generator=shuffler)
        span = config.batch_size * replicas
        loss_sum, seen = 0.0, 0
        for start in range(0, len(order), span):
            union = order[start:start + span]
            shards = [(x_train[piece], y_train[piece])
                      for piece in torch.tensor_split(union, replicas)]
            loss, count = synchronized_step(models, optimizers, shards)
            loss_sum += loss * count
            seen += count
        entry = {"epoch": epoch, "train_loss": loss_sum / seen}
        entry["train_acc"] = _evaluate(models[0], x_train, y_train,
                                       config.batch_size)[1]
        if x_val is not None:
            entry["val_loss"], entry["val_acc"] = _evaluate(
                models[0], x_val, y_val, config.batch_size)
        history.append(entry)
    total_s = time.perf_counter() - started

    result = TrainResult(models[0], spec, config, history)
    row = {
        "devices": replicas,
        "total_s": round(total_s, 3),
        "s_per_epoch": round(total_s / config.epochs, 3),
        "samples_per_s": round(config.epochs * len(x_train) / total_s, 3)
                         if total_s > 0 else 0.0,
        "speedup": 1.0,
    }
    return result, row


def train(pairs: list, spec: UNetSpec, config: TrainConfig) -> TrainResult:
    """Single-device training. Fixed seed, reproducible history."""
    result, _ = _fit(pairs, spec, config, replicas=1)
    return result


def _available_replicas(config: TrainConfig, requested: int) -> int:
    if requested < 1:
        raise ValueError(f"devices must be >= 1, got {requested}")
    if config.device == "cuda":
        have = torch.cuda.device_count()
        if have < requested:
            warnings.warn(f"requested {requested} cuda devices, "
                          f"{have} available; falling back to 1 device")
            return 1
    return requested


def train_distributed(pairs: list, spec: UNetSpec, config: TrainConfig,
                      devices: int = 1) -> tuple:
    """Synchronous data-parallel training across ``devices`` replicas.
    Returns (TrainResult, throughput row). With devices=1 the history
    is identical to train() under the same seed."""
    replicas = _available_replicas(config, devices)
    return _fit(pairs, spec, config, replicas)


def throughput_table(pairs: list, spec: UNetSpec, config: TrainConfig,
                     device_counts: tuple = (1, 2)) -> list:
    """One row per device count, speedups relative to the first row."""
    if not device_counts:
        raise ValueError("device_counts must list at least one count")
    rows = []
    for n in device_counts:
        _, row = train_distributed(pairs, spec, config, devices=n)
        rows.append(row)
    base = rows[0]["samples_per_s"]
    for row in rows:
        row["speedup"] = round(row["samples_per_s"] / base, 3) if base > 0 else 1.0
    return rows


def table_csv(rows: list) -> str:
    lines = [",".join(TABLE_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in TABLE_COLUMNS))
    return "\n".join(lines) + "\n"
