"""Compact spectrogram CNN, its training recipe and weight file format.

Training uses mean cross-entropy, SGD with classic momentum
(v <- mu v + g; p <- p - lr v), lr 0.001, mu 0.9, and early stopping on
validation accuracy with patience 5. Choices the recipe leaves open: He
initialization, batch-norm running statistics frozen in eval mode, classic
rather than Nesterov momentum.
"""

from __future__ import annotations

import io
import logging
import struct
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dsp import ParameterError

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"OMCNNW\x00\x01"
WEIGHTS_VERSION = 1
MIN_INPUT_SIDE = 16


@dataclass(frozen=True)
class CompactCnnConfig:
    channels: tuple[int, ...] = (16, 32, 64, 128)
    strides: tuple[int, ...] = (1, 1, 1, 1)
    num_classes: int = 98

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError("need at least two classes")
        if len(self.channels) != len(self.strides):
            raise ParameterError("channels and strides must have equal length")

    @property
    def min_side(self) -> int:
        return MIN_INPUT_SIDE


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 256  # desk-scale runs override with 64
    early_stop_patience: int = 5
    max_epochs: int = 60
    seed: int = 0
    repro: bool = True


def set_repro_mode(enabled: bool = True):
    """Single-threaded, deterministic kernels."""
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)


class CompactCnn(nn.Module):
    """conv3x3 -> batch-norm -> ReLU -> 2x2 max-pool blocks, global average pool, linear head."""

    def __init__(self, cfg: CompactCnnConfig = CompactCnnConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        blocks = []
        c_in = 3
        for c_out, stride in zip(cfg.channels, cfg.strides):
            conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
            bn = nn.BatchNorm2d(c_out)
            blocks.append(nn.Sequential(conv, bn, nn.ReLU(), nn.MaxPool2d(2, ceil_mode=True)))
            c_in = c_out
        self.features = nn.Sequential(*blocks)
        self.head = nn.Linear(c_in, cfg.num_classes)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, (nn.Conv2d, nn.Linear)):
                    fan_in = m.weight[0].numel()
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * np.sqrt(2.0 / fan_in))
                    if m.bias is not None:
                        m.bias.zero_()
        # feature-extraction settings the weights were trained for; set by the pipeline
        self.feature_config: dict = {}
        self.class_labels: list[str] = []

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        h = self.features(x)
        return self.head(h.mean(dim=(2, 3)))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _as_tensor(x, model: nn.Module) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    t = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x)
    if t.ndim == 3:
        t = t[None]
    return t.to(dtype)


def forward(model: CompactCnn, x) -> torch.Tensor:
    """Logits for a [3 (or 1), F, T] image or a [batch, C, F, T] stack."""
    t = _as_tensor(x, model)
    side = model.cfg.min_side
    if t.shape[-2] < side or t.shape[-1] < side:
        raise ParameterError(f"input {tuple(t.shape[-2:])} smaller than {side} per side")
    out = model(t)
    return out[0] if np.asarray(x).ndim == 3 else out


def loss_and_grad(model: CompactCnn, batch, labels) -> tuple[float, "OrderedDict[str, torch.Tensor]"]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    x = _as_tensor(batch, model)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if y.numel() and (int(y.min()) < 0 or int(y.max()) >= model.cfg.num_classes):
        raise ParameterError(f"labels must lie in [0, {model.cfg.num_classes})")
    model.zero_grad(set_to_none=True)
    loss = F.cross_entropy(forward(model, x), y)
    loss.backward()
    grads = OrderedDict((n, p.grad.detach().clone()) for n, p in model.named_parameters())
    return float(loss.detach()), grads


@dataclass
class SgdState:
    velocity: dict = field(default_factory=dict)


def sgd_step(model: nn.Module, grads, state: SgdState, learning_rate: float = 0.001, momentum: float = 0.9):
    """Classic momentum: v <- momentum * v + g;  p <- p - lr * v."""
    params = OrderedDict(model.named_parameters())
    if set(params) != set(grads):
        raise RuntimeError(f"parameter/gradient key mismatch: {sorted(set(params) ^ set(grads))}")
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            v = state.velocity.get(name)
            v = g.clone() if v is None else v.mul_(momentum).add_(g)
            state.velocity[name] = v
            p.sub_(learning_rate * v)
    return model


def get_weights(model: nn.Module) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((k, v.detach().cpu().numpy().astype(np.float32).copy()) for k, v in model.state_dict().items())


def set_weights(model: nn.Module, weights) -> nn.Module:
    sd = model.state_dict()
    if set(sd) != set(weights):
        raise ParameterError(f"weight keys do not match model: {sorted(set(sd) ^ set(weights))}")
    model.load_state_dict(
        OrderedDict((k, torch.as_tensor(np.asarray(weights[k])).to(sd[k].dtype)) for k in sd)
    )
    return model


def save_weights(path, weights, meta: dict | None = None) -> None:
    """Binary container: magic, version, JSON metadata, layer table, float32 LE data."""
    import json

    buf = io.BytesIO()
    buf.write(WEIGHTS_MAGIC)
    buf.write(struct.pack("<H", WEIGHTS_VERSION))
    meta_b = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_b)))
    buf.write(meta_b)
    buf.write(struct.pack("<I", len(weights)))
    for name, arr in weights.items():
        arr = np.asarray(arr, dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in weights.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_weights(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    import json

    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ParameterError(f"truncated weight file at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(len(WEIGHTS_MAGIC)) != WEIGHTS_MAGIC:
        raise ParameterError("not a weight file (bad magic at byte 0)")
    (version,) = struct.unpack("<H", take(2))
    if version != WEIGHTS_VERSION:
        raise ParameterError(f"unsupported weight file version {version}")
    (mlen,) = struct.unpack("<I", take(4))
    meta = json.loads(take(mlen))
    (count,) = struct.unpack("<I", take(4))
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        table.append((name, shape))
    weights = OrderedDict()
    for name, shape in table:
        n = int(np.prod(shape))
        weights[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    return weights, meta


def predict_proba(model: CompactCnn, x, batch_size: int = 256) -> np.ndarray:
    model.eval()
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(torch.softmax(forward(model, x[i : i + batch_size]), dim=1).double().numpy())
    p = np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes))
    return p[0] if single else p


def argmax_lowest(p: np.ndarray) -> np.ndarray:
    """Argmax along the last axis; ties go to the lowest class index."""
    return np.argmax(p, axis=-1)


def predict(model: CompactCnn, x):
    """(label, probabilities) for one image, or (labels, probabilities) for a batch."""
    p = predict_proba(model, x)
    idx = argmax_lowest(p)
    names = model.class_labels or [str(i) for i in range(model.cfg.num_classes)]
    if np.ndim(idx) == 0:
        return names[int(idx)], p
    return [names[int(i)] for i in idx], p


class EarlyStopping:
    """Tracks the best validation accuracy; a strict improvement resets patience."""

    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best_metric = -np.inf
        self.best_epoch = 0
        self.best_weights = None
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float, weights) -> bool:
        """Record an epoch; returns True when training should stop."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.best_weights = weights
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def accuracy(model: CompactCnn, x, y, batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) in eval mode."""
    p = predict_proba(model, x, batch_size)
    y = np.asarray(y)
    acc = float(np.mean(argmax_lowest(p) == y)) if len(y) else 0.0
    nll = float(-np.mean(np.log(np.maximum(p[np.arange(len(y)), y], 1e-300)))) if len(y) else 0.0
    return acc, nll


TrainSource = Callable[[int], tuple[np.ndarray, np.ndarray]]


def train(
    model: CompactCnn,
    train_set,
    val_set: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig = TrainConfig(),
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple["OrderedDict[str, np.ndarray]", list[dict]]:
    """Train with early stopping; returns the best-validation weights and the history.

    ``train_set`` is either a fixed (images, labels) pair or a callable
    ``epoch -> (images, labels)`` that re-samples augmentations every epoch.
    The model is left holding the best weights.
    """
    x_val, y_val = val_set
    if len(y_val) == 0:
        raise ParameterError("validation set is empty")
    source = train_set if callable(train_set) else (lambda epoch, _d=train_set: _d)
    set_repro_mode(cfg.repro)
    torch.manual_seed(cfg.seed)
    stopper = EarlyStopping(cfg.early_stop_patience)
    state = SgdState()
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        x, y = source(epoch)
        if len(y) == 0:
            raise ParameterError("training set is empty")
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(y))
        model.train()
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch-norm needs two samples
            xb = torch.from_numpy(np.ascontiguousarray(x[idx]))
            loss, grads = loss_and_grad(model, xb, y[idx])
            sgd_step(model, grads, state, cfg.learning_rate, cfg.momentum)
            losses.append(loss * len(idx))
        val_acc, val_loss = accuracy(model, x_val, y_val)
        rec = {
            "epoch": epoch,
            "train_loss": float(np.sum(losses) / len(order)),
            "val_accuracy": val_acc,
            "val_loss": val_loss,
            "epoch_seed": int(np.random.SeedSequence([cfg.seed, epoch]).generate_state(1)[0]),
            "seconds": round(time.perf_counter() - t0, 3),
        }
        history.append(rec)
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, rec["train_loss"], val_acc)
        if on_epoch is not None:
            on_epoch(rec)
        if stopper.update(epoch, val_acc, get_weights(model)):
            break
    set_weights(model, stopper.best_weights)
    for rec in history:
        rec["best"] = rec["epoch"] == stopper.best_epoch
    return stopper.best_weights, history


def config_dict(cfg) -> dict:
    return asdict(cfg)
