"""Straight-through-estimator trainer for the binary CNN.

Latent real-valued kernels and FC weights are binarized by sign (with
sign(0) = +1) on every forward pass; the forward arithmetic is exactly the
dense reference inference on the binarized snapshot. Softmax cross-entropy
over scores scaled by 1/(blocks * pooled_size^2) drives plain SGD; gradients
pass straight through the sign to the latents, which are clipped to [-1, 1].
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetSplit, images_labels
from .geometry import PlaneGeometry
from .model import BnnModel, batch_predict

DEFAULT_CLASS_NAMES = ("rock", "paper", "scissors")


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    learning_rate: float = 1000.0   # scores are pre-scaled by 1/16384
    epochs: int = 12
    batch_size: int = 32
    k: int = 4

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        doc = json.loads(text)
        return cls(**{k: v for k, v in doc.items() if not k.startswith("_")})

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2) + "\n"


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_acc", "test_acc", "loss"])
        for r in self.records:
            w.writerow([r.epoch, f"{r.train_acc:.6f}", f"{r.test_acc:.6f}",
                        f"{r.loss:.6f}"])
        return buf.getvalue()


def _sign(latent: np.ndarray) -> np.ndarray:
    return np.where(latent >= 0, 1, -1).astype(np.int64)


@dataclass
class LatentModel:
    """Real-valued shadow of a BnnModel; binarizes to a valid BnnModel."""

    kernels: np.ndarray           # (nb, k, k) float
    fc_weights: np.ndarray        # (C, nb, ps, ps) float
    geometry: PlaneGeometry
    class_names: tuple[str, ...]

    @classmethod
    def init(cls, config: TrainConfig, num_classes: int,
             geometry: PlaneGeometry | None = None,
             class_names: tuple[str, ...] | None = None) -> "LatentModel":
        geometry = geometry or PlaneGeometry()
        rng = np.random.default_rng(config.seed)
        nb, ps = geometry.num_blocks, geometry.block_size // 2
        kernels = rng.uniform(-1, 1, size=(nb, config.k, config.k))
        fc = rng.uniform(-1, 1, size=(num_classes, nb, ps, ps))
        if class_names is None:
            class_names = DEFAULT_CLASS_NAMES if num_classes == 3 else \
                tuple(f"class{i}" for i in range(num_classes))
        return cls(kernels, fc, geometry, class_names)

    def binarize(self) -> BnnModel:
        return BnnModel(_sign(self.kernels), _sign(self.fc_weights),
                        self.class_names, self.geometry)


def _forward_backward(latent: LatentModel, xs: np.ndarray, ys: np.ndarray):
    """One minibatch: loss plus straight-through gradients on the latents.

    The forward pass uses the binarized weights and matches batch_scores
    exactly (same windowing, border zeroing, pooling and reduction).
    """
    geometry = latent.geometry
    bs = geometry.block_size
    k = latent.kernels.shape[1]
    nb = geometry.num_blocks
    num_classes = latent.fc_weights.shape[0]
    scale = 1.0 / (nb * (bs // 2) ** 2)

    bk = _sign(latent.kernels).astype(np.float32)
    bf = _sign(latent.fc_weights).astype(np.float32)

    batch = xs.shape[0]
    v = bs - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(
        xs.astype(np.float32), (k, k), axis=(1, 2))
    windows = np.ascontiguousarray(windows).reshape(batch, v * v, k * k)
    valid = (windows @ bk.reshape(nb, k * k).T) \
        .transpose(0, 2, 1).reshape(batch, nb, v, v)
    conv = np.zeros((batch, nb, bs, bs), dtype=np.float32)
    conv[:, :, :v, :v] = valid
    relu = np.maximum(conv, 0.0)
    cells = relu.reshape(batch, nb, bs // 2, 2, bs // 2, 2)
    flat = cells.transpose(0, 1, 2, 4, 3, 5).reshape(batch, nb, bs // 2, bs // 2, 4)
    arg = flat.argmax(axis=-1)
    pooled = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    scores = np.einsum("cnij,bnij->bc", bf, pooled)
    z = scores * scale
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    loss = float(-np.log(np.clip(probs[np.arange(batch), ys], 1e-12, None)).mean())

    gscore = probs.copy()
    gscore[np.arange(batch), ys] -= 1.0
    gscore *= scale / batch

    gfc = np.einsum("bc,bnij->cnij", gscore, pooled)
    gpooled = np.einsum("bc,cnij->bnij", gscore, bf)

    gflat = np.zeros_like(flat)
    np.put_along_axis(gflat, arg[..., None], gpooled[..., None].astype(np.float32),
                      axis=-1)
    grelu = gflat.reshape(batch, nb, bs // 2, bs // 2, 2, 2) \
        .transpose(0, 1, 2, 4, 3, 5).reshape(batch, nb, bs, bs)
    gconv = grelu * (conv > 0)
    gvalid = gconv[:, :, :v, :v].reshape(batch, nb, v * v)
    # (nb, v*v) x (v*v, k*k) accumulated over the batch
    gkernel = np.einsum("bnp,bpq->nq", gvalid, windows).reshape(nb, k, k)
    return loss, gkernel.astype(np.float64), gfc


def _accuracy(model: BnnModel, xs: np.ndarray, ys: np.ndarray) -> float:
    if len(xs) == 0:
        return 0.0
    return float((batch_predict(model, xs) == ys).mean())


def train(data: DatasetSplit, config: TrainConfig | None = None,
          num_classes: int = 3) -> tuple[BnnModel, TrainingLog]:
    """SGD with STE; returns the epoch snapshot with the best test accuracy
    (train accuracy breaks ties when there is no test split)."""
    config = config or TrainConfig()
    if not data.train:
        raise TrainingError("empty training dataset")
    xs, ys = images_labels(data.train)
    if data.test:
        xt, yt = images_labels(data.test)
    else:
        xt, yt = xs[:0], ys[:0]

    latent = LatentModel.init(config, num_classes)
    rng = np.random.default_rng(config.seed + 1)
    log = TrainingLog()
    best_metric = -1.0
    best_model = latent.binarize()

    for epoch in range(config.epochs):
        order = rng.permutation(len(xs))
        losses = []
        for start in range(0, len(xs), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, gk, gf = _forward_backward(latent, xs[idx], ys[idx])
            losses.append(loss)
            latent.kernels = np.clip(
                latent.kernels - config.learning_rate * gk, -1.0, 1.0)
            latent.fc_weights = np.clip(
                latent.fc_weights - config.learning_rate * gf, -1.0, 1.0)
        snapshot = latent.binarize()
        train_acc = _accuracy(snapshot, xs, ys)
        test_acc = _accuracy(snapshot, xt, yt)
        log.records.append(EpochRecord(epoch, train_acc, test_acc,
                                       float(np.mean(losses))))
        metric = test_acc if len(xt) else train_acc
        if metric > best_metric:
            best_metric = metric
            best_model = snapshot
            log.best_epoch = epoch
    return best_model, log


def evaluate(model: BnnModel, samples) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix (rows = true class) via the dense
    reference semantics."""
    if not samples:
        return 0.0, np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    xs, ys = images_labels(list(samples))
    preds = batch_predict(model, xs)
    n = model.num_classes
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (ys, preds), 1)
    return float((preds == ys).mean()), confusion
