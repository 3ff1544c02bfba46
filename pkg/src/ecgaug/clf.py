"""1D residual-network beat classifier: construction, training and scoring."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import BEAT_LENGTH, CLASSES
from .beat import Beat
from .engine import functional as F
from .engine.checkpoint import atomic_write_bytes, save as save_checkpoint
from .engine.nn import Activation, BatchNorm1d, Conv1d, Linear, Module, Sequential
from .engine.optim import AdamState, adam_step, derive_seed, init_module
from .engine.tensor import Tensor, backward, no_grad, reshape

KERNEL = 3

# stem conv + 2 convs per block + final linear: 1 + 2*(3+4+6+3) + 1 = 34
FULL_STAGES = ((64, 3), (128, 4), (256, 6), (512, 3))
DESK_STAGES = ((16, 1), (32, 1), (48, 1), (64, 1))


@dataclass(frozen=True)
class ResNetSpec:
    n_classes: int = len(CLASSES)
    desk_scale: bool = True
    stages: tuple[tuple[int, int], ...] | None = None  # (width, blocks); None picks by desk_scale
    kernel: int = KERNEL
    input_length: int = BEAT_LENGTH

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("a classifier needs at least two classes")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd to keep lengths")
        if any(w < 1 or n < 1 for w, n in self.plan):
            raise ValueError(f"invalid stage plan {self.plan}")

    @property
    def plan(self) -> tuple[tuple[int, int], ...]:
        if self.stages is not None:
            return self.stages
        return DESK_STAGES if self.desk_scale else FULL_STAGES

    @property
    def n_layers(self) -> int:
        """Learnable weight layers: stem, two convolutions per block, classifier head."""
        return 2 + 2 * sum(n for _, n in self.plan)


class ResidualBlock(Module):
    """x + F(x) with F = BN-ReLU-conv(k, stride)-BN-ReLU-conv(k); 1x1 strided projection when shapes change."""

    def __init__(self, cin: int, cout: int, stride: int, kernel: int = KERNEL):
        pad = kernel // 2
        self.branch = Sequential(
            BatchNorm1d(cin), Activation("relu"), Conv1d(cin, cout, kernel, stride, pad),
            BatchNorm1d(cout), Activation("relu"), Conv1d(cout, cout, kernel, 1, pad),
        )
        self.project = Conv1d(cin, cout, 1, stride, 0, bias=False) if (stride != 1 or cin != cout) else None

    def forward(self, x):
        skip = x if self.project is None else self.project(x)
        return skip + self.branch(x)


class ResNet1d(Module):
    def __init__(self, spec: ResNetSpec):
        self.spec = spec
        plan = spec.plan
        self.stem = Conv1d(1, plan[0][0], spec.kernel, 1, spec.kernel // 2)
        blocks = []
        cin = plan[0][0]
        for s, (width, n) in enumerate(plan):
            for k in range(n):
                stride = 2 if (s > 0 and k == 0) else 1
                blocks.append(ResidualBlock(cin, width, stride, spec.kernel))
                cin = width
        self.blocks = blocks
        self.head_norm = BatchNorm1d(cin)
        self.head = Linear(cin, spec.n_classes)

    def features(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = reshape(x, (x.shape[0], 1, x.shape[1]))
        if x.shape[1:] != (1, self.spec.input_length):
            raise ValueError(f"classifier input must be [B, 1, {self.spec.input_length}], got {x.shape}")
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        x = F.activation(self.head_norm(x), "relu")
        return x.mean(axis=2)

    def forward(self, x) -> Tensor:
        return self.head(self.features(x))

    def trace(self, x) -> list[tuple[str, tuple[int, ...]]]:
        """Shape walk with the skip kind of each block ("identity" or "projection")."""
        rows = []
        with no_grad():
            x = Tensor(np.asarray(x, dtype=np.float64).reshape(-1, 1, self.spec.input_length))
            x = self.stem(x)
            rows.append(("stem", x.shape))
            for i, block in enumerate(self.blocks):
                x = block(x)
                rows.append((f"block {i} ({'identity' if block.project is None else 'projection'})", x.shape))
            x = F.activation(self.head_norm(x), "relu").mean(axis=2)
            rows.append(("pool", x.shape))
            rows.append(("head", self.head(x).shape))
        return rows


def build_resnet(spec: ResNetSpec, seed: int = 0) -> ResNet1d:
    net = ResNet1d(spec)
    rng = np.random.default_rng(derive_seed(seed, "resnet"))
    init_module(net, derive_seed(seed, "resnet"), std=0.02)
    # He-scaled convolution and head weights so the deep stack trains from scratch
    for name, p in net.named_parameters():
        if name.endswith("weight") and p.ndim >= 2:
            fan_in = int(np.prod(p.shape[1:]))
            p.data = rng.normal(0.0, np.sqrt(2.0 / fan_in), p.shape)
    return net


@dataclass
class ClfTrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    classes: tuple[str, ...] = CLASSES
    desk_scale: bool = True
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class in class list")


@dataclass
class Classifier:
    net: ResNet1d
    classes: tuple[str, ...]
    history: list[dict] = field(default_factory=list)


def _stack(beats) -> np.ndarray:
    if isinstance(beats, np.ndarray):
        x = np.asarray(beats, dtype=np.float64)
    else:
        x = np.stack([np.asarray(getattr(b, "samples", b), dtype=np.float64).reshape(-1) for b in beats]) \
            if len(beats) else np.zeros((0, BEAT_LENGTH))
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != BEAT_LENGTH:
        raise ValueError(f"beats must have {BEAT_LENGTH} samples, got array of shape {x.shape}")
    return x


def history_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=("epoch", "loss", "train_accuracy"), lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({"epoch": row["epoch"], "loss": f"{row['loss']:.10g}",
                    "train_accuracy": f"{row['train_accuracy']:.10g}"})
    return buf.getvalue()


def train_classifier(beats: Sequence[Beat], config: ClfTrainConfig, spec: ResNetSpec | None = None) -> Classifier:
    """Mini-batch Adam on softmax cross-entropy; history holds per-epoch mean loss and train accuracy."""
    labels = [b.label for b in beats]
    present = sorted(set(labels))
    if len(present) < 2:
        raise ValueError(f"classifier training needs at least two classes, got {present}")
    unknown = set(present) - set(config.classes)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} not in class list {list(config.classes)}")
    spec = spec or ResNetSpec(n_classes=len(config.classes), desk_scale=config.desk_scale)
    if spec.n_classes != len(config.classes):
        raise ValueError("spec.n_classes disagrees with the class list")
    x = _stack(beats)[:, None, :]
    index = {c: i for i, c in enumerate(config.classes)}
    y = np.array([index[v] for v in labels], dtype=np.int64)
    net = build_resnet(spec, config.seed)
    model = Classifier(net, tuple(config.classes))
    params = dict(net.named_parameters())
    opt = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    rng = np.random.default_rng(derive_seed(config.seed, "clf-train"))
    n, bs = len(y), config.batch_size
    net.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_loss = correct = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            if idx.size < 2 and n >= 2:
                idx = order[max(0, start - 1):start + bs]  # batch norm needs two items
            net.zero_grad()
            logits = net(x[idx])
            loss = F.cross_entropy(logits, y[idx])
            backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, opt)
            total_loss += loss.item() * idx.size
            correct += float(np.sum(np.argmax(logits.data, axis=1) == y[idx]))
        model.history.append({"epoch": epoch, "loss": total_loss / n, "train_accuracy": correct / n})
        if config.checkpoint_dir:
            path = Path(config.checkpoint_dir)
            path.mkdir(parents=True, exist_ok=True)
            save_checkpoint(path / "classifier.ckpt", net.state_dict())
            atomic_write_bytes(path / "history.csv", history_csv(model.history).encode())
    net.eval()
    return model


def predict(model: Classifier, beats, batch_size: int = 256) -> np.ndarray:
    """Class-probability rows (softmax, batch norm in inference mode) in ``model.classes`` order."""
    x = _stack(beats)
    net = model.net
    was_training = net.training
    net.eval()
    out = np.zeros((len(x), len(model.classes)))
    try:
        with no_grad():
            for start in range(0, len(x), batch_size):
                out[start:start + batch_size] = F.softmax(net(x[start:start + batch_size, None, :]), axis=1).data
    finally:
        net.train(was_training)
    return out


def predict_labels(model: Classifier, beats) -> list[str]:
    return [model.classes[k] for k in np.argmax(predict(model, beats), axis=1)]
