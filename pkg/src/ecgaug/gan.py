"""Unconditional WGAN-GP and label-conditioned WGAN-GP for 256-sample beats.

Every layer declares the output shape it must produce; construction walks the
geometry and refuses a stack whose arithmetic disagrees with a declared row.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import BEAT_LENGTH, CLASSES
from .beat import Beat
from .engine import functional as F
from .engine.checkpoint import atomic_write_bytes, load as load_checkpoint, save as save_checkpoint
from .engine.nn import (
    Activation, BatchNorm1d, Conv1d, ConvTranspose1d, Embedding, InstanceNorm1d, Linear, Module, Sequential,
)
from .engine.optim import AdamState, adam_step, derive_seed, init_module
from .engine.tensor import GeometryError, Tensor, TapeError, backward, concat, grad, is_grad_enabled, no_grad, reshape, sqrt, tanh

log = logging.getLogger(__name__)

LATENT_DIM = 100
LAMBDA_GP = 10.0
N_CRITIC = 5
GP_EPS = 1e-20  # keeps sqrt differentiable when the input-gradient vanishes


@dataclass(frozen=True)
class Layer:
    """One row of an architecture table: declared output (channels, length) plus kernel geometry."""
    row: str
    channels: int
    length: int
    kernel: int
    stride: int
    padding: int


# Transposed-conv geometry chosen so every declared output shape is met exactly.
GENERATOR_BLOCKS = (
    Layer("block 1", 1024, 1, 1, 1, 0),
    Layer("block 2", 512, 8, 8, 1, 0),
    Layer("block 3", 256, 6, 3, 1, 2),
    Layer("block 4", 128, 32, 4, 6, 1),
)
GENERATOR_FINAL = Layer("ConvTranspose", 1, 64, 4, 2, 1)

CRITIC_FIRST = Layer("Conv1d", 64, 128, 4, 2, 1)
CRITIC_BLOCKS = (
    Layer("block 1", 128, 64, 4, 2, 1),
    Layer("block 2", 256, 32, 4, 2, 1),
    Layer("block 3", 512, 16, 4, 2, 1),
)
CRITIC_FINAL = Layer("Conv1d out", 1, 7, 4, 2, 0)


def _scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


@dataclass(frozen=True)
class GeneratorSpec:
    latent_dim: int = LATENT_DIM
    conditional: bool = False
    classes: tuple[str, ...] = CLASSES
    label: str | None = None  # class an unconditional model is trained on
    blocks: tuple[Layer, ...] = GENERATOR_BLOCKS
    final: Layer = GENERATOR_FINAL
    output_length: int = BEAT_LENGTH
    width: float = 1.0  # channel multiplier; 1.0 is the full architecture

    def __post_init__(self):
        if self.latent_dim < 1 or self.width <= 0:
            raise ValueError("latent_dim and width must be positive")
        if self.conditional and len(self.classes) < 2:
            raise ValueError("a conditional generator needs at least two classes")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def input_channels(self) -> int:
        return 2 * self.latent_dim if self.conditional else self.latent_dim


@dataclass(frozen=True)
class CriticSpec:
    conditional: bool = False
    classes: tuple[str, ...] = CLASSES
    first: Layer = CRITIC_FIRST
    blocks: tuple[Layer, ...] = CRITIC_BLOCKS
    final: Layer = CRITIC_FINAL
    input_length: int = BEAT_LENGTH
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.conditional and len(self.classes) < 2:
            raise ValueError("a conditional critic needs at least two classes")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def input_channels(self) -> int:
        return 2 if self.conditional else 1


def _check_length(layer: Layer, got: int) -> None:
    if got != layer.length:
        raise GeometryError(f"row {layer.row!r}: geometry yields length {got}, table declares {layer.length}")


def _label_indices(labels, classes: Sequence[str]) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu":
        idx = labels.astype(np.int64)
    else:
        lookup = {c: i for i, c in enumerate(classes)}
        try:
            idx = np.array([lookup[str(v)] for v in labels], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not in {list(classes)}") from None
    if idx.size and (idx.min() < 0 or idx.max() >= len(classes)):
        raise ValueError(f"label index out of range for {len(classes)} classes")
    return idx


class Generator(Module):
    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        w = spec.width
        self.embed = Embedding(spec.n_classes, spec.latent_dim) if spec.conditional else None
        cin, length = spec.input_channels, 1
        blocks = []
        for layer in spec.blocks:
            cout = _scaled(layer.channels, w)
            length = F.conv_transpose_output_length(length, layer.kernel, layer.stride, layer.padding)
            _check_length(layer, length)
            blocks.append(Sequential(
                ConvTranspose1d(cin, cout, layer.kernel, layer.stride, layer.padding),
                BatchNorm1d(cout),
                Activation("relu"),
            ))
            cin = cout
        self.blocks = blocks
        fl = spec.final
        length = F.conv_transpose_output_length(length, fl.kernel, fl.stride, fl.padding)
        _check_length(fl, length)
        self.final = ConvTranspose1d(cin, fl.channels, fl.kernel, fl.stride, fl.padding)
        self.flat = fl.channels * length
        self.fc = Linear(self.flat, spec.output_length)
        self.fc_out = Linear(spec.output_length, spec.output_length) if spec.conditional else None

    def _run(self, z, labels=None, rows: list | None = None) -> Tensor:
        spec = self.spec
        note = rows.append if rows is not None else (lambda item: None)
        z = z if isinstance(z, Tensor) else Tensor(z)
        b = z.shape[0]
        if z.shape[1:] not in ((spec.latent_dim,), (spec.latent_dim, 1)):
            raise ValueError(f"latent batch must be [B, {spec.latent_dim}], got {z.shape}")
        x = reshape(z, (b, spec.latent_dim, 1))
        if spec.conditional:
            if labels is None:
                raise ValueError("conditional generator needs labels")
            e = self.embed(_label_indices(labels, spec.classes))
            note(("embedding", e.shape))
            e = reshape(e, (b, spec.latent_dim, 1))
            note(("reshape", e.shape))
            x = concat([x, e], axis=1)
            note(("Concatenate", x.shape))
        elif labels is not None:
            raise ValueError("unconditional generator takes no labels")
        else:
            note(("Input", x.shape))
        for layer, block in zip(spec.blocks, self.blocks):
            x = block(x)
            note((layer.row, x.shape))
        x = self.final(x)
        note((spec.final.row, x.shape))
        x = self.fc(reshape(x, (b, self.flat)))
        note(("FC", x.shape))
        x = reshape(x, (b, 1, spec.output_length))
        note(("reshape", x.shape))
        if self.fc_out is not None:
            x = self.fc_out(x)
            note(("FC", x.shape))
        x = tanh(x)
        note(("tanh", x.shape))
        return x

    def forward(self, z, labels=None) -> Tensor:
        return self._run(z, labels)

    def trace(self, z, labels=None) -> list[tuple[str, tuple[int, ...]]]:
        rows: list = []
        with no_grad():
            self._run(z, labels, rows)
        return rows


class Critic(Module):
    def __init__(self, spec: CriticSpec):
        self.spec = spec
        w = spec.width
        self.embed = Embedding(spec.n_classes, spec.input_length) if spec.conditional else None
        fl = spec.first
        cout = _scaled(fl.channels, w)
        length = F.conv_output_length(spec.input_length, fl.kernel, fl.stride, fl.padding)
        _check_length(fl, length)
        # no normalization on the first layer; the conditional table uses ReLU there
        self.first = Sequential(Conv1d(spec.input_channels, cout, fl.kernel, fl.stride, fl.padding),
                                Activation("relu" if spec.conditional else "leaky_relu"))
        cin = cout
        blocks = []
        for layer in spec.blocks:
            cout = _scaled(layer.channels, w)
            length = F.conv_output_length(length, layer.kernel, layer.stride, layer.padding)
            _check_length(layer, length)
            blocks.append(Sequential(
                Conv1d(cin, cout, layer.kernel, layer.stride, layer.padding),
                InstanceNorm1d(),
                Activation("leaky_relu"),
            ))
            cin = cout
        self.blocks = blocks
        fl = spec.final
        length = F.conv_output_length(length, fl.kernel, fl.stride, fl.padding)
        _check_length(fl, length)
        self.final = Conv1d(cin, fl.channels, fl.kernel, fl.stride, fl.padding)
        self.length = length
        self.fc_hidden = Linear(length, length) if spec.conditional else None
        self.fc = Linear(length, 1)

    def _run(self, x, labels=None, rows: list | None = None) -> Tensor:
        spec = self.spec
        note = rows.append if rows is not None else (lambda item: None)
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = reshape(x, (x.shape[0], 1, x.shape[1]))
        b = x.shape[0]
        if x.shape[1:] != (1, spec.input_length):
            raise ValueError(f"critic input must be [B, 1, {spec.input_length}], got {x.shape}")
        if spec.conditional:
            if labels is None:
                raise ValueError("conditional critic needs labels")
            e = self.embed(_label_indices(labels, spec.classes))
            note(("embedding", e.shape))
            e = reshape(e, (b, 1, spec.input_length))
            note(("reshape", e.shape))
            x = concat([x, e], axis=1)
            note(("Concatenate", x.shape))
        elif labels is not None:
            raise ValueError("unconditional critic takes no labels")
        else:
            note(("Input", x.shape))
        x = self.first(x)
        note((spec.first.row, x.shape))
        for layer, block in zip(spec.blocks, self.blocks):
            x = block(x)
            note((layer.row, x.shape))
        x = self.final(x)
        note((spec.final.row, x.shape))
        if self.fc_hidden is not None:
            x = self.fc_hidden(x)
            note(("FC", x.shape))
        x = self.fc(x)
        note(("FC", x.shape))
        return x

    def forward(self, x, labels=None) -> Tensor:
        return self._run(x, labels)

    def trace(self, x, labels=None) -> list[tuple[str, tuple[int, ...]]]:
        rows: list = []
        with no_grad():
            self._run(x, labels, rows)
        return rows


def build_generator(spec: GeneratorSpec, seed: int = 0, std: float = 0.02) -> Generator:
    g = Generator(spec)
    init_module(g, derive_seed(seed, "generator"), std)
    return g


def build_critic(spec: CriticSpec, seed: int = 0, std: float = 0.02) -> Critic:
    c = Critic(spec)
    init_module(c, derive_seed(seed, "critic"), std)
    return c


# -- losses ----------------------------------------------------------------

def _call(critic: Callable, x, labels):
    return critic(x) if labels is None else critic(x, labels)


def _as_batch(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return arr.reshape(arr.shape[0], 1, -1) if arr.ndim == 2 else arr


def gradient_penalty(critic: Callable, real, fake, labels=None, lam: float = LAMBDA_GP,
                     rng: np.random.Generator | None = None, eps: np.ndarray | None = None) -> Tensor:
    """lam * mean_i (||d critic / d x_hat_i|| - 1)^2 at x_hat = eps*real + (1-eps)*fake.

    The returned scalar stays on the tape, so its parameter gradient flows
    through the input gradient (double backprop). ``eps`` is drawn per item
    from U[0, 1] unless given.
    """
    if not is_grad_enabled():
        raise TapeError("gradient penalty needs a recording tape for double backprop (called under no_grad)")
    real, fake = _as_batch(real), _as_batch(fake)
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} batches differ in shape")
    b = real.shape[0]
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng()
        eps = rng.uniform(0.0, 1.0, b)
    eps = np.asarray(eps, dtype=np.float64).reshape(b, *([1] * (real.ndim - 1)))
    x_hat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    out = _call(critic, x_hat, labels)
    if not out.requires_grad:
        # critic does not depend on its input: the input-gradient is identically zero
        return Tensor(np.array(lam * 1.0 * (1.0 - math.sqrt(GP_EPS)) ** 2))
    (g,) = grad(out.sum(), [x_hat], higher_order=True)
    if not g.requires_grad and any(p.requires_grad for p in getattr(critic, "parameters", lambda: [])()):
        raise TapeError("input gradient was not recorded; double backprop unavailable")
    axes = tuple(range(1, g.ndim))
    norms = sqrt((g * g).sum(axis=axes) + GP_EPS)
    return ((norms - 1.0) ** 2).mean() * lam


@dataclass
class LossParts:
    loss: Tensor
    d_real: float
    d_fake: float
    gp: float

    @property
    def wasserstein(self) -> float:
        return self.d_real - self.d_fake


def critic_loss(critic: Callable, generator: Callable, real, z, labels=None, lam: float = LAMBDA_GP,
                rng: np.random.Generator | None = None) -> LossParts:
    """mean D(fake) - mean D(real) + gradient penalty; the generator is held fixed."""
    real = _as_batch(real)
    with no_grad():
        fake = _call(generator, z, labels).data
    d_real = _call(critic, Tensor(real), labels).mean()
    d_fake = _call(critic, Tensor(fake), labels).mean()
    gp = gradient_penalty(critic, real, fake, labels, lam, rng)
    loss = d_fake - d_real + gp
    return LossParts(loss, d_real.item(), d_fake.item(), gp.item())


def generator_loss(critic: Callable, generator: Callable, z, labels=None) -> Tensor:
    return -_call(critic, _call(generator, z, labels), labels).mean()


# -- training --------------------------------------------------------------

@dataclass
class GanTrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    lambda_gp: float = LAMBDA_GP
    n_critic: int = N_CRITIC
    epochs: int = 200
    seed: int = 0
    width: float = 1.0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (interpolates need pairs)")
        if not self.lambda_gp > 0:
            raise ValueError("lambda_gp must be positive")
        if self.n_critic < 1 or self.epochs < 0 or not self.lr > 0:
            raise ValueError("n_critic >= 1, epochs >= 0 and lr > 0 required")


HISTORY_FIELDS = ("step", "epoch", "critic_loss", "gen_loss", "wasserstein_estimate", "gp")


@dataclass
class GanModel:
    generator: Generator
    critic: Critic
    history: list[dict] = field(default_factory=list)

    @property
    def conditional(self) -> bool:
        return self.generator.spec.conditional


def history_csv(history: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k]) for k in HISTORY_FIELDS})
    return buf.getvalue()


def _grads(module: Module) -> dict[str, np.ndarray]:
    return {name: p.grad for name, p in module.named_parameters()}


def _grad_norms(module: Module) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in _grads(module).values() if g is not None)))


def model_state(model: GanModel) -> dict[str, np.ndarray]:
    state = {f"generator.{k}": v for k, v in model.generator.state_dict().items()}
    state.update({f"critic.{k}": v for k, v in model.critic.state_dict().items()})
    return state


def load_model_state(model: GanModel, state: dict[str, np.ndarray]) -> None:
    model.generator.load_state_dict({k[10:]: v for k, v in state.items() if k.startswith("generator.")})
    model.critic.load_state_dict({k[7:]: v for k, v in state.items() if k.startswith("critic.")})


def new_model(conditional: bool, config: GanTrainConfig, classes: Sequence[str] = CLASSES,
              label: str | None = None) -> GanModel:
    g = build_generator(GeneratorSpec(conditional=conditional, classes=tuple(classes), label=label,
                                      width=config.width), config.seed)
    c = build_critic(CriticSpec(conditional=conditional, classes=tuple(classes), width=config.width), config.seed)
    return GanModel(g, c)


def train(model: GanModel, beats: Sequence[Beat], config: GanTrainConfig) -> GanModel:
    """Alternate ``n_critic`` critic updates with one generator update.

    One epoch is ``max(1, len(beats) // batch_size)`` critic batches drawn from a
    fresh permutation. Loss history is recorded per generator step; the
    checkpoint and history CSV are rewritten after every epoch when
    ``config.checkpoint_dir`` is set.
    """
    if len(beats) == 0:
        raise ValueError("cannot train a GAN on an empty class")
    g, c = model.generator, model.critic
    if not model.conditional:
        labels_present = {b.label for b in beats}
        if len(labels_present) > 1:
            raise ValueError(f"unconditional model trains on one class, got {sorted(labels_present)}")
    data = np.stack([b.samples for b in beats])[:, None, :]
    labels = _label_indices([b.label for b in beats], g.spec.classes) if model.conditional else None
    rng = np.random.default_rng(derive_seed(config.seed, "gan-train"))
    opt_c = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_g = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    params_c, params_g = dict(c.named_parameters()), dict(g.named_parameters())
    bs, n = config.batch_size, len(beats)
    per_epoch = max(1, n // bs)
    step = critic_steps = 0
    last = None
    g.train()
    c.train()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for k in range(per_epoch):
            idx = order[np.arange(k * bs, k * bs + bs) % n]
            z = rng.standard_normal((bs, g.spec.latent_dim))
            lab = labels[idx] if labels is not None else None
            c.zero_grad()
            last = critic_loss(c, g, data[idx], z, lab, config.lambda_gp, rng)
            backward(last.loss)
            _check_finite(step, last, None, c, "critic")
            adam_step(params_c, _grads(c), opt_c)
            critic_steps += 1
            if critic_steps % config.n_critic:
                continue
            z = rng.standard_normal((bs, g.spec.latent_dim))
            lab = labels[rng.integers(0, n, bs)] if labels is not None else None
            g.zero_grad()
            c.zero_grad()
            g_loss = generator_loss(c, g, z, lab)
            backward(g_loss)
            _check_finite(step, last, g_loss, g, "generator")
            adam_step(params_g, _grads(g), opt_g)
            c.zero_grad()
            model.history.append({
                "step": step, "epoch": epoch, "critic_loss": last.loss.item(), "gen_loss": g_loss.item(),
                "wasserstein_estimate": last.wasserstein, "gp": last.gp,
            })
            step += 1
        if config.checkpoint_dir:
            _persist(model, config.checkpoint_dir)
    g.eval()
    c.eval()
    return model


def _check_finite(step: int, parts: LossParts, g_loss: Tensor | None, module: Module, who: str) -> None:
    values = [parts.loss.item(), parts.gp] + ([g_loss.item()] if g_loss is not None else [])
    norm = _grad_norms(module)
    if not all(math.isfinite(v) for v in values) or not math.isfinite(norm):
        raise FloatingPointError(
            f"non-finite {who} update at step {step}: critic_loss={parts.loss.item()!r} gp={parts.gp!r} "
            f"gen_loss={None if g_loss is None else g_loss.item()!r} {who}_grad_norm={norm!r}")


def _persist(model: GanModel, directory: str) -> None:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path / "gan.ckpt", model_state(model))
    atomic_write_bytes(path / "loss_history.csv", history_csv(model.history).encode())


def restore(model: GanModel, directory: str | os.PathLike) -> GanModel:
    load_model_state(model, load_checkpoint(Path(directory) / "gan.ckpt"))
    model.generator.eval()
    model.critic.eval()
    return model


def generate(generator: Generator, n: int, label: str | None = None, seed: int = 0,
             batch_size: int = 256) -> list[Beat]:
    """``n`` beats with provenance "generated" (batch-norm in inference mode, so each beat depends only on its z)."""
    spec = generator.spec
    if spec.conditional and label is None:
        raise ValueError("conditional generator needs a class label")
    if not spec.conditional and label is not None:
        raise ValueError("unconditional generator is per-class; do not pass a label")
    out_label = label if spec.conditional else spec.label
    if out_label is None:
        raise ValueError("unconditional generator spec carries no class label")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(derive_seed(seed, "generate", out_label))
    was_training = generator.training
    generator.eval()
    beats: list[Beat] = []
    try:
        with no_grad():
            for start in range(0, n, batch_size):
                m = min(batch_size, n - start)
                z = rng.standard_normal((m, spec.latent_dim))
                labs = [out_label] * m if spec.conditional else None
                x = generator(z, labs).data.reshape(m, -1)
                beats.extend(Beat(row.copy(), out_label, "generated", ("gan", start + i))
                             for i, row in enumerate(x))
    finally:
        generator.train(was_training)
    return beats
