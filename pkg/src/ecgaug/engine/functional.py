"""Layer primitives built on the tensor tape."""
from __future__ import annotations

import numpy as np

from .tensor import (
    GeometryError,
    ShapeError,
    Tensor,
    as_tensor,
    exp,
    fold1d,
    leaky_relu,
    log,
    matmul,
    power,
    relu,
    reshape,
    sum_,
    swap_last,
    take_rows,
    tanh,
    transpose,
    unfold1d,
    window_count,
)

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
# tiny so a row's normalization is invariant to rescaling it
IN_EPS = 1e-10


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return window_count(length, kernel, stride, padding)


def conv_transpose_output_length(length: int, kernel: int, stride: int, padding: int,
                                 output_padding: int = 0) -> int:
    return (length - 1) * stride - 2 * padding + kernel + output_padding


def _check_rank3(x: Tensor, what: str):
    if x.ndim != 3:
        raise ShapeError(f"{what} expects input [batch, channels, length], got shape {x.shape}")


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B, Cin, L] with weight [Cout, Cin, K]."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_rank3(x, "conv1d")
    if weight.ndim != 3:
        raise ShapeError(f"conv1d weight must be [Cout, Cin, K], got {weight.shape}")
    cout, cin, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv1d: input has {x.shape[1]} channels, weight expects {cin}")
    if stride < 1 or padding < 0:
        raise GeometryError(f"conv1d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    if conv_output_length(x.shape[2], k, stride, padding) < 1:
        raise GeometryError(
            f"conv1d: kernel {k} longer than padded input {x.shape[2]} + 2*{padding}"
        )
    cols = unfold1d(x, k, stride, padding)
    out = matmul(reshape(weight, (cout, cin * k)), cols)
    if bias is not None:
        out = out + reshape(as_tensor(bias), (1, cout, 1))
    return out


def conv_transpose1d(x, weight, bias=None, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv1d`; weight is [Cin, Cout, K]."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_rank3(x, "conv_transpose1d")
    if weight.ndim != 3:
        raise ShapeError(f"conv_transpose1d weight must be [Cin, Cout, K], got {weight.shape}")
    cin, cout, k = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv_transpose1d: input has {x.shape[1]} channels, weight expects {cin}")
    if stride < 1 or padding < 0 or not 0 <= output_padding < stride:
        raise GeometryError(
            f"conv_transpose1d: need stride >= 1, padding >= 0, 0 <= output_padding < stride "
            f"(got {stride}, {padding}, {output_padding})"
        )
    lout = conv_transpose_output_length(x.shape[2], k, stride, padding, output_padding)
    if lout < 1:
        raise GeometryError(f"conv_transpose1d: output length {lout} < 1")
    cols = matmul(swap_last(reshape(weight, (cin, cout * k))), x)
    out = fold1d(cols, lout, k, stride, padding)
    if bias is not None:
        out = out + reshape(as_tensor(bias), (1, cout, 1))
    return out


def batch_norm1d(x, gamma=None, beta=None, training: bool = True, running_mean=None,
                 running_var=None, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over batch and length.

    ``running_mean``/``running_var`` are numpy arrays of shape [C], updated in
    place in training mode (unbiased variance, as is customary).
    """
    x = as_tensor(x)
    _check_rank3(x, "batch_norm1d")
    b, c, length = x.shape
    if b * length < 1:
        raise ShapeError(f"batch_norm1d: channel has no samples (shape {x.shape})")
    if training:
        mu = x.mean(axis=(0, 2), keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=(0, 2), keepdims=True)
        if running_mean is not None:
            n = b * length
            unbiased = var.data.reshape(c) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.data.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        out = centered * power(var + eps, -0.5)
    else:
        if running_mean is None:
            raise ValueError("batch_norm1d eval mode needs running statistics")
        mu = Tensor(running_mean.reshape(1, c, 1))
        inv = Tensor((running_var.reshape(1, c, 1) + eps) ** -0.5)
        out = (x - mu) * inv
    if gamma is not None:
        out = out * reshape(as_tensor(gamma), (1, c, 1))
    if beta is not None:
        out = out + reshape(as_tensor(beta), (1, c, 1))
    return out


def instance_norm1d(x, eps: float = IN_EPS) -> Tensor:
    """Normalize each (item, channel) row over its samples; population variance, no affine."""
    x = as_tensor(x)
    _check_rank3(x, "instance_norm1d")
    if x.shape[2] < 1:
        raise ShapeError("instance_norm1d: empty rows")
    centered = x - x.mean(axis=2, keepdims=True)
    var = (centered * centered).mean(axis=2, keepdims=True)
    return centered * power(var + eps, -0.5)


def activation(x, kind: str = "relu", slope: float = LEAKY_SLOPE) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind in ("identity", "none"):
        return as_tensor(x)
    raise ValueError(f"unknown activation {kind!r}")


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis; weight is [Out, In]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input trailing extent {x.shape[-1:]} vs weight {weight.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, weight.shape[1])) if x.ndim != 2 else x
    out = matmul(flat, transpose(weight, (1, 0)))
    if bias is not None:
        out = out + as_tensor(bias)
    return reshape(out, lead + (weight.shape[0],)) if x.ndim != 2 else out


def embedding(labels, table) -> Tensor:
    return take_rows(table, labels)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    z = x - shift
    return z - log(sum_(exp(z), axis=axis, keepdims=True))


def softmax(x, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(log_softmax(logits, axis=1) * Tensor(onehot)).sum() * (1.0 / len(labels))
