"""Differentiable numeric primitives on plain float arrays.

Layout is channels-first: signal batches are [B, C, L]. Convolution weights
are [C_out, C_in, k] (standard), [C, 1, k] (depthwise) or [C_out, C_in, 1]
(pointwise). Every op allocates a fresh output array and, when handed a
Tape, records an analytic backward for it. Reductions that feed statistics,
losses or norms accumulate in float64 regardless of the working dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tape import Tape

CONV_MODES = ("standard", "depthwise", "pointwise")


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one 1D convolution."""

    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    mode: str = "standard"

    def __post_init__(self) -> None:
        if self.mode not in CONV_MODES:
            raise ConfigError(f"unknown conv mode {self.mode!r}; expected one of {CONV_MODES}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(
                f"conv channels must be positive, got in={self.in_channels} out={self.out_channels}"
            )
        if self.kernel < 1 or self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ConfigError(
                f"invalid conv geometry: kernel={self.kernel} stride={self.stride} "
                f"dilation={self.dilation} padding={self.padding}"
            )
        if self.mode == "depthwise" and self.out_channels != self.in_channels:
            raise ConfigError(
                f"depthwise conv requires out_channels == in_channels, "
                f"got {self.out_channels} != {self.in_channels}"
            )
        if self.mode == "pointwise" and (self.kernel != 1 or self.dilation != 1):
            raise ConfigError(
                f"pointwise conv requires kernel == 1 and dilation == 1, "
                f"got kernel={self.kernel} dilation={self.dilation}"
            )

    @property
    def span(self) -> int:
        """Input samples covered by one kernel application."""
        return self.dilation * (self.kernel - 1) + 1

    def weight_shape(self) -> tuple[int, int, int]:
        if self.mode == "standard":
            return (self.out_channels, self.in_channels, self.kernel)
        if self.mode == "depthwise":
            return (self.in_channels, 1, self.kernel)
        return (self.out_channels, self.in_channels, 1)

    def weight_count(self) -> int:
        s = self.weight_shape()
        return s[0] * s[1] * s[2]

    def out_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.span) // self.stride + 1


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding that preserves length at stride 1. Odd kernels only."""
    if kernel % 2 == 0:
        raise ConfigError(f"length-preserving padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


def _check_shape(name: str, arr: np.ndarray, expected: tuple[int, ...]) -> None:
    if arr.shape != expected:
        raise ShapeError(f"{name}: expected shape {expected}, got {arr.shape}")


def _unfold(x: np.ndarray, spec: ConvSpec, l_out: int) -> tuple[np.ndarray, int]:
    """Gather kernel taps: [B, C, L] -> contiguous [B, C, k, L_out]. Returns (cols, padded length)."""
    if spec.padding:
        x = np.pad(x, ((0, 0), (0, 0), (spec.padding, spec.padding)))
    b, c, l_pad = x.shape
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, spec.kernel, l_out),
        strides=(s0, s1, s2 * spec.dilation, s2 * spec.stride),
        writeable=False,
    )
    return np.ascontiguousarray(view), l_pad


def _fold(gcols: np.ndarray, spec: ConvSpec, l_in: int, l_pad: int) -> np.ndarray:
    """Scatter-add tap gradients [B, C, k, L_out] back to the input layout [B, C, L]."""
    b, c, k, l_out = gcols.shape
    gx = np.zeros((b, c, l_pad), dtype=gcols.dtype)
    for t in range(k):
        start = t * spec.dilation
        gx[:, :, start : start + spec.stride * l_out : spec.stride] += gcols[:, :, t, :]
    if spec.padding:
        gx = gx[:, :, spec.padding : spec.padding + l_in]
    return np.ascontiguousarray(gx)


def conv1d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    spec: ConvSpec,
    tape: Tape | None = None,
) -> np.ndarray:
    """Direct 1D convolution, [B, C_in, L] -> [B, C_out, L_out]."""
    if x.ndim != 3:
        raise ShapeError(f"conv input: expected 3 dims [batch, channels, length], got {x.ndim}")
    b, c_in, l_in = x.shape
    if c_in != spec.in_channels:
        raise ShapeError(f"conv input channels: expected {spec.in_channels}, got {c_in}")
    _check_shape("conv weight", weight, spec.weight_shape())
    _check_shape("conv bias", bias, (spec.out_channels,))
    l_out = spec.out_length(l_in)
    if l_out < 1:
        raise ShapeError(
            f"window too short for receptive field: length {l_in} with padding {spec.padding} "
            f"cannot fit kernel span {spec.span}"
        )

    cols = None
    x_pad = None
    l_pad = l_in
    if spec.mode == "pointwise" and spec.padding == 0:
        x_sub = x[:, :, :: spec.stride] if spec.stride > 1 else x
        y = np.matmul(weight[:, :, 0], x_sub)
    elif spec.mode == "depthwise":
        # shifted slice accumulation; cheaper than materializing kernel taps
        x_pad = np.pad(x, ((0, 0), (0, 0), (spec.padding, spec.padding))) if spec.padding else x
        w = weight[:, 0, :]
        y = np.zeros((b, c_in, l_out), dtype=x.dtype)
        for t in range(spec.kernel):
            sl = x_pad[:, :, t * spec.dilation : t * spec.dilation + spec.stride * l_out : spec.stride]
            y += sl * w[None, :, t, None]
    else:
        cols, l_pad = _unfold(x, spec, l_out)
        w2 = weight.reshape(spec.out_channels, -1)
        y = np.matmul(w2, cols.reshape(b, c_in * spec.kernel, l_out))
    y += bias[None, :, None]

    if tape is not None:
        def backward(g: np.ndarray):
            g = np.ascontiguousarray(g)
            grad_bias = np.einsum("bcl->c", g).astype(bias.dtype, copy=False)
            if spec.mode == "pointwise" and spec.padding == 0:
                x_s = x[:, :, :: spec.stride] if spec.stride > 1 else x
                grad_w = np.matmul(g, x_s.transpose(0, 2, 1)).sum(axis=0)[:, :, None]
                gx_cols = np.matmul(weight[:, :, 0].T, g)
                if spec.stride > 1:
                    grad_x = np.zeros_like(x)
                    grad_x[:, :, :: spec.stride] = gx_cols
                else:
                    grad_x = gx_cols
            elif spec.mode == "depthwise":
                w = weight[:, 0, :]
                grad_w = np.empty((c_in, spec.kernel), dtype=weight.dtype)
                gx_pad = np.zeros_like(x_pad)
                for t in range(spec.kernel):
                    start = t * spec.dilation
                    sl = slice(start, start + spec.stride * l_out, spec.stride)
                    grad_w[:, t] = np.einsum("bcl,bcl->c", g, x_pad[:, :, sl])
                    gx_pad[:, :, sl] += g * w[None, :, t, None]
                grad_w = grad_w[:, None, :]
                grad_x = (
                    gx_pad[:, :, spec.padding : spec.padding + l_in] if spec.padding else gx_pad
                )
            else:
                cols_r = cols.reshape(b, c_in * spec.kernel, l_out)
                grad_w = np.matmul(g, cols_r.transpose(0, 2, 1)).sum(axis=0)
                grad_w = grad_w.reshape(spec.weight_shape())
                w2 = weight.reshape(spec.out_channels, -1)
                gx_cols = np.matmul(w2.T, g).reshape(b, c_in, spec.kernel, l_out)
                grad_x = _fold(gx_cols, spec, l_in, l_pad)
            return grad_x, grad_w.astype(weight.dtype, copy=False), grad_bias

        tape.record(y, (x, weight, bias), backward)
    return y


def batchnorm1d(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
    tape: Tape | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-channel normalization over (batch, length).

    Train mode normalizes by batch statistics (biased variance) and returns
    updated running stats; eval mode normalizes by the running stats and
    returns them unchanged. Running stats are never mutated in place.
    """
    b, c, l = x.shape
    _check_shape("batchnorm gamma", gamma, (c,))
    _check_shape("batchnorm beta", beta, (c,))
    if train:
        n = b * l
        if n < 2:
            raise DataError(f"batch variance undefined: batch*length = {n} < 2")
        mean64 = x.mean(axis=(0, 2), dtype=np.float64)
        xc = x - mean64.astype(x.dtype)[None, :, None]
        var64 = np.einsum("bcl,bcl->c", xc, xc, dtype=np.float64) / n
        inv = (1.0 / np.sqrt(var64 + eps)).astype(x.dtype)
        xhat = xc * inv[None, :, None]
        new_mean = ((1.0 - momentum) * running_mean + momentum * mean64).astype(running_mean.dtype)
        new_var = ((1.0 - momentum) * running_var + momentum * var64).astype(running_var.dtype)
    else:
        inv = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(x.dtype)
        xhat = (x - running_mean[None, :, None]) * inv[None, :, None]
        new_mean, new_var = running_mean, running_var
    y = gamma[None, :, None] * xhat + beta[None, :, None]

    if tape is not None:
        def backward(g: np.ndarray):
            grad_beta = np.einsum("bcl->c", g).astype(beta.dtype, copy=False)
            grad_gamma = np.einsum("bcl,bcl->c", g, xhat).astype(gamma.dtype, copy=False)
            if train:
                n = b * l
                dxhat = g * gamma[None, :, None]
                m1 = np.einsum("bcl->c", dxhat) / n
                m2 = np.einsum("bcl,bcl->c", dxhat, xhat) / n
                grad_x = inv[None, :, None] * (dxhat - m1[None, :, None] - xhat * m2[None, :, None])
            else:
                grad_x = g * (gamma * inv)[None, :, None]
            return grad_x, grad_gamma, grad_beta

        tape.record(y, (x, gamma, beta), backward)
    return y, new_mean, new_var


def relu(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    y = np.maximum(x, 0)
    if tape is not None:
        tape.record(y, (x,), lambda g: (g * (x > 0),))
    return y


def dropout(
    x: np.ndarray,
    rate: float,
    train: bool,
    rng: np.random.Generator | None = None,
    tape: Tape | None = None,
) -> np.ndarray:
    """Inverted dropout: train mode zeroes with probability `rate` and scales by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        y = x.copy()
        if tape is not None:
            tape.record(y, (x,), lambda g: (g,))
        return y
    if rng is None:
        raise ConfigError("train-mode dropout needs an explicit RNG")
    draw_dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    mask = (rng.random(x.shape, dtype=draw_dtype) >= rate).astype(x.dtype) / (1.0 - rate)
    y = x * mask
    if tape is not None:
        tape.record(y, (x,), lambda g: (g * mask,))
    return y


def global_avg_pool(x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Mean over the time axis, [B, C, L] -> [B, C]."""
    l = x.shape[2]
    y = x.mean(axis=2, dtype=np.float64).astype(x.dtype)
    if tape is not None:
        tape.record(y, (x,), lambda g: (np.repeat(g[:, :, None], l, axis=2) / l,))
    return y


def linear(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, tape: Tape | None = None
) -> np.ndarray:
    """Affine map, [B, F] @ weight[O, F].T + bias[O]."""
    if x.ndim != 2:
        raise ShapeError(f"linear input: expected 2 dims [batch, features], got {x.ndim}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"linear weight: expected [out, {x.shape[1]}], got {weight.shape}")
    _check_shape("linear bias", bias, (weight.shape[0],))
    y = x @ weight.T + bias
    if tape is not None:
        def backward(g: np.ndarray):
            return g @ weight, (g.T @ x).astype(weight.dtype, copy=False), g.sum(
                axis=0, dtype=np.float64
            ).astype(bias.dtype)

        tape.record(y, (x, weight, bias), backward)
    return y


def add(a: np.ndarray, b: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    y = a + b
    if tape is not None:
        tape.record(y, (a, b), lambda g: (g, g))
    return y


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax, [B, C] -> [B, C] with rows summing to 1."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray,
    targets: np.ndarray,
    reduction: str = "mean",
    tape: Tape | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy of integer targets against softmax(logits).

    Returns (loss, grad_logits) where loss is a 0-d float64 array computed via
    log-sum-exp and grad_logits is softmax - onehot, scaled by 1/B for mean
    reduction. If a tape is given the same gradient is recorded for replay.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits: expected 2 dims [batch, classes], got {logits.ndim}")
    b, c = logits.shape
    if b == 0:
        raise DataError("empty batch: no rows to score")
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    targets = np.asarray(targets)
    if targets.shape != (b,):
        raise ShapeError(f"targets: expected shape ({b},), got {targets.shape}")
    if not np.issubdtype(targets.dtype, np.integer):
        raise DataError(f"targets must be integer class indices, got dtype {targets.dtype}")
    bad = (targets < 0) | (targets >= c)
    if bad.any():
        row = int(np.argmax(bad))
        raise DataError(
            f"class index out of range: row {row} has target {int(targets[row])}, "
            f"valid range is [0, {c})"
        )

    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    per_example = lse - z[np.arange(b), targets]
    loss_val = per_example.mean() if reduction == "mean" else per_example.sum()
    loss = np.asarray(loss_val, dtype=np.float64)

    probs = np.exp(z - lse[:, None])
    grad = probs.copy()
    grad[np.arange(b), targets] -= 1.0
    if reduction == "mean":
        grad /= b
    grad_logits = grad.astype(logits.dtype, copy=False)

    if tape is not None:
        tape.record(loss, (logits,), lambda g: (grad_logits * g,))
    return loss, grad_logits
