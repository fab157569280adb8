"""Separable-convolution classifier: declarative configs, construction, forward.

A model is a stem (standard conv, BN, ReLU), a stack of residual blocks, and
a classification head (pointwise conv, ReLU, global average pool, linear).
Each block repeats `cells` times [depthwise conv -> pointwise conv -> BN ->
ReLU -> dropout] and adds a skip from the block input, projected through a
pointwise conv + BN when channel counts differ. All convs run at stride 1
with length-preserving padding, so time resolution survives until pooling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .ops import ConvSpec, same_padding
from .rng import rng_for
from .tape import Tape


@dataclass
class BlockConfig:
    cells: int
    channels: int
    kernel: int
    dilation: int = 1
    residual: bool = True


@dataclass
class QuartzConfig:
    in_channels: int
    num_classes: int
    blocks: list[BlockConfig]
    head_channels: int = 128
    dropout: float = 0.1
    stem_kernel: int = 5

    def validate(self) -> "QuartzConfig":
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.blocks:
            raise ConfigError("blocks must be nonempty")
        if self.head_channels < 1:
            raise ConfigError(f"head_channels must be >= 1, got {self.head_channels}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ConfigError(f"stem_kernel must be odd and positive, got {self.stem_kernel}")
        for i, blk in enumerate(self.blocks):
            if blk.cells < 1:
                raise ConfigError(f"block {i}: cells must be >= 1, got {blk.cells}")
            if blk.channels < 1:
                raise ConfigError(f"block {i}: channels must be >= 1, got {blk.channels}")
            if blk.kernel < 1 or blk.kernel % 2 == 0:
                raise ConfigError(f"block {i}: kernel must be odd and positive, got {blk.kernel}")
            if blk.dilation < 1:
                raise ConfigError(f"block {i}: dilation must be >= 1, got {blk.dilation}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuartzConfig":
        try:
            blocks = [BlockConfig(**b) for b in d["blocks"]]
            cfg = cls(
                in_channels=d["in_channels"],
                num_classes=d["num_classes"],
                blocks=blocks,
                head_channels=d.get("head_channels", 128),
                dropout=d.get("dropout", 0.1),
                stem_kernel=d.get("stem_kernel", 5),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc
        return cfg.validate()


PRESETS = ("base", "large")


def preset(name: str, in_channels: int, num_classes: int) -> QuartzConfig:
    """Ready-made architectures sized for desk-scale training."""
    if name == "base":
        cfg = QuartzConfig(
            in_channels=in_channels,
            num_classes=num_classes,
            blocks=[
                BlockConfig(cells=2, channels=64, kernel=5),
                BlockConfig(cells=2, channels=64, kernel=7),
                BlockConfig(cells=2, channels=128, kernel=9),
            ],
            head_channels=128,
            dropout=0.1,
            stem_kernel=5,
        )
    elif name == "large":
        cfg = QuartzConfig(
            in_channels=in_channels,
            num_classes=num_classes,
            blocks=[
                BlockConfig(cells=3, channels=128, kernel=5),
                BlockConfig(cells=3, channels=128, kernel=7),
                BlockConfig(cells=3, channels=256, kernel=9),
                BlockConfig(cells=3, channels=256, kernel=11, dilation=2),
                BlockConfig(cells=3, channels=512, kernel=13, dilation=2),
            ],
            head_channels=256,
            dropout=0.1,
            stem_kernel=7,
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; available presets: {PRESETS}")
    return cfg.validate()


def receptive_field(config: QuartzConfig) -> int:
    """Input samples influencing one pre-pooling output position: 1 + sum dilation*(kernel-1)."""
    config.validate()
    rf = 1 + (config.stem_kernel - 1)
    for blk in config.blocks:
        rf += blk.cells * blk.dilation * (blk.kernel - 1)
    return rf


def _layer_plan(config: QuartzConfig) -> list[tuple[str, str, ConvSpec | int]]:
    """Ordered (name, kind, detail) triples; the single source of truth for
    parameter shapes, initialization, counting and the forward pass."""
    plan: list[tuple[str, str, ConvSpec | int]] = []
    stem_out = config.blocks[0].channels
    plan.append(
        (
            "stem.conv",
            "conv",
            ConvSpec(
                config.in_channels,
                stem_out,
                kernel=config.stem_kernel,
                padding=same_padding(config.stem_kernel),
            ),
        )
    )
    plan.append(("stem.bn", "bn", stem_out))
    ch = stem_out
    for bi, blk in enumerate(config.blocks):
        block_in = ch
        for ci in range(blk.cells):
            plan.append(
                (
                    f"block{bi}.cell{ci}.dw",
                    "conv",
                    ConvSpec(
                        ch,
                        ch,
                        kernel=blk.kernel,
                        dilation=blk.dilation,
                        padding=same_padding(blk.kernel, blk.dilation),
                        mode="depthwise",
                    ),
                )
            )
            plan.append((f"block{bi}.cell{ci}.pw", "conv", ConvSpec(ch, blk.channels, mode="pointwise")))
            plan.append((f"block{bi}.cell{ci}.bn", "bn", blk.channels))
            ch = blk.channels
        if blk.residual and block_in != blk.channels:
            plan.append((f"block{bi}.res.pw", "conv", ConvSpec(block_in, blk.channels, mode="pointwise")))
            plan.append((f"block{bi}.res.bn", "bn", blk.channels))
    plan.append(("head.conv", "conv", ConvSpec(ch, config.head_channels, mode="pointwise")))
    plan.append(("head.fc", "fc", config.head_channels))
    return plan


def param_shapes(config: QuartzConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, kind, detail in _layer_plan(config):
        if kind == "conv":
            shapes[f"{name}.w"] = detail.weight_shape()
            shapes[f"{name}.b"] = (detail.out_channels,)
        elif kind == "bn":
            shapes[f"{name}.gamma"] = (detail,)
            shapes[f"{name}.beta"] = (detail,)
        else:  # fc
            shapes[f"{name}.w"] = (config.num_classes, detail)
            shapes[f"{name}.b"] = (config.num_classes,)
    return shapes


def buffer_shapes(config: QuartzConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, kind, detail in _layer_plan(config):
        if kind == "bn":
            shapes[f"{name}.mean"] = (detail,)
            shapes[f"{name}.var"] = (detail,)
    return shapes


def count_params(config: QuartzConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(config).values())


def _fan_in(name: str, shape: tuple[int, ...], plan_specs: dict[str, ConvSpec]) -> int:
    spec = plan_specs.get(name.rsplit(".", 1)[0])
    if spec is not None:
        if spec.mode == "depthwise":
            return spec.kernel
        return spec.in_channels * spec.kernel
    return shape[1]  # fc weight [out, in]


class ModelInstance:
    """A built network: config, named parameters, BN buffers and a mode flag.

    Parameters are float arrays mutated in place by the optimizer. Forward in
    train mode updates the BN running-stat buffers; eval mode is read-only.
    """

    def __init__(
        self,
        config: QuartzConfig,
        params: dict[str, np.ndarray],
        buffers: dict[str, np.ndarray],
    ) -> None:
        self.config = config
        self.params = params
        self.buffers = buffers
        self.mode = "eval"
        self._plan = _layer_plan(config)

    def train(self) -> "ModelInstance":
        self.mode = "train"
        return self

    def eval(self) -> "ModelInstance":
        self.mode = "eval"
        return self

    def load_arrays(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        """Overwrite parameters and buffers in place from (checkpoint) arrays."""
        for k, src in params.items():
            if k not in self.params or self.params[k].shape != src.shape:
                raise ShapeError(f"parameter {k!r}: shape {src.shape} does not fit this model")
            self.params[k][...] = src
        for k, src in buffers.items():
            if k not in self.buffers or self.buffers[k].shape != src.shape:
                raise ShapeError(f"buffer {k!r}: shape {src.shape} does not fit this model")
            self.buffers[k] = src.astype(self.buffers[k].dtype, copy=True)

    def forward(
        self,
        x: np.ndarray,
        tape: Tape | None = None,
        step_key: tuple[int, ...] | None = None,
    ) -> np.ndarray:
        """Compute logits [B, num_classes] for a batch [B, C, W].

        `step_key` seeds the per-layer dropout masks in train mode, typically
        (seed, epoch, step); identical keys give identical masks.
        """
        if x.ndim != 3:
            raise ShapeError(f"batch: expected 3 dims [batch, channels, window], got {x.ndim}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"batch channels: model expects {self.config.in_channels}, got {x.shape[1]}"
            )
        train = self.mode == "train"
        if step_key is None:
            step_key = (0,)
        p, cfg = self.params, self.config

        def bn(name: str, h: np.ndarray) -> np.ndarray:
            out, mean, var = ops.batchnorm1d(
                h,
                p[f"{name}.gamma"],
                p[f"{name}.beta"],
                self.buffers[f"{name}.mean"],
                self.buffers[f"{name}.var"],
                train=train,
                tape=tape,
            )
            if train:
                self.buffers[f"{name}.mean"] = mean
                self.buffers[f"{name}.var"] = var
            return out

        specs = {name: d for name, kind, d in self._plan if kind == "conv"}

        h = ops.conv1d(x, p["stem.conv.w"], p["stem.conv.b"], specs["stem.conv"], tape)
        h = bn("stem.bn", h)
        h = ops.relu(h, tape)

        drop_layer = 0
        for bi, blk in enumerate(cfg.blocks):
            block_in = h
            for ci in range(blk.cells):
                for piece in ("dw", "pw"):
                    nm = f"block{bi}.cell{ci}.{piece}"
                    h = ops.conv1d(h, p[f"{nm}.w"], p[f"{nm}.b"], specs[nm], tape)
                h = bn(f"block{bi}.cell{ci}.bn", h)
                h = ops.relu(h, tape)
                rng = rng_for(step_key[0], "dropout", drop_layer, *step_key[1:]) if train else None
                h = ops.dropout(h, cfg.dropout, train, rng=rng, tape=tape)
                drop_layer += 1
            if blk.residual:
                nm = f"block{bi}.res.pw"
                if f"{nm}.w" in p:
                    skip = ops.conv1d(block_in, p[f"{nm}.w"], p[f"{nm}.b"], specs[nm], tape)
                    skip = bn(f"block{bi}.res.bn", skip)
                else:
                    skip = block_in
                h = ops.add(h, skip, tape)

        h = ops.conv1d(h, p["head.conv.w"], p["head.conv.b"], specs["head.conv"], tape)
        h = ops.relu(h, tape)
        h = ops.global_avg_pool(h, tape)
        return ops.linear(h, p["head.fc.w"], p["head.fc.b"], tape)


def build(
    config: QuartzConfig,
    seed: int = 0,
    init: str = "he",
    dtype: np.dtype = np.float32,
) -> ModelInstance:
    """Instantiate a model with He-normal weights (or zeros, a test hook).

    Each parameter draws from an RNG keyed by (seed, name), so identical
    (config, seed) pairs produce bytewise-identical parameters.
    """
    config.validate()
    if init not in ("he", "zero"):
        raise ConfigError(f"unknown init {init!r}")
    plan_specs = {name: d for name, kind, d in _layer_plan(config) if kind == "conv"}
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            params[name] = np.ones(shape, dtype=dtype)
        elif leaf in ("b", "beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif init == "zero":
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            std = math.sqrt(2.0 / _fan_in(name, shape, plan_specs))
            params[name] = rng_for(seed, "init", name).normal(0.0, std, shape).astype(dtype)
    buffers = {
        name: (np.ones(shape, dtype=dtype) if name.endswith(".var") else np.zeros(shape, dtype=dtype))
        for name, shape in buffer_shapes(config).items()
    }
    return ModelInstance(config, params, buffers)
