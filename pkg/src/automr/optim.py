"""Adaptive-moment optimizer, gradient clipping and learning-rate schedules.

Weight decay is fully decoupled: the decay term is applied directly to the
parameter and is not scaled by the learning rate, so the decay knob keeps its
meaning whatever the schedule does. Decay touches only weight matrices
(ndim >= 2), never biases or normalization affines.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError


class AdamW:
    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if lr < 0 or weight_decay < 0:
            raise ConfigError(f"lr and weight_decay must be >= 0, got {lr}, {weight_decay}")
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                p -= self.weight_decay * p

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = state["t"]
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.einsum("i,i->", g.ravel(), g.ravel(), dtype=np.float64))
    return math.sqrt(total)


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients in place so the global norm is at most clip_norm.

    Scaling is uniform, so direction is preserved. Returns the pre-clip norm.
    """
    norm = global_grad_norm(grads)
    if math.isfinite(norm) and norm > clip_norm:
        factor = clip_norm / norm
        for g in grads.values():
            g *= factor
    return norm


class Scheduler:
    """Per-epoch learning rates. lr_for(epoch) is read at each epoch start;
    observe(metric) runs after evaluation so plateau logic can react."""

    def lr_for(self, epoch: int) -> float:
        raise NotImplementedError

    def observe(self, metric: float) -> None:
        pass

    def scale(self, factor: float) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict:
        raise NotImplementedError

    def load_state_dict(self, state: dict) -> None:
        raise NotImplementedError


class ConstantSchedule(Scheduler):
    def __init__(self, base_lr: float) -> None:
        self.base_lr = base_lr

    def lr_for(self, epoch: int) -> float:
        return self.base_lr

    def scale(self, factor: float) -> None:
        self.base_lr *= factor

    def state_dict(self) -> dict:
        return {"kind": "none", "base_lr": self.base_lr}

    def load_state_dict(self, state: dict) -> None:
        self.base_lr = state["base_lr"]


class CosineSchedule(Scheduler):
    """lr(e) = 0.5 * base * (1 + cos(pi * e / total)); strictly decreasing."""

    def __init__(self, base_lr: float, total_epochs: int) -> None:
        self.base_lr = base_lr
        self.total_epochs = max(total_epochs, 1)

    def lr_for(self, epoch: int) -> float:
        return 0.5 * self.base_lr * (1.0 + math.cos(math.pi * epoch / self.total_epochs))

    def scale(self, factor: float) -> None:
        self.base_lr *= factor

    def state_dict(self) -> dict:
        return {"kind": "cosine", "base_lr": self.base_lr, "total_epochs": self.total_epochs}

    def load_state_dict(self, state: dict) -> None:
        self.base_lr = state["base_lr"]
        self.total_epochs = state["total_epochs"]


class PlateauSchedule(Scheduler):
    """Multiply the lr by `factor` after `patience` epochs without improvement."""

    def __init__(self, base_lr: float, factor: float = 0.5, patience: int = 3) -> None:
        if not 0.0 < factor < 1.0:
            raise ConfigError(f"plateau factor must be in (0, 1), got {factor}")
        self.current_lr = base_lr
        self.factor = factor
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def lr_for(self, epoch: int) -> float:
        return self.current_lr

    def observe(self, metric: float) -> None:
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.current_lr *= self.factor
                self.bad_epochs = 0

    def scale(self, factor: float) -> None:
        self.current_lr *= factor

    def state_dict(self) -> dict:
        return {
            "kind": "plateau",
            "current_lr": self.current_lr,
            "factor": self.factor,
            "patience": self.patience,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
        }

    def load_state_dict(self, state: dict) -> None:
        self.current_lr = state["current_lr"]
        self.factor = state["factor"]
        self.patience = state["patience"]
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]


def make_scheduler(kind: str, base_lr: float, total_epochs: int,
                   plateau_factor: float = 0.5, plateau_patience: int = 3) -> Scheduler:
    if kind == "cosine":
        return CosineSchedule(base_lr, total_epochs)
    if kind == "plateau":
        return PlateauSchedule(base_lr, plateau_factor, plateau_patience)
    if kind == "none":
        return ConstantSchedule(base_lr)
    raise ConfigError(f"unknown scheduler {kind!r}; expected cosine, plateau or none")
