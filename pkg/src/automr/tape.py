"""Reverse-mode gradient tape over the numeric primitives.

Ops append one entry per executed primitive. Walking the entries in reverse
and invoking each entry's backward exactly once yields gradients for every
array that influenced the requested output. Arrays are identified by object
identity, which is safe because every op allocates a fresh output array.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    def __init__(self) -> None:
        self._entries: list[tuple[np.ndarray, tuple[np.ndarray, ...], BackwardFn]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, output: np.ndarray, inputs: Sequence[np.ndarray], backward: BackwardFn) -> None:
        """Register one executed op. backward(grad_out) returns one gradient (or None) per input."""
        self._entries.append((output, tuple(inputs), backward))

    def gradients(self, output: np.ndarray, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Gradients of `output` w.r.t. every recorded array, keyed by id().

        Each tape entry's backward runs exactly once; gradients flowing into the
        same array from several consumers are summed.
        """
        if seed is None:
            seed = np.ones_like(output)
        grads: dict[int, np.ndarray] = {id(output): np.asarray(seed)}
        for out, inputs, backward in reversed(self._entries):
            g_out = grads.pop(id(out), None)
            if g_out is None:
                continue  # this op does not influence `output`
            for arr, g in zip(inputs, backward(g_out)):
                if g is None:
                    continue
                key = id(arr)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        return grads
