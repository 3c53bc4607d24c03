"""Parameter initialisation shared by the model components."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def uniform_init(
    rng: np.random.Generator, shape: tuple[int, ...], name: str, fan_in: int | None = None
) -> Tensor:
    """Trainable tensor drawn i.i.d. from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``fan_in`` defaults to the leading extent, i.e. the input side of a
    row-vector-times-matrix layer.
    """
    fan_in = shape[0] if fan_in is None else fan_in
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class ParamGroup:
    """Mixin for dataclasses whose fields are trainable tensors."""

    prefix = ""

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                out[f"{self.prefix}{key}"] = val
        return out
