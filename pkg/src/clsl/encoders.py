"""Trainable stand-ins for the image and label encoders.

The image side projects raw patch descriptors to ``d_v`` and runs one
single-head self-attention layer with a residual connection. There is no
positional encoding, so the encoder is permutation-equivariant over patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .params import ParamGroup, uniform_init


@dataclass
class PatchEncoderParams(ParamGroup):
    w_in: Tensor  # d_raw x d_v
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    prefix = "encoder."

    @classmethod
    def init(cls, d_raw: int, d_v: int, rng: np.random.Generator) -> "PatchEncoderParams":
        return cls(
            w_in=uniform_init(rng, (d_raw, d_v), "encoder.w_in"),
            w_q=uniform_init(rng, (d_v, d_v), "encoder.w_q"),
            w_k=uniform_init(rng, (d_v, d_v), "encoder.w_k"),
            w_v=uniform_init(rng, (d_v, d_v), "encoder.w_v"),
            w_o=uniform_init(rng, (d_v, d_v), "encoder.w_o"),
        )

    @property
    def d_v(self) -> int:
        return self.w_in.shape[1]


@dataclass
class LabelEmbeddingTable(ParamGroup):
    table: Tensor  # C x d_t

    prefix = "labels."

    @classmethod
    def init(cls, num_classes: int, d_t: int, rng: np.random.Generator) -> "LabelEmbeddingTable":
        return cls(uniform_init(rng, (num_classes, d_t), "labels.table"))

    @property
    def num_classes(self) -> int:
        return self.table.shape[0]


def self_attention(x: Tensor, params: PatchEncoderParams) -> Tensor:
    """Single-head scaled dot-product self-attention over the patch axis plus residual."""
    q = x @ params.w_q
    k = x @ params.w_k
    v = x @ params.w_v
    scores = q @ ad.swapaxes(k, -1, -2)
    weights = ad.softmax(scores, axis=-1, temperature=math.sqrt(params.d_v))
    return (weights @ v) @ params.w_o + x


def encode_image(
    raw_patches,
    params: PatchEncoderParams,
    self_attn: bool = True,
    image_id: str | None = None,
) -> Tensor:
    """Map raw patches (``[..., P, d_raw]``) to the feature map ``F`` (``[..., P, d_v]``)."""
    raw = raw_patches if isinstance(raw_patches, Tensor) else ad.constant(raw_patches)
    if raw.shape[-1] != params.w_in.shape[0]:
        raise DataError(
            f"image {image_id}: raw patch dim {raw.shape[-1]} != configured {params.w_in.shape[0]}"
        )
    if not np.all(np.isfinite(raw.value)):
        raise DataError(f"image {image_id}: non-finite raw patch values")
    x = raw @ params.w_in
    return self_attention(x, params) if self_attn else x


def embed_labels(table: LabelEmbeddingTable) -> Tensor:
    # Identity read; the table itself is the leaf so gradients land on it.
    return table.table
