"""Semantic-related feature learning: fuse the pooled image feature with label embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamGroup, uniform_init


@dataclass
class SrflParams(ParamGroup):
    w_fuse: Tensor  # (d_v + d_t) x d_v
    b_fuse: Tensor  # d_v

    prefix = "srfl."

    @classmethod
    def init(cls, d_v: int, d_t: int, rng: np.random.Generator) -> "SrflParams":
        return cls(
            w_fuse=uniform_init(rng, (d_v + d_t, d_v), "srfl.w_fuse"),
            b_fuse=uniform_init(rng, (d_v,), "srfl.b_fuse", fan_in=d_v + d_t),
        )


def global_pool(features: Tensor) -> Tensor:
    """Mean over the patch axis: ``[..., P, d_v] -> [..., d_v]``."""
    return ad.reduce(features, -2, "mean")


def fuse(global_feature: Tensor | None, labels: Tensor, params: SrflParams) -> Tensor:
    """Per-class semantic features ``S = [F^G || l_c] W_fuse + b_fuse``.

    ``global_feature`` is replicated across the ``C`` label rows before the
    concatenation. Passing ``None`` drops the image block entirely, leaving
    semantics driven by the label embeddings alone (used by the ablation grid).
    """
    C, d_t = labels.shape
    d_v = params.w_fuse.shape[1]
    if global_feature is None:
        w_label = ad.slice_axis(params.w_fuse, d_v, d_v + d_t, axis=0)
        return labels @ w_label + params.b_fuse
    lead = global_feature.shape[:-1]
    g = ad.broadcast_to(ad.expand_dims(global_feature, -2), (*lead, C, d_v))
    lab = ad.broadcast_to(labels, (*lead, C, d_t)) if lead else labels
    return ad.concat(g, lab, axis=-1) @ params.w_fuse + params.b_fuse
