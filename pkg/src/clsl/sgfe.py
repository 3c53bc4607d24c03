"""Semantic-guided feature enhancement via low-rank bilinear attention.

Every (patch, class) pair gets a logit from the Hadamard product of projected
patch and class features; a per-patch softmax over classes turns logits into
mixing weights, and each patch feature is augmented with its weighted mixture
of class semantics.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .params import ParamGroup, uniform_init


@dataclass
class SgfeParams(ParamGroup):
    u: Tensor  # d_v x d_1
    v: Tensor  # d_v x d_1
    p_mat: Tensor  # d_1 x d_2
    b_attn: Tensor  # d_2
    w_out: Tensor  # d_2
    temperature: float = 1.0

    prefix = "sgfe."

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"attention temperature must be positive, got {self.temperature}")

    @classmethod
    def init(cls, d_v: int, d_1: int, d_2: int, rng: np.random.Generator, temperature: float = 1.0):
        return cls(
            u=uniform_init(rng, (d_v, d_1), "sgfe.u"),
            v=uniform_init(rng, (d_v, d_1), "sgfe.v"),
            p_mat=uniform_init(rng, (d_1, d_2), "sgfe.p_mat"),
            b_attn=uniform_init(rng, (d_2,), "sgfe.b_attn", fan_in=d_1),
            w_out=uniform_init(rng, (d_2,), "sgfe.w_out"),
            temperature=temperature,
        )


@dataclass
class AttentionMaps:
    logits: np.ndarray  # P x C
    weights: np.ndarray  # P x C


def _pairwise_tanh_scores(fu: Tensor, sv: Tensor, proj: Tensor) -> Tensor:
    """Fused ``tanh(fu_p * sv_c) . proj`` over all (p, c) pairs, ``[..., P, C]``.

    Same function as the composed primitives in :func:`attention_logits_reference`;
    fusing keeps one ``[..., P, C, d_1]`` buffer alive instead of several.
    """
    if proj.ndim != 2 or proj.shape != (fu.shape[-1], 1):
        raise ShapeError(f"pairwise scores: projection shape {proj.shape}, expected ({fu.shape[-1]}, 1)")
    a, b, w = fu.value, sv.value, proj.value[:, 0]
    h = a[..., :, None, :] * b[..., None, :, :]
    np.tanh(h, out=h)
    d_1 = w.shape[0]
    out = (h.reshape(-1, d_1) @ w).reshape(h.shape[:-1])

    def backward(g):
        g_proj = (h.reshape(-1, d_1).T @ g.reshape(-1))[:, None]
        dz = h * h
        np.subtract(1.0, dz, out=dz)
        dz *= w
        dz *= g[..., None]
        g_fu = np.einsum("...pcd,...cd->...pd", dz, b)
        g_sv = np.einsum("...pcd,...pd->...cd", dz, a)
        return g_fu, g_sv, g_proj

    return ad.custom_op("pairwise_tanh_scores", (fu, sv, proj), out, backward)


def attention_logits(features: Tensor, semantics: Tensor, params: SgfeParams) -> Tensor:
    """``A[p, c] = w . (tanh((f_p U) * (s_c V)) P + b)`` for all pairs; ``[..., P, C]``."""
    fu = features @ params.u  # [..., P, d_1]
    sv = semantics @ params.v  # [..., C, d_1]
    d_2 = params.w_out.shape[0]
    # (h P + b) . w == h (P w) + b . w; contracting P with w first avoids a [..., P, C, d_2] tensor
    proj = params.p_mat @ ad.reshape(params.w_out, (d_2, 1))
    bias = ad.reduce(params.b_attn * params.w_out, None, "sum")
    return _pairwise_tanh_scores(fu, sv, proj) + bias


def attention_logits_reference(features: Tensor, semantics: Tensor, params: SgfeParams) -> Tensor:
    """Unfused composition of generic primitives, used to cross-check the fused path."""
    fu = features @ params.u
    sv = semantics @ params.v
    h = ad.tanh(ad.expand_dims(fu, -2) * ad.expand_dims(sv, -3))  # [..., P, C, d_1]
    d_2 = params.w_out.shape[0]
    z = h @ params.p_mat + params.b_attn  # [..., P, C, d_2]
    a = z @ ad.reshape(params.w_out, (d_2, 1))
    return ad.reshape(a, h.shape[:-1])


def attention_weights(logits: Tensor, temperature: float) -> Tensor:
    """Per-patch softmax over classes at the given temperature."""
    if not temperature > 0:
        raise ConfigError(f"attention temperature must be positive, got {temperature}")
    return ad.softmax(logits, axis=-1, temperature=temperature)


def enhance(features: Tensor, semantics: Tensor, weights: Tensor) -> Tensor:
    """``E_p = [sum_c B[p, c] s_c || f_p]``, shape ``[..., P, 2 d_v]``."""
    mixed = weights @ semantics
    return ad.concat(mixed, features, axis=-1)


def write_attention_csv(path: str | os.PathLike, maps: AttentionMaps) -> None:
    """One image's maps as ``patch,class,logit,weight`` rows, patch-major."""
    P, C = maps.logits.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch", "class", "logit", "weight"])
        for p in range(P):
            for c in range(C):
                w.writerow([p, c, repr(float(maps.logits[p, c])), repr(float(maps.weights[p, c]))])


def read_attention_csv(path: str | os.PathLike) -> AttentionMaps:
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    P = 1 + max(int(r["patch"]) for r in recs)
    C = 1 + max(int(r["class"]) for r in recs)
    logits, weights = np.zeros((P, C)), np.zeros((P, C))
    for r in recs:
        logits[int(r["patch"]), int(r["class"])] = float(r["logit"])
        weights[int(r["patch"]), int(r["class"])] = float(r["weight"])
    return AttentionMaps(logits, weights)
