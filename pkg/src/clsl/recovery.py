"""Classification heads and pseudo-label recovery.

The refined head scores every patch location and aggregates per class with a
softmax over patches of the scores themselves. The coarse head max-pools
per-patch logits of the raw image features. Unknown labels are then filled
with the refined probabilities.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .params import ParamGroup, uniform_init


@dataclass
class ClassifierParams(ParamGroup):
    cls0: Tensor  # d_v x C, coarse head
    cls1: Tensor  # 2 d_v x C (d_v x C when enhancement is disabled), refined head

    prefix = "heads."

    @classmethod
    def init(cls, d_v: int, num_classes: int, rng: np.random.Generator, enhanced: bool = True):
        rows = 2 * d_v if enhanced else d_v
        return cls(
            cls0=uniform_init(rng, (d_v, num_classes), "heads.cls0"),
            cls1=uniform_init(rng, (rows, num_classes), "heads.cls1"),
        )


@dataclass
class PredictionBundle:
    location: Tensor  # M, [..., P, C]
    refined: Tensor  # Y1 logits, [..., C]
    coarse: Tensor | None  # Y0 logits, [..., C]
    refined_prob: Tensor  # sigmoid(Y1)
    attention: Tensor | None = None  # SGFE logits A, [..., P, C]
    attention_weights: Tensor | None = None


def location_scores(enhanced: Tensor, cls1: Tensor) -> Tensor:
    return enhanced @ cls1


def aggregate(scores: Tensor) -> Tensor:
    """Region score aggregation: ``Y1_c = sum_p M[p, c] softmax_p(M[:, c])``."""
    w = ad.softmax(scores, axis=-2, temperature=1.0)
    return ad.reduce(scores * w, -2, "sum")


def max_pool(scores: Tensor) -> Tensor:
    return ad.reduce(scores, -2, "max")


def coarse_scores(features: Tensor, cls0: Tensor) -> Tensor:
    """``Y0_c = max_p (F CLS0)[p, c]``."""
    return max_pool(features @ cls0)


def fill_pseudo(observed: np.ndarray, refined_prob: np.ndarray) -> np.ndarray:
    """Known labels copied (1 -> 1, 0 -> 0); unknown (-1) entries take the refined probability.

    Works on plain arrays: the result is a constant target, never part of a graph.
    """
    y = np.asarray(observed)
    prob = np.asarray(refined_prob, dtype=np.float64)
    bad = ~np.isin(y, (-1, 0, 1))
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label value {y[idx]!r} outside {{-1, 0, 1}} at class index {idx[-1]}")
    return np.where(y == -1, prob, (y == 1).astype(np.float64))


def write_pseudo_csv(path: str | os.PathLike, image_ids, observed, ytilde) -> None:
    """Rows ``image_id,class,known,ytilde``; ``known`` is 1 when the label was observed."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "class", "known", "ytilde"])
        for i, img in enumerate(image_ids):
            for c in range(observed.shape[1]):
                w.writerow([img, c, int(observed[i, c] != -1), repr(float(ytilde[i, c]))])


def read_pseudo_csv(path: str | os.PathLike):
    """Returns ``(image_ids, known, ytilde)`` with ``known``/``ytilde`` shaped ``[N, C]``."""
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    ids: list[str] = []
    for r in recs:
        if not ids or ids[-1] != r["image_id"]:
            ids.append(r["image_id"])
    C = 1 + max(int(r["class"]) for r in recs)
    known = np.zeros((len(ids), C), dtype=np.int8)
    ytilde = np.zeros((len(ids), C))
    row = {img: i for i, img in enumerate(ids)}
    for r in recs:
        i, c = row[r["image_id"]], int(r["class"])
        known[i, c] = int(r["known"])
        ytilde[i, c] = float(r["ytilde"])
    return ids, known, ytilde
