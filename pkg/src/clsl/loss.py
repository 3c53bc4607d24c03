"""Asymmetric loss with hard, soft and masked targets, and the two-head objective.

Reduction: sum over classes, mean over any leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InvariantError

EPS = 1e-7


@dataclass(frozen=True)
class AslParams:
    gamma_pos: float = 0.0
    gamma_neg: float = 2.0
    clip: float = 0.05

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ConfigError("ASL focusing exponents must be non-negative")
        if not 0.0 <= self.clip < 1.0:
            raise ConfigError(f"ASL clip must lie in [0, 1), got {self.clip}")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.8

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")


def _branches(prob: Tensor, params: AslParams) -> tuple[Tensor, Tensor]:
    """Elementwise positive and negative ASL terms, both non-negative."""
    p = ad.clip(prob, EPS, 1.0 - EPS)
    pos = ad.neg(ad.log(p))
    if params.gamma_pos != 0:
        pos = ad.power(1.0 - p, params.gamma_pos) * pos
    p_m = ad.clip(p - params.clip, 0.0, None) if params.clip > 0 else p
    neg = ad.neg(ad.log(1.0 - p_m))
    if params.gamma_neg != 0:
        neg = ad.power(p_m, params.gamma_neg) * neg
    return pos, neg


def _batch_count(prob: Tensor) -> int:
    return int(np.prod(prob.shape[:-1])) if prob.ndim > 1 else 1


def _weighted(prob: Tensor, w_pos: np.ndarray, w_neg: np.ndarray, params: AslParams) -> Tensor:
    pos, neg = _branches(prob, params)
    total = pos * ad.constant(w_pos) + neg * ad.constant(w_neg)
    return ad.reduce(total, None, "sum") * (1.0 / _batch_count(prob))


def asl_term(p: float, y: int, params: AslParams = AslParams()) -> float:
    """Loss of one probability against a hard target ``y`` in {0, 1}."""
    if y not in (0, 1):
        raise ConfigError(f"hard ASL target must be 0 or 1, got {y}")
    pos, neg = _branches(ad.constant([p]), params)
    return float((pos if y == 1 else neg).value[0])


def asl_soft(prob: Tensor, target: np.ndarray, params: AslParams = AslParams()) -> Tensor:
    """``sum_c t_c L+(p_c) + (1 - t_c) L-(p_c)`` for soft targets in [0, 1]."""
    t = np.asarray(target, dtype=np.float64)
    return _weighted(prob, t, 1.0 - t, params)


def masked_asl(prob: Tensor, observed: np.ndarray, params: AslParams = AslParams()) -> Tensor:
    """Hard ASL over known entries only; ``-1`` entries contribute no loss and no gradient."""
    y = np.asarray(observed)
    return _weighted(prob, (y == 1).astype(np.float64), (y == 0).astype(np.float64), params)


def total_loss(
    refined_prob: Tensor,
    coarse_prob: Tensor | None,
    observed: np.ndarray,
    pseudo: np.ndarray | None,
    weights: LossWeights,
    params: AslParams = AslParams(),
) -> Tensor:
    """``lambda1 * ASL(Y1 | known labels) + lambda2 * ASL(Y0 | pseudo-labels)``.

    ``pseudo`` is a plain array, so it is a constant target. A zero weight
    drops its term from the graph.
    """
    terms = []
    if weights.lambda1 > 0:
        terms.append(masked_asl(refined_prob, observed, params) * weights.lambda1)
    if weights.lambda2 > 0 and coarse_prob is not None:
        if pseudo is None:
            raise ConfigError("the pseudo-label term needs pseudo-labels")
        y = np.asarray(observed)
        known = y != -1
        if not np.array_equal(np.asarray(pseudo)[known], y[known].astype(np.float64)):
            raise InvariantError("pseudo-labels disagree with a known label")
        terms.append(asl_soft(coarse_prob, pseudo, params) * weights.lambda2)
    if not terms:
        return ad.constant(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
