"""The assembled network: encoders, semantic features, enhancement and heads."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_tensors, save_tensors
from .config import RunConfig
from .encoders import LabelEmbeddingTable, PatchEncoderParams, embed_labels, encode_image
from .errors import DataError
from .recovery import (
    ClassifierParams,
    PredictionBundle,
    aggregate,
    coarse_scores,
    location_scores,
    max_pool,
)
from .seeding import rng_for
from .sgfe import SgfeParams, attention_logits, attention_weights, enhance
from .srfl import SrflParams, fuse, global_pool


class Model:
    """Parameters for the components enabled in ``cfg`` plus the forward graph.

    Each component draws its initial weights from its own seeded stream, so two
    configurations that differ only in a toggle start from identical weights
    for everything they share.
    """

    def __init__(self, cfg: RunConfig, seed: int | None = None):
        self.cfg = cfg
        base = cfg.seed if seed is None else seed
        self.encoder = PatchEncoderParams.init(cfg.d_raw, cfg.d_v, rng_for(base, "init", "encoder"))
        self.labels = self.srfl = self.sgfe = None
        if cfg.sgfe:
            self.labels = LabelEmbeddingTable.init(cfg.num_classes, cfg.d_t, rng_for(base, "init", "labels"))
            self.srfl = SrflParams.init(cfg.d_v, cfg.d_t, rng_for(base, "init", "srfl"))
            self.sgfe = SgfeParams.init(cfg.d_v, cfg.d_1, cfg.d_2, rng_for(base, "init", "sgfe"), cfg.temperature)
        self.heads = ClassifierParams.init(cfg.d_v, cfg.num_classes, rng_for(base, "init", "heads"), enhanced=cfg.sgfe)
        if not cfg.collab:
            # the coarse head only exists to be supervised by pseudo-labels
            self.heads.cls0 = None

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for group in (self.encoder, self.labels, self.srfl, self.sgfe, self.heads):
            if group is not None:
                out.update(group.tensors())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.parameters().items()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(values))
        if missing:
            raise DataError(f"checkpoint lacks parameters: {', '.join(missing)}")
        for k, t in params.items():
            if values[k].shape != t.shape:
                raise DataError(f"parameter {k}: checkpoint shape {values[k].shape} != {t.shape}")
            t.value[...] = values[k]

    @contextmanager
    def swapped(self, values: dict[str, np.ndarray]):
        """Temporarily run with other parameter values (e.g. EMA shadows)."""
        saved = self.state()
        self.load_state(values)
        try:
            yield self
        finally:
            self.load_state(saved)

    def forward(self, raw_patches) -> PredictionBundle:
        cfg = self.cfg
        feats = encode_image(raw_patches, self.encoder, self_attn=cfg.self_attn)
        attn = weights = None
        if cfg.sgfe:
            label_emb = embed_labels(self.labels)
            pooled = global_pool(feats) if cfg.srfl else None
            semantics = fuse(pooled, label_emb, self.srfl)
            attn = attention_logits(feats, semantics, self.sgfe)
            weights = attention_weights(attn, self.sgfe.temperature)
            enhanced = enhance(feats, semantics, weights)
        else:
            enhanced = feats
        scores = location_scores(enhanced, self.heads.cls1)
        refined = aggregate(scores) if cfg.region else max_pool(scores)
        coarse = coarse_scores(feats, self.heads.cls0) if cfg.collab else None
        return PredictionBundle(scores, refined, coarse, ad.sigmoid(refined), attn, weights)

    def predict_proba(self, raw_patches, batch_size: int = 256) -> np.ndarray:
        """Refined-head probabilities for ``[N, P, d_raw]`` input (no tape)."""
        raw = np.asarray(raw_patches, dtype=np.float64)
        if raw.shape[0] == 0:
            return np.zeros((0, self.cfg.num_classes))
        out = [self.forward(raw[i : i + batch_size]).refined_prob.value for i in range(0, len(raw), batch_size)]
        return np.concatenate(out)

    def save(self, path, extra: dict | None = None) -> None:
        header = {"config": self.cfg.to_dict()}
        header.update(extra or {})
        save_tensors(path, self.state(), header)

    @classmethod
    def load(cls, path) -> "Model":
        values, header = load_tensors(path)
        if "config" not in header:
            raise DataError(f"{path}: checkpoint carries no model config")
        model = cls(RunConfig.from_dict(header["config"]))
        model.load_state(values)
        return model
