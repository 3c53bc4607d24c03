"""Synthetic multi-label patch data, label masking, and JSON-lines I/O.

Each class owns a unit-norm prototype in raw patch space. An image holds a
Poisson number of distinct classes; every present class is stamped onto one or
more patches as ``prototype + sigma * noise`` and the remaining patches carry
noise only.

Label alphabet for observed labels: ``1`` present, ``0`` absent, ``-1`` unknown.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class SyntheticSpec:
    num_images: int = 2500
    num_classes: int = 10
    patches: int = 16
    raw_dim: int = 16
    objects_per_image_mean: float = 2.9
    noise_sigma: float = 0.55
    max_patches_per_object: int = 6
    seed: int = 0

    def __post_init__(self):
        for name in ("num_images", "num_classes", "patches", "raw_dim", "max_patches_per_object"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.objects_per_image_mean > 0:
            raise ConfigError("objects_per_image_mean must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


@dataclass
class Sample:
    image_id: str
    raw_patches: np.ndarray  # P x d_raw
    full_labels: np.ndarray | None  # C, {0, 1}
    observed_labels: np.ndarray  # C, {-1, 0, 1}


@dataclass
class Dataset:
    """Column-oriented collection of samples sharing ``P``, ``d_raw`` and ``C``."""

    ids: list[str]
    patches: np.ndarray  # N x P x d_raw
    observed: np.ndarray  # N x C, int8
    full: np.ndarray | None = None  # N x C, int8
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            self.ids[i],
            self.patches[i],
            None if self.full is None else self.full[i],
            self.observed[i],
        )

    @property
    def num_classes(self) -> int:
        return self.observed.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            [self.ids[i] for i in index],
            self.patches[index],
            self.observed[index],
            None if self.full is None else self.full[index],
            dict(self.meta),
        )

    def split_holdout(self, n_test: int) -> tuple["Dataset", "Dataset"]:
        """Last ``n_test`` images become the held-out split."""
        n = len(self)
        if not 0 < n_test < n:
            raise ConfigError(f"holdout size {n_test} invalid for {n} images")
        return self.subset(range(n - n_test)), self.subset(range(n - n_test, n))


def class_prototypes(num_classes: int, raw_dim: int, rng: np.random.Generator) -> np.ndarray:
    protos = rng.standard_normal((num_classes, raw_dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a fully labelled dataset; observed labels start equal to the full labels."""
    rng = np.random.default_rng(spec.seed)
    C, P, D = spec.num_classes, spec.patches, spec.raw_dim
    protos = class_prototypes(C, D, rng)
    patches = spec.noise_sigma * rng.standard_normal((spec.num_images, P, D))
    full = np.zeros((spec.num_images, C), dtype=np.int8)
    for i in range(spec.num_images):
        # every present class needs at least one patch of its own
        k = min(int(rng.poisson(spec.objects_per_image_mean)), C, P)
        if k == 0:
            continue
        classes = rng.choice(C, size=k, replace=False)
        free = list(rng.permutation(P))
        for j, c in enumerate(classes):
            spare = len(free) - (k - j - 1)
            n = int(rng.integers(1, min(spec.max_patches_per_object, spare) + 1))
            for _ in range(n):
                patches[i, free.pop()] += protos[c]
            full[i, c] = 1
    ids = [f"img{i:06d}" for i in range(spec.num_images)]
    meta = {"synthetic": asdict(spec)}
    return Dataset(ids, patches, full.copy(), full, meta)


MASK_STRATEGIES = ("pair", "image", "global")


def mask_labels(dataset: Dataset, p: float, seed: int, strategy: str = "pair") -> Dataset:
    """Hide labels so that a fraction ``p`` of (image, class) pairs stays known.

    ``pair`` keeps each pair independently with probability ``p``; ``image``
    keeps exactly ``round(p * C)`` (at least one) classes per image; ``global``
    keeps exactly ``round(p * N * C)`` pairs chosen uniformly.
    """
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"known-label ratio must lie in (0, 1], got {p}")
    if dataset.full is None:
        raise DataError("masking needs full ground-truth labels")
    rng = np.random.default_rng(seed)
    N, C = dataset.full.shape
    if strategy == "pair":
        keep = rng.random((N, C)) < p
    elif strategy == "image":
        k = max(1, int(round(p * C)))
        keep = np.zeros((N, C), dtype=bool)
        for i in range(N):
            keep[i, rng.choice(C, size=k, replace=False)] = True
    elif strategy == "global":
        keep = np.zeros(N * C, dtype=bool)
        keep[rng.choice(N * C, size=int(round(p * N * C)), replace=False)] = True
        keep = keep.reshape(N, C)
    else:
        raise ConfigError(f"unknown masking strategy {strategy!r}; expected one of {MASK_STRATEGIES}")
    observed = np.where(keep, dataset.full, -1).astype(np.int8)
    meta = dict(dataset.meta, mask={"p": p, "seed": seed, "strategy": strategy})
    return replace(dataset, observed=observed, meta=meta)


# ---------------------------------------------------------------------------
# JSON-lines I/O


def _check_labels(values, allowed, lineno: int, field_name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1 or (arr.size and not np.issubdtype(arr.dtype, np.number)):
        raise DataError(f"line {lineno}: {field_name} must be a flat numeric array")
    for c, v in enumerate(arr.tolist()):
        if v not in allowed:
            raise DataError(f"line {lineno}: {field_name} value {v!r} at class index {c} not in {sorted(allowed)}")
    return arr.astype(np.int8)


def write_dataset(dataset: Dataset, path: str | os.PathLike, manifest: bool = True) -> None:
    """Write one JSON object per image, plus ``<path>.manifest.json`` with masking metadata."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for i, img in enumerate(dataset.ids):
            rec = {"id": img, "patches": dataset.patches[i].tolist()}
            if dataset.full is not None:
                rec["labels_full"] = dataset.full[i].tolist()
            rec["labels_observed"] = dataset.observed[i].tolist()
            fh.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)
    if manifest:
        with open(f"{path}.manifest.json", "w") as fh:
            json.dump(dataset.meta, fh, indent=2, sort_keys=True)


def read_dataset(path: str | os.PathLike) -> Dataset:
    ids, patches, observed, full = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                img, pat, obs = rec["id"], rec["patches"], rec["labels_observed"]
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise DataError(f"{path}: line {lineno}: malformed record ({err})") from None
            pat = np.asarray(pat, dtype=np.float64)
            if pat.ndim != 2:
                raise DataError(f"line {lineno}: patches must be a P x d_raw array")
            ids.append(str(img))
            patches.append(pat)
            observed.append(_check_labels(obs, {-1, 0, 1}, lineno, "labels_observed"))
            if "labels_full" in rec:
                full.append(_check_labels(rec["labels_full"], {0, 1}, lineno, "labels_full"))
                if full[-1].shape != observed[-1].shape:
                    raise DataError(f"line {lineno}: labels_full and labels_observed differ in length")
                clash = (observed[-1] != -1) & (observed[-1] != full[-1])
                if clash.any():
                    c = int(np.argmax(clash))
                    raise DataError(f"line {lineno}: observed label contradicts full label at class index {c}")
    meta = {}
    side = f"{path}.manifest.json"
    if os.path.exists(side):
        with open(side) as fh:
            meta = json.load(fh)
    if not ids:
        return Dataset([], np.zeros((0, 1, 1)), np.zeros((0, 1), dtype=np.int8), None, meta)
    if full and len(full) != len(ids):
        raise DataError(f"{path}: labels_full present on some lines but not others")
    try:
        return Dataset(
            ids,
            np.stack(patches),
            np.stack(observed),
            np.stack(full) if full else None,
            meta,
        )
    except ValueError as err:
        raise DataError(f"{path}: inconsistent shapes across lines ({err})") from None
