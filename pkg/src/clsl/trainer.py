"""Collaborative training loop, AdamW, weight EMA, inference and experiment driver."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import RunConfig
from .data import Dataset, generate, mask_labels
from .errors import DataError, NumericError
from .evaluation import RecoveryQuality, mean_average_precision, per_class_ap, recovery_quality, write_ap_csv
from .loss import total_loss
from .model import Model
from .recovery import fill_pseudo
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay, updating parameter values in place."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, t in self.params.items():
            g = t.grad
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * t.value
            t.value -= self.lr * update


class Ema:
    """Exponential moving average of parameter values.

    With ``warmup`` the effective decay is ``min(decay, (1 + n) / (10 + n))``
    after ``n`` previous updates, so short runs are not dominated by the
    initial weights.
    """

    def __init__(self, params: dict[str, Tensor], decay: float = 0.9997, warmup: bool = True):
        self.decay = decay
        self.warmup = warmup
        self.updates = 0
        self.shadow = {k: t.value.copy() for k, t in params.items()}

    def current_decay(self) -> float:
        if not self.warmup:
            return self.decay
        n = self.updates
        return min(self.decay, (1.0 + n) / (10.0 + n))

    def update(self, params: dict[str, Tensor]) -> None:
        d = self.current_decay()
        for k, t in params.items():
            s = self.shadow[k]
            s *= d
            s += (1.0 - d) * t.value
        self.updates += 1


def _check_finite(step: int, loss: Tensor, params: dict[str, Tensor]) -> None:
    if not np.all(np.isfinite(loss.value)):
        raise NumericError(f"step {step}: non-finite loss")
    for k, t in params.items():
        if not np.all(np.isfinite(t.grad)):
            raise NumericError(f"step {step}: non-finite gradient in {k}")


def batch_loss(model: Model, raw: np.ndarray, observed: np.ndarray, pseudo: np.ndarray | None = None) -> Tensor:
    """Forward graph and objective for one batch; records onto the active tape if any.

    ``pseudo`` overrides the recovered targets, e.g. to hold them fixed while
    a finite-difference check perturbs the parameters.
    """
    cfg = model.cfg
    out = model.forward(raw)
    coarse_prob = None
    if cfg.collab and cfg.lambda2 > 0:
        if pseudo is None:
            # detached: the fill is built from plain values, not from the graph
            pseudo = fill_pseudo(observed, out.refined_prob.value)
        coarse_prob = ad.sigmoid(out.coarse)
    return total_loss(out.refined_prob, coarse_prob, observed, pseudo, cfg.loss_weights(), cfg.asl())


def loss_gradcheck(model: Model, raw: np.ndarray, observed: np.ndarray, h: float = 1e-5, tol: float = 1e-4):
    """Finite-difference check of the whole objective against every parameter.

    Recovered targets are computed once at the unperturbed point and then held
    fixed, matching the detached fill the analytic gradient assumes.
    """
    pseudo = None
    if model.cfg.collab and model.cfg.lambda2 > 0:
        pseudo = fill_pseudo(observed, model.forward(raw).refined_prob.value)
    params = list(model.parameters().values())
    return ad.gradcheck(lambda *_: batch_loss(model, raw, observed, pseudo), params, h=h, tol=tol)


def train_step(model: Model, raw: np.ndarray, observed: np.ndarray, opt: AdamW, ema: Ema) -> float:
    """One optimisation step on a batch; returns the batch loss before the update."""
    if len(raw) == 0:
        raise DataError("empty batch")
    params = model.parameters()
    try:
        with Tape() as tape:
            loss = batch_loss(model, raw, observed)
            tape.backward(loss)
    except NumericError as err:
        raise NumericError(f"step {opt.step_count}: {err}") from None
    _check_finite(opt.step_count, loss, params)
    opt.step()
    ema.update(params)
    tape.reset()
    for t in params.values():
        t.zero_grad()
    return float(loss.value)


def infer(model: Model, raw_patches, ema_state: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Refined-head probabilities. Only the refined head is used; labels are never read."""
    raw = np.asarray(raw_patches, dtype=np.float64)
    single = raw.ndim == 2
    if single:
        raw = raw[None]
    if ema_state is None:
        prob = model.predict_proba(raw)
    else:
        with model.swapped(ema_state):
            prob = model.predict_proba(raw)
    return prob[0] if single else prob


def dataset_objective(model: Model, dataset: Dataset, batch_size: int = 256) -> float:
    """Training objective over a whole dataset, batch-mean weighted by batch size."""
    total = 0.0
    for i in range(0, len(dataset), batch_size):
        raw = dataset.patches[i : i + batch_size]
        total += float(batch_loss(model, raw, dataset.observed[i : i + batch_size]).value) * len(raw)
    return total / len(dataset)


def evaluate(prob: np.ndarray, dataset: Dataset) -> tuple[list[float | None], float]:
    labels = dataset.full if dataset.full is not None else dataset.observed
    if np.any(labels == -1):
        raise DataError("evaluation split has unknown labels and no full labels")
    aps = per_class_ap(prob, labels, dataset.ids)
    return aps, mean_average_precision(aps)


@dataclass
class ExperimentReport:
    config: RunConfig
    map: float
    per_class_ap: list[float | None]
    recovery: RecoveryQuality
    history: list[dict] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    model: Model | None = None
    ema_state: dict[str, np.ndarray] | None = None
    train: Dataset | None = None
    test: Dataset | None = None

    def eval_state(self):
        return self.ema_state if self.config.eval_with_ema else None


METRIC_COLUMNS = ("epoch", "split", "map", "loss", "recovery_auc")


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(x)


def write_metrics_csv(path: str | os.PathLike, rows: list[dict]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"], r["split"]] + [_fmt(r.get(k)) for k in METRIC_COLUMNS[2:]])
    os.replace(tmp, path)


def prepare_splits(cfg: RunConfig, dataset: Dataset, remask: bool = True) -> tuple[Dataset, Dataset]:
    """Hold out the last ``n_test`` images and, if asked, re-mask the training labels."""
    train, test = dataset.split_holdout(cfg.n_test)
    if remask:
        train = mask_labels(train, cfg.p, derive_seed(cfg.seed, "mask", cfg.p), cfg.mask_strategy)
    return train, test


def run_experiment(
    cfg: RunConfig,
    dataset: Dataset | None = None,
    remask: bool = True,
    out_dir: str | os.PathLike | None = None,
) -> ExperimentReport:
    """Train on the masked training split and report test mAP and recovery quality.

    Without a dataset, one is generated from ``cfg``. Evaluation uses EMA
    weights unless ``cfg.eval_with_ema`` is off.
    """
    if dataset is None:
        dataset = generate(cfg.synthetic_spec())
    train, test = prepare_splits(cfg, dataset, remask)
    model = Model(cfg)
    params = model.parameters()
    opt = AdamW(params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps)
    ema = Ema(params, cfg.ema_decay, cfg.ema_warmup)
    shuffle = rng_for(cfg.seed, "shuffle")
    history: list[dict] = []

    def eval_rows(epoch: int, loss: float):
        state = ema.shadow if cfg.eval_with_ema else None
        prob_test = infer(model, test.patches, state)
        aps, m = evaluate(prob_test, test)
        prob_train = infer(model, train.patches, state)
        rec = recovery_quality(fill_pseudo(train.observed, prob_train), train.full, train.observed)
        history.append({"epoch": epoch, "split": "train", "loss": loss})
        history.append({"epoch": epoch, "split": "test", "map": m, "recovery_auc": rec.auc})
        return aps, m, rec

    initial = dataset_objective(model, train, cfg.batch_size)
    aps, m, rec = eval_rows(0, initial)
    epoch_loss = initial
    n = len(train)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            total += train_step(model, train.patches[idx], train.observed[idx], opt, ema) * len(idx)
        epoch_loss = total / n
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            aps, m, rec = eval_rows(epoch, epoch_loss)
        else:
            history.append({"epoch": epoch, "split": "train", "loss": epoch_loss})
        log.info("epoch %d loss %.5f", epoch, epoch_loss)

    report = ExperimentReport(cfg, m, aps, rec, history, initial, epoch_loss, model, ema.shadow, train, test)
    if out_dir is not None:
        write_run_outputs(report, out_dir)
    return report


def write_run_outputs(report: ExperimentReport, out_dir: str | os.PathLike) -> None:
    os.makedirs(out_dir, exist_ok=True)
    report.config.write_json(os.path.join(out_dir, "config.resolved.json"))
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), report.history)
    labels = report.test.full if report.test.full is not None else report.test.observed
    write_ap_csv(os.path.join(out_dir, "per_class_ap.csv"), report.per_class_ap, labels)
    report.model.save(os.path.join(out_dir, "model.params"))
    if report.ema_state is not None:
        with report.model.swapped(report.ema_state):
            report.model.save(os.path.join(out_dir, "model.ema.params"))
