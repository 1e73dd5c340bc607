"""Training harness, box-metric aggregation, and the statistical tests.

Each network instance regresses one normalized boundary pair with an MSE
loss; training is plain minibatch Adam with horizontal-flip copies and
random cyclic shifts as augmentation.  Significance machinery: two-sample
t-test (pooled or Welch) and binomial proportion confidence intervals
(Wilson score or normal approximation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from . import data as data_mod
from . import models
from .errors import DataError, NumericError
from .geometry import Box, Interval, boundary_error, iou


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    widths: tuple = (16, 32, 64)
    attn_hidden: int = 8


def _targets(record, axis: str) -> np.ndarray:
    h, w = record.height, record.width
    if axis == models.AXIS_TB:
        return np.array([record.label.top / h, record.label.bottom / h], dtype=np.float64)
    if axis == models.AXIS_LR:
        return np.array([record.label.left / w, record.label.right / w], dtype=np.float64)
    raise NumericError(f"unknown axis {axis!r}")


def _loss_for(record, mw, axis, mode):
    x = models.normalize_stack(record.slices)
    out = models.forward(x, mw, mode=mode)
    return ad.mse_loss(out, _targets(record, axis).astype(out.data.dtype))


def recalibrate_stats(mw, records, max_stacks: int = 64):
    """Replace batch-norm running statistics by the exact average of batch
    statistics over (a sample of) the training stacks.

    Useful when weights will be run with running-statistics normalization;
    per-stack batches are small, so the momentum-smoothed estimates
    accumulated during training are noisy.
    """
    for name, arr in mw.stats.items():
        arr.fill(0.0 if name.endswith("mean") else 1.0)
    saved = mw.bn_momentum
    try:
        for k, rec in enumerate(records[:max_stacks]):
            mw.bn_momentum = k / (k + 1.0)
            models.forward(models.normalize_stack(rec.slices), mw, mode="train")
    finally:
        mw.bn_momentum = saved
    return mw


def train(kind: str, axis: str, records, config: TrainConfig = TrainConfig()):
    """Train one boundary-pair instance; returns (best weights, history).

    The best weights are those with the lowest validation loss (training
    loss when the validation split is empty).  Deterministic given the
    config seed.
    """
    train_recs = data_mod.split_records(records, "train")
    if not train_recs:
        raise DataError("empty train split")
    val_recs = data_mod.split_records(records, "val")
    if config.augment:
        train_recs = train_recs + [data_mod.augment_flip(r) for r in train_recs]

    size = train_recs[0].height
    arch = models.ArchitectureConfig(
        kind, image_size=size,
        max_slices=max(r.slices.shape[0] for r in records),
        widths=config.widths, attn_hidden=config.attn_hidden)
    mw = models.build_weights(arch, seed=config.seed)
    opt = ad.Adam(mw.params, lr=config.lr, beta1=config.beta1,
                  beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    shifts_x, shifts_y = data_mod.shift_sets(size)

    def val_loss(weights):
        recs = val_recs if val_recs else train_recs
        total = 0.0
        for r in recs:
            total += float(_loss_for(r, weights, axis, "infer").data)
        return total / len(recs)

    best = mw.clone()
    best_val = math.inf
    history = []
    n = len(train_recs)
    for epoch in range(config.epochs):
        if config.epochs > 1:
            # cosine decay to 5% of the base learning rate
            frac = epoch / (config.epochs - 1)
            opt.lr = config.lr * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * frac)))
        order = rng.permutation(n)
        epoch_loss = 0.0
        pending = 0
        for pos, idx in enumerate(order):
            rec = train_recs[idx]
            if config.augment:
                dx = int(rng.choice(shifts_x))
                dy = int(rng.choice(shifts_y))
                rec, _ = data_mod.augment_cyclic_shift(rec, dx, dy)
            loss = _loss_for(rec, mw, axis, "train")
            loss.backward()
            epoch_loss += float(loss.data)
            pending += 1
            if pending == config.batch_size or pos == n - 1:
                for p in mw.params.values():
                    if p.grad is not None:
                        p.grad /= pending
                opt.step()
                opt.zero_grad()
                pending = 0
        vloss = val_loss(mw)
        history.append({"epoch": epoch, "train_loss": epoch_loss / n, "val_loss": vloss})
        if vloss < best_val:
            best_val = vloss
            best = mw.clone()
    return best, history


@dataclass
class MetricsTable:
    case_ids: list
    ious: list
    boundary_errors: list

    @property
    def iou_mean(self) -> float:
        return float(np.mean(self.ious))

    @property
    def iou_std(self) -> float:
        return float(np.std(self.ious, ddof=1)) if len(self.ious) > 1 else 0.0

    @property
    def boundary_error_mean(self) -> float:
        return float(np.mean(self.boundary_errors))

    @property
    def boundary_error_std(self) -> float:
        return float(np.std(self.boundary_errors, ddof=1)) if len(self.boundary_errors) > 1 else 0.0

    def summary(self) -> dict:
        return {
            "cases": len(self.case_ids),
            "iou_mean": self.iou_mean,
            "iou_std": self.iou_std,
            "boundary_error_mean": self.boundary_error_mean,
            "boundary_error_std": self.boundary_error_std,
        }

    def to_csv(self) -> str:
        lines = ["case,iou,boundary_error"]
        for cid, i, e in zip(self.case_ids, self.ious, self.boundary_errors):
            lines.append(f"{cid},{i!r},{e!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv(text: str) -> "MetricsTable":
        rows = [ln for ln in text.strip().splitlines()[1:] if ln]
        ids, ious, errs = [], [], []
        for row in rows:
            cid, i, e = row.split(",")
            ids.append(cid)
            ious.append(float(i))
            errs.append(float(e))
        return MetricsTable(ids, ious, errs)


def evaluate(weights_lr, weights_tb, records) -> MetricsTable:
    """Predict a box per case and compare with its label."""
    if not records:
        raise DataError("empty split")
    table = MetricsTable([], [], [])
    for rec in records:
        box, _ = models.predict_roi(rec.slices, weights_lr, weights_tb)
        table.case_ids.append(rec.stack_id)
        table.ious.append(iou(box, rec.label))
        table.boundary_errors.append(boundary_error(box, rec.label))
    return table


@dataclass(frozen=True)
class TestResult:
    t: float
    df: float
    p: float


POOLED = "pooled"
WELCH = "welch"


def t_test(sample_a, sample_b, variant: str = POOLED) -> TestResult:
    """Two-tailed two-sample t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise NumericError("each sample needs at least two values")
    na, nb = a.size, b.size
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if variant == POOLED:
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1 / na + 1 / nb))
    elif variant == WELCH:
        se = math.sqrt(va / na + vb / nb)
        df = (va / na + vb / nb) ** 2 / (
            (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    else:
        raise NumericError(f"unknown t-test variant {variant!r}")
    if se == 0.0:
        return TestResult(0.0, float(df), 1.0)
    t = float((a.mean() - b.mean()) / se)
    # survival via the regularized incomplete beta (Student t CDF)
    p = float(2.0 * special.stdtr(df, -abs(t)))
    return TestResult(t, float(df), p)


WILSON = "wilson"
NORMAL = "normal"


def proportion_ci(successes: int, trials: int, level: float, method: str = WILSON) -> Interval:
    """Two-sided confidence interval for a binomial proportion."""
    if trials < 1 or successes < 0 or successes > trials:
        raise NumericError(f"invalid counts k={successes}, n={trials}")
    if not 0.0 < level < 1.0:
        raise NumericError(f"confidence level must be in (0, 1), got {level}")
    z = float(special.ndtri(1.0 - (1.0 - level) / 2.0))
    p_hat = successes / trials
    if method == WILSON:
        denom = 1.0 + z * z / trials
        center = (p_hat + z * z / (2 * trials)) / denom
        half = z * math.sqrt(p_hat * (1 - p_hat) / trials + z * z / (4 * trials * trials)) / denom
        lo, hi = center - half, center + half
    elif method == NORMAL:
        half = z * math.sqrt(p_hat * (1 - p_hat) / trials)
        lo, hi = p_hat - half, p_hat + half
    else:
        raise NumericError(f"unknown interval method {method!r}")
    return Interval(max(0.0, lo), min(1.0, hi))
