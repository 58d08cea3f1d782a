"""Training loop: round-robin task sampling, patch crops, AdamW with the
polynomial schedule, per-epoch CSV logging and validation Dice.

Every source of randomness in a step is drawn from a Philox stream keyed by
(seed, step), so a run is a pure function of (model, dataset, config) and
resuming from a checkpoint at step k reproduces the original trajectory
exactly.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .config import TrainConfig
from .errors import EvaluationError, TaskError
from .infer import infer_probabilities
from .metrics import dice_metric
from .objective import LabelPair, masked_loss
from .optim import AdamW, poly_lr
from .tasks import get_task
from .model import SegModel


@dataclass
class EpochRow:
    epoch: int
    task: int
    loss_dice: float
    loss_ce: float
    val_dice_organ: float | None
    val_dice_tumor: float | None


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)  # (step, task, loss, dice, ce)
    rows: list = field(default_factory=list)
    final_val: dict = field(default_factory=dict)

    def losses(self) -> np.ndarray:
        return np.array([entry[2] for entry in self.loss_curve])


def _crop(case, patch, g):
    vol_shape = case.y.shape
    origin = [int(g.integers(0, s - p + 1)) if s > p else 0
              for s, p in zip(vol_shape, patch)]
    sl = tuple(slice(o, o + p) for o, p in zip(origin, patch))
    return case.x[(slice(None),) + sl], case.y[sl]


def _validation_dice(model, task, val_cases, window):
    organ_scores, tumor_scores = [], []
    for case in val_cases:
        probs = infer_probabilities(model, case.x, window=window)[task.id]
        if task.organ_labeled:
            organ_scores.append(dice_metric(probs[0] > 0.5, case.y >= 1))
        if task.tumor_labeled:
            tumor_scores.append(dice_metric(probs[1] > 0.5, case.y == 2))
    organ = float(np.mean(organ_scores)) if organ_scores else None
    tumor = float(np.mean(tumor_scores)) if tumor_scores else None
    return organ, tumor


def train(model: SegModel, cases: list, cfg: TrainConfig, val_cases: list | None = None,
          optimizer: AdamW | None = None, start_step: int = 0,
          log_path=None, registry=None) -> TrainResult:
    """Train in place; returns the loss curve, epoch rows, and final validation."""
    by_task: dict = {}
    for case in cases:
        if case.task_id >= model.cfg.num_tasks:
            raise TaskError(f"case task id {case.task_id} >= model num_tasks "
                            f"{model.cfg.num_tasks}")
        by_task.setdefault(case.task_id, []).append(case)
    if not by_task:
        raise TaskError("empty training set")
    task_order = sorted(by_task)
    tasks = {tid: get_task(tid, registry) for tid in task_order}

    val_by_task: dict = {}
    for case in (val_cases or []):
        val_by_task.setdefault(case.task_id, []).append(case)

    if optimizer is None:
        optimizer = AdamW(model.param_list(), cfg.weight_decay)
    result = TrainResult()
    epoch_acc: dict = {tid: [] for tid in task_order}

    for step in range(start_step, cfg.total_steps):
        tid = task_order[step % len(task_order)]
        task = tasks[tid]
        g = rngmod.stream(cfg.seed, rngmod.TRAIN_STREAM, step)
        pool = by_task[tid]
        picks = g.integers(0, len(pool), size=cfg.batch_size)

        # per-op finite guards are off in the hot path; the loss scalar is
        # checked every step and aborts with diagnostics
        with T.finite_checks(False):
            total = None
            parts = {"dice": 0.0, "ce": 0.0}
            for pick in picks:
                x_np, y_np = _crop(pool[pick], cfg.patch, g)
                labels = LabelPair.from_label_volume(
                    y_np, task.organ_labeled, task.tumor_labeled, dtype=model.dtype)
                logits = model.forward_task(model.input_tensor(x_np), tid)
                sample_parts = {}
                loss = masked_loss(logits, labels, parts_out=sample_parts)
                parts["dice"] += sample_parts["dice"] / cfg.batch_size
                parts["ce"] += sample_parts["ce"] / cfg.batch_size
                total = loss if total is None else T.add(total, loss)
            total = T.mul(total, 1.0 / cfg.batch_size)

            loss_value = total.item()
            if not np.isfinite(loss_value):
                raise EvaluationError(
                    f"non-finite loss at step {step} (task {tid}): "
                    f"dice={parts['dice']:.6g} ce={parts['ce']:.6g}")

            lr = poly_lr(step, cfg.total_steps, cfg.lr_init)
            optimizer.zero_grad()
            total.backward()
            optimizer.step(lr)

        result.loss_curve.append((step, tid, loss_value, parts["dice"], parts["ce"]))
        epoch_acc[tid].append((loss_value, parts["dice"], parts["ce"]))

        last = step == cfg.total_steps - 1
        if (step + 1) % cfg.steps_per_epoch == 0 or last:
            epoch = step // cfg.steps_per_epoch
            run_val = (cfg.val_every_epochs and
                       ((epoch + 1) % cfg.val_every_epochs == 0 or last))
            for t in task_order:
                stats = epoch_acc[t]
                mean_dice = float(np.mean([s[1] for s in stats])) if stats else float("nan")
                mean_ce = float(np.mean([s[2] for s in stats])) if stats else float("nan")
                organ = tumor = None
                if run_val and val_by_task.get(t):
                    organ, tumor = _validation_dice(model, tasks[t], val_by_task[t],
                                                    cfg.window)
                    result.final_val[t] = {"organ": organ, "tumor": tumor}
                result.rows.append(EpochRow(epoch, t, mean_dice, mean_ce, organ, tumor))
            epoch_acc = {tid: [] for tid in task_order}

    if log_path is not None:
        write_metrics_csv(log_path, result.rows)
    return result


def write_metrics_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "task", "loss_dice", "loss_ce",
                         "val_dice_organ", "val_dice_tumor"])
        for r in rows:
            writer.writerow([
                r.epoch, r.task, repr(r.loss_dice), repr(r.loss_ce),
                "" if r.val_dice_organ is None else repr(r.val_dice_organ),
                "" if r.val_dice_tumor is None else repr(r.val_dice_tumor),
            ])
