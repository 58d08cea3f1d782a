"""Joint Dice + binary cross-entropy objective with partial-label masking.

Each task supervises up to two binary channels (organ, tumor). Channels
whose annotations a task does not provide are skipped entirely: they enter
neither the loss value nor the backward graph, so their gradient is exactly
zero by construction. The smoothing term sits inside the per-voxel Dice
denominator sum (contributing N*eps); cross-entropy is mean-reduced over
voxels so the loss magnitude does not scale with patch size.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, TaskError
from .tensor import Tensor

DICE_EPS = 1e-5
PROB_CLAMP = 1e-7


@dataclass
class LabelPair:
    """Binary (2,D,W,H) targets plus the task's availability flags."""
    targets: np.ndarray
    organ_labeled: bool
    tumor_labeled: bool

    @classmethod
    def from_label_volume(cls, labels: np.ndarray, organ_labeled: bool,
                          tumor_labeled: bool, dtype=np.float64) -> "LabelPair":
        """Expand a {0,1,2} volume: organ = (label>=1), tumor = (label==2)."""
        targets = np.stack([(labels >= 1), (labels == 2)]).astype(dtype)
        return cls(targets, organ_labeled, tumor_labeled)


def masked_loss(logits: Tensor, labels: LabelPair, dice_eps: float = DICE_EPS,
                parts_out: dict | None = None) -> Tensor:
    """L = -sum over labeled channels of [dice_overlap + mean voxel log-likelihood].

    Perfect prediction on both channels approaches -2; an all-0.5
    prediction against empty targets gives +ln 2 per labeled channel.
    """
    if logits.ndim != 4 or logits.shape[0] != 2:
        raise DimensionError(f"logits must be (2,D,W,H), got {logits.shape}")
    if labels.targets.shape != logits.shape:
        raise DimensionError(f"labels {labels.targets.shape} do not match logits {logits.shape}")
    if not (labels.organ_labeled or labels.tumor_labeled):
        raise TaskError("task provides no labeled channel")

    total = None
    dice_part = 0.0
    ce_part = 0.0
    nvox = float(np.prod(logits.shape[1:]))
    for k, flag in ((0, labels.organ_labeled), (1, labels.tumor_labeled)):
        if not flag:
            continue
        lk = T.narrow(logits, 0, k, 1)
        p = T.clamp(T.sigmoid(lk), PROB_CLAMP, 1.0 - PROB_CLAMP)
        y = Tensor(labels.targets[k:k + 1])
        dice = T.div(T.mul(T.tsum(T.mul(p, y)), 2.0),
                     T.tsum(T.add(T.add(p, y), dice_eps)))
        ce = T.tmean(T.add(T.mul(y, T.tlog(p)),
                           T.mul(T.sub(1.0, y), T.tlog(T.sub(1.0, p)))))
        term = T.neg(T.add(dice, ce))
        total = term if total is None else T.add(total, term)
        if parts_out is not None:
            dice_part += -float(dice.data)
            ce_part += -float(ce.data)
    if parts_out is not None:
        parts_out["dice"] = dice_part
        parts_out["ce"] = ce_part
        parts_out["voxels"] = nvox
    return total
