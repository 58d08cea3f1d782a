"""Loss tests: closed-form values, partial-label masking, gradient checks."""

import numpy as np
import pytest

from dynaseg import tensor as T
from dynaseg.errors import TaskError
from dynaseg.objective import LabelPair, masked_loss
from dynaseg.tensor import Tensor


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=[seed, 0]))


def make_labels(seed=0, shape=(4, 6, 6), organ=True, tumor=True, frac=0.3):
    g = rng(seed)
    vol = np.zeros(shape, dtype=np.int64)
    organ_mask = g.uniform(size=shape) < frac
    vol[organ_mask] = 1
    tumor_mask = organ_mask & (g.uniform(size=shape) < 0.4)
    vol[tumor_mask] = 2
    return LabelPair.from_label_volume(vol, organ, tumor)


def test_perfect_prediction_approaches_minus_two():
    labels = make_labels(1)
    logits = Tensor(np.where(labels.targets > 0.5, 20.0, -20.0))
    loss = masked_loss(logits, labels)
    assert abs(loss.item() - (-2.0)) < 1e-3


def test_half_probability_empty_target_single_channel():
    shape = (3, 4, 4)
    labels = LabelPair(np.zeros((2,) + shape), organ_labeled=False, tumor_labeled=True)
    logits = Tensor(np.zeros((2,) + shape))
    loss = masked_loss(logits, labels)
    assert abs(loss.item() - np.log(2.0)) < 1e-9


def test_unlabeled_channel_gradient_exactly_zero():
    labels = make_labels(2, organ=False, tumor=True)
    logits = Tensor(rng(3).normal(size=labels.targets.shape), requires_grad=True)
    masked_loss(logits, labels).backward()
    assert np.all(logits.grad[0] == 0.0)
    assert np.any(logits.grad[1] != 0.0)


def test_loss_invariant_to_unlabeled_channel_content():
    labels = make_labels(4, organ=True, tumor=False)
    g = rng(5)
    base = g.normal(size=labels.targets.shape)
    other = base.copy()
    other[1] = g.normal(size=labels.targets.shape[1:]) * 50.0
    l1 = masked_loss(Tensor(base), labels).item()
    l2 = masked_loss(Tensor(other), labels).item()
    assert l1 == l2


def test_no_labeled_channel_is_an_error():
    labels = LabelPair(np.zeros((2, 2, 2, 2)), organ_labeled=False, tumor_labeled=False)
    with pytest.raises(TaskError):
        masked_loss(Tensor(np.zeros((2, 2, 2, 2))), labels)


def test_gradient_through_sigmoid():
    labels = make_labels(6)
    logits = Tensor(rng(7).normal(size=labels.targets.shape), requires_grad=True)

    def f():
        return masked_loss(logits, labels)

    assert T.grad_check(f, [logits], samples=60, rng=rng(8)) < 1e-4


def test_dice_term_monotone_in_overlap():
    # fixed-size prediction and target; shrinking the overlap increases the loss
    shape = (1, 1, 16)
    y = np.zeros((2,) + shape)
    y[0, 0, 0, :8] = 1.0
    labels = LabelPair(y, organ_labeled=True, tumor_labeled=False)
    losses = []
    for shift in range(5):
        logits = np.full((2,) + shape, -20.0)
        logits[0, 0, 0, shift:shift + 8] = 20.0
        losses.append(masked_loss(Tensor(logits), labels).item())
    assert all(b > a for a, b in zip(losses, losses[1:]))


def test_parts_accounting():
    labels = make_labels(9)
    parts = {}
    loss = masked_loss(Tensor(rng(10).normal(size=labels.targets.shape)), labels,
                       parts_out=parts)
    assert abs((parts["dice"] + parts["ce"]) - loss.item()) < 1e-12
