"""AdamW optimization, backbone freezing, and the epoch training loop."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from vitforge import autodiff as ad
from vitforge.autodiff import cross_entropy_loss, gradients
from vitforge.data import make_batches
from vitforge.model import HEAD_NAMES, ModelParams, ViTConfig, forward
from vitforge.ops import Rng

FREEZE_MODES = ("head_only", "full")


@dataclass
class TrainPlan:
    """Everything the training loop needs beyond the data and the model."""

    epochs: int = 50
    batch_size: int = 8
    freeze_mode: str = "head_only"
    selection_metric: str = "val_accuracy"
    seed: int = 0
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.freeze_mode not in FREEZE_MODES:
            raise ValueError(f"freeze_mode must be one of {FREEZE_MODES}")
        if self.selection_metric != "val_accuracy":
            raise ValueError("only val_accuracy selection is supported")


class AdamWState:
    """First/second moments per trainable parameter plus the step counter."""

    def __init__(self, params: ModelParams, lr=2e-5, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.01):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in params.trainable_names()}
        self.v = {n: np.zeros_like(params[n]) for n in params.trainable_names()}

    @classmethod
    def from_plan(cls, params: ModelParams, plan: TrainPlan) -> "AdamWState":
        return cls(
            params,
            lr=plan.learning_rate,
            beta1=plan.beta1,
            beta2=plan.beta2,
            eps=plan.eps,
            weight_decay=plan.weight_decay,
        )


def adamw_step(params: ModelParams, grads: dict, state: AdamWState):
    """One decoupled-weight-decay Adam update, in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2; after bias correction,
    theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd * theta). The decay
    never touches the gradient path; it is applied as a multiplication by
    (1 - lr wd) so a zero-gradient step scales parameters by exactly that
    factor.
    """
    expected = set(state.m)
    got = set(grads)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ValueError(
            f"gradient keys do not match trainable parameters "
            f"(missing {missing[:3]}, extra {extra[:3]})"
        )

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    decay = 1.0 - state.lr * state.weight_decay
    for name, g in grads.items():
        g = g.astype(params[name].dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        params[name] = params[name] * decay - state.lr * (
            m_hat / (np.sqrt(v_hat) + state.eps)
        )
    return params, state


def set_freeze(params: ModelParams, mode: str) -> ModelParams:
    """head_only: train just the classification head; full: train everything."""
    if mode not in FREEZE_MODES:
        raise ValueError(f"freeze_mode must be one of {FREEZE_MODES}")
    for name in params.names():
        params.trainable[name] = (mode == "full") or name in HEAD_NAMES
    return params


@dataclass
class TrainResult:
    best_params: ModelParams
    best_epoch: int
    best_val_accuracy: float
    history: list = field(default_factory=list)  # (epoch, train_loss, val_accuracy)
    final_params: Optional[ModelParams] = None


def _accuracy(params, config, images, labels):
    logits = forward(images, params, config)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def train(
    train_images,
    train_labels,
    val_images,
    val_labels,
    params: ModelParams,
    config: ViTConfig,
    plan: TrainPlan,
    augment_fn: Optional[Callable] = None,
) -> TrainResult:
    """Run the seeded epoch loop and keep the best-validation-accuracy snapshot.

    ``train_images``/``val_images`` are sequences of C x H x W arrays (val
    images already at model resolution). When ``augment_fn`` is given it is
    applied per sample per epoch with an independent seeded stream, so the
    result cannot depend on iteration or thread order. Ties on validation
    accuracy keep the earliest epoch.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    n = len(train_images)
    if n == 0 or len(val_images) == 0:
        raise ValueError("train and validation sets must be non-empty")
    if train_labels.shape != (n,):
        raise ValueError("train labels must match train images")
    present = set(train_labels.tolist())
    missing = [c for c in range(config.num_classes) if c not in present]
    if missing:
        raise ValueError(f"training set has no samples for classes {missing}")

    root = Rng(plan.seed)
    set_freeze(params, plan.freeze_mode)
    state = AdamWState.from_plan(params, plan)
    trainable = set(params.trainable_names())

    val_batch = np.stack([np.asarray(v) for v in val_images])

    best_acc = -1.0
    best_epoch = -1
    best_params = None
    history = []

    for epoch in range(1, plan.epochs + 1):
        epoch_rng = root.child("shuffle", epoch)
        augment_seed = root.child("augment", epoch).seed
        batches = make_batches(list(range(n)), plan.batch_size, epoch_rng)

        loss_total = 0.0
        for batch in batches:
            xs = []
            for idx in batch:
                image = np.asarray(train_images[idx])
                if augment_fn is not None:
                    image = augment_fn(image, Rng(augment_seed ^ idx))
                xs.append(image)
            leaves = {
                name: (ad.param(name, params[name]) if name in trainable else params[name])
                for name in params.names()
            }
            logits = forward(np.stack(xs), leaves, config)
            loss = cross_entropy_loss(logits, train_labels[list(batch)])
            named = {name: leaves[name] for name in trainable}
            grads = gradients(loss, named)
            adamw_step(params, grads, state)
            loss_total += float(ad.value_of(loss)) * len(batch)

        train_loss = loss_total / n
        val_acc = _accuracy(params, config, val_batch, val_labels)
        history.append((epoch, train_loss, val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = params.copy()

    return TrainResult(
        best_params=best_params,
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
        history=history,
        final_params=params.copy(),
    )
