"""Pseudo-labeling and the three training objectives.

MixMatch: average predictions over K weak augmentations, sharpen,
MixUp everything against a shuffled pool, cross-entropy on the labeled
part plus squared-L2 on the unlabeled part.

FixMatch: one weak augmentation produces a hard pseudo-label; examples
whose confidence clears tau contribute cross-entropy on a strongly
augmented view, normalized by the full mu*B count, not the retained
count.

Targets are always plain arrays: gradients flow through predictions
only.
"""

from dataclasses import dataclass

import numpy as np

from . import augment as aug
from . import tensor as T
from .errors import ArgumentError, ShapeError


@dataclass
class SslConfig:
    K: int = 2
    T: float = 0.5
    alpha: float = 0.5
    tau: float = 0.95
    lambda_u: float = 1.0
    mu: int = 3

    def __post_init__(self):
        if self.K < 1:
            raise ArgumentError(f"K must be >= 1, got {self.K}")
        if self.T <= 0:
            raise ArgumentError(f"sharpening temperature must be positive, got {self.T}")
        if not 0 < self.tau <= 1:
            raise ArgumentError(f"tau must be in (0,1], got {self.tau}")
        if self.lambda_u < 0:
            raise ArgumentError(f"lambda_u must be non-negative, got {self.lambda_u}")
        if self.mu < 1:
            raise ArgumentError(f"mu must be >= 1, got {self.mu}")
        if self.alpha <= 0:
            raise ArgumentError(f"alpha must be positive, got {self.alpha}")


@dataclass
class LabeledBatch:
    images: np.ndarray          # [B,6,H,W]
    labels: np.ndarray          # [B,2] rows summing to 1


@dataclass
class UnlabeledBatch:
    images: np.ndarray          # [mu*B,6,H,W]


def one_hot(labels, num_classes=2):
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def sharpen(p, temperature):
    """p_i^(1/T) renormalized; T below 1 concentrates the distribution."""
    if temperature <= 0:
        raise ArgumentError(f"sharpening temperature must be positive, got {temperature}")
    powered = np.asarray(p) ** (1.0 / temperature)
    return powered / powered.sum(axis=-1, keepdims=True)


def guess_label(model, image, K, rng):
    """Average eval-mode prediction over K weak augmentations; no gradients."""
    views = np.stack([aug.weak_augment(image, rng.derive("guess", k)) for k in range(K)])
    return model.predict(views, train=False).mean(axis=0)


def _labeled_ce(model, images, labels):
    return T.softmax_cross_entropy(model.logits(images, train=True), labels)


def mixmatch_prepare(model, X, U, cfg, rng):
    """Augment, guess, sharpen, and MixUp into (X', U').

    The K weak copies of each unlabeled example are the same ones whose
    averaged eval-mode prediction becomes its sharpened soft target.
    """
    b = len(X.images)
    nu = len(U.images)
    if nu != cfg.mu * b:
        raise ShapeError(f"unlabeled batch must hold mu*B = {cfg.mu * b} images, got {nu}")

    x_aug = np.stack([aug.weak_augment(X.images[i], rng.derive("weak-x", i))
                      for i in range(b)])
    u_aug = np.stack([aug.weak_augment(U.images[j], rng.derive("weak-u", j, k))
                      for j in range(nu) for k in range(cfg.K)])
    preds = model.predict(u_aug, train=False).reshape(nu, cfg.K, -1)
    q = sharpen(preds.mean(axis=1), cfg.T).astype(np.float32)
    u_labels = np.repeat(q, cfg.K, axis=0)

    pool_images = np.concatenate([x_aug, u_aug])
    pool_labels = np.concatenate([X.labels, u_labels])
    perm = rng.derive("shuffle").permutation(len(pool_images))

    def mix(i):
        lam = aug.sample_mixup_lam(rng.derive("lam", i), cfg.alpha)
        return aug.apply_mixup(pool_images[i], pool_labels[i],
                               pool_images[perm[i]], pool_labels[perm[i]], lam)

    mixed = [mix(i) for i in range(len(pool_images))]
    images = np.stack([m[0] for m in mixed])
    labels = np.stack([m[1] for m in mixed])
    return (LabeledBatch(images=images[:b], labels=labels[:b]),
            LabeledBatch(images=images[b:], labels=labels[b:]))


def mixmatch_loss(model, x_prime, u_prime, cfg):
    """Returns (total, Ls, Lu) tensors for prepared MixMatch batches.

    Both branches share one train-mode forward so batch norm sees the
    labeled and unlabeled distributions together; split batches this
    small would each normalize by their own unstable statistics.
    """
    b = len(x_prime.images)
    nu = len(u_prime.images)
    logits = model.logits(np.concatenate([x_prime.images, u_prime.images]),
                          train=True)
    ls = T.softmax_cross_entropy(T.slice_rows(logits, 0, b), x_prime.labels)
    probs = T.softmax(T.slice_rows(logits, b, b + nu))
    lu = T.scale(T.squared_l2(probs, u_prime.labels), 1.0 / nu)
    total = T.add(ls, T.scale(lu, cfg.lambda_u))
    return total, ls, lu


def fixmatch_loss(model, X, U, policy, cfg, rng):
    """Returns (total, Ls, Lu, mask_rate) for one FixMatch step."""
    b = len(X.images)
    nu = len(U.images)
    if nu != cfg.mu * b:
        raise ShapeError(f"unlabeled batch must hold mu*B = {cfg.mu * b} images, got {nu}")

    xw = np.stack([aug.weak_augment(X.images[i], rng.derive("weak-x", i))
                   for i in range(b)])
    uw = np.stack([aug.weak_augment(U.images[j], rng.derive("weak-u", j))
                   for j in range(nu)])
    q = model.predict(uw, train=False)
    mask = (q.max(axis=1) >= cfg.tau)
    pseudo = one_hot(q.argmax(axis=1))

    us = np.stack([aug.strong_augment(U.images[j], policy, rng.derive("strong-u", j))
                   for j in range(nu)])
    # single forward for the same reason as mixmatch_loss: the strong
    # branch alone would drag the running stats the eval-mode
    # pseudo-label pass depends on
    logits = model.logits(np.concatenate([xw, us]), train=True)
    ls = T.softmax_cross_entropy(T.slice_rows(logits, 0, b), X.labels)
    lu = T.softmax_cross_entropy(T.slice_rows(logits, b, b + nu), pseudo,
                                 weights=mask.astype(np.float32))
    total = T.add(ls, T.scale(lu, cfg.lambda_u))
    return total, ls, lu, float(mask.mean())


def supervised_prepare(X, cfg, rng, use_mixup=True):
    """Weak augmentation plus in-batch MixUp, the MixMatch labeled branch."""
    b = len(X.images)
    x_aug = np.stack([aug.weak_augment(X.images[i], rng.derive("weak-x", i))
                      for i in range(b)])
    if not use_mixup:
        return LabeledBatch(images=x_aug, labels=X.labels.copy())
    perm = rng.derive("shuffle").permutation(b)

    images = np.empty_like(x_aug)
    labels = np.empty_like(X.labels)
    for i in range(b):
        lam = aug.sample_mixup_lam(rng.derive("lam", i), cfg.alpha)
        images[i], labels[i] = aug.apply_mixup(
            x_aug[i], X.labels[i], x_aug[perm[i]], X.labels[perm[i]], lam)
    return LabeledBatch(images=images, labels=labels)


def supervised_loss_prepared(model, batch):
    """Cross-entropy on an already prepared batch; shared with mixmatch Ls."""
    return _labeled_ce(model, batch.images, batch.labels)


def supervised_loss(model, X, cfg, rng, use_mixup=True):
    return supervised_loss_prepared(model, supervised_prepare(X, cfg, rng, use_mixup))
