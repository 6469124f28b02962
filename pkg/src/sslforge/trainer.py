"""Momentum SGD training loop with cosine decay and EMA evaluation.

One step: sample B labeled (plus mu*B unlabeled for the SSL methods)
with replacement from seed-derived streams, compute the method's loss,
apply the optimizer, fold parameters into the EMA shadow. Evaluation
always scores the shadow weights against the live BN running buffers.

Every random decision derives from (run seed, purpose, step, index), so
reruns are bit-identical and step order never matters.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from . import semisup as S
from . import tensor as T
from .augment import AugPolicy
from .errors import ArgumentError, ConfigError, NumericError, ShapeError
from .rng import RngStream

METHODS = ("supervised", "mixmatch", "fixmatch")


@dataclass
class TrainConfig:
    method: str
    total_steps: int
    batch_size: int = 64
    lr: float = None
    weight_decay: float = None
    momentum: float = 0.9
    ema_decay: float = 0.999
    ssl: S.SslConfig = field(default_factory=S.SslConfig)
    aug_policy: AugPolicy = field(default_factory=AugPolicy)
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    seed: int = 0
    supervised_mixup: bool = True
    lambda_ramp_frac: float = 0.25
    eval_batch: int = 128
    debug_checks: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        # FixMatch ran hotter in the source protocol; the other two share a setting
        if self.lr is None:
            self.lr = 0.03 if self.method == "fixmatch" else 0.002
        if self.weight_decay is None:
            self.weight_decay = 0.0005 if self.method == "fixmatch" else 0.002
        if self.total_steps < 0 or self.batch_size < 1:
            raise ConfigError("total_steps must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError(f"ema_decay must be in [0,1), got {self.ema_decay}")
        if not 0 <= self.lambda_ramp_frac <= 1:
            raise ConfigError(f"lambda_ramp_frac must be in [0,1], got {self.lambda_ramp_frac}")


@dataclass
class OptState:
    velocity: dict
    step: int = 0


@dataclass
class EmaState:
    shadow: dict

    @classmethod
    def from_model(cls, model):
        return cls(shadow={n: p.data.copy() for n, p in model.params.items()})


@dataclass
class TrainResult:
    model: object
    ema: EmaState
    metrics_lines: list
    test_accuracy: float


def cosine_lr(step, total_steps, base_lr):
    """Half-cosine from base_lr at step 0 toward 0 at total_steps."""
    if not 0 <= step < total_steps:
        raise ArgumentError(f"step {step} outside [0, {total_steps})")
    return base_lr * math.cos(math.pi / 2 * step / total_steps)


def _decayed(name):
    # BN affine parameters are exempt from weight decay
    return not (name.endswith(".gamma") or name.endswith(".beta"))


def sgd_step(params, grads, opt, lr, momentum, weight_decay):
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter has {p.data.shape}")
        if weight_decay and _decayed(name):
            g = g + weight_decay * p.data
        v = opt.velocity[name]
        v *= momentum
        v += g
        p.data -= lr * v
    opt.step += 1


def ema_update(ema, model, decay):
    for name, p in model.params.items():
        s = ema.shadow[name]
        if s.shape != p.data.shape:
            raise ShapeError(f"EMA shadow for {name} has shape {s.shape}, "
                             f"parameter has {p.data.shape}")
        s *= decay
        s += (1.0 - decay) * p.data


def evaluate(model, examples, batch_size=128):
    """Accuracy of argmax predictions over labeled examples."""
    if not examples:
        raise ArgumentError("cannot evaluate on an empty example list")
    correct = 0
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        images = np.stack([ex.image for ex in chunk])
        pred = model.predict(images, train=False).argmax(axis=1)
        correct += sum(int(p == ex.label) for p, ex in zip(pred, chunk))
    return correct / len(examples)


def _collect_grads(model):
    grads = {}
    for name, p in model.params.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return grads


def train(config, data, metrics_path=None):
    """Run the configured method over a SplitDataset; see TrainResult."""
    if not data.labeled:
        raise ConfigError("training requires a non-empty labeled set")
    needs_unlabeled = config.method in ("mixmatch", "fixmatch")
    if needs_unlabeled and not data.unlabeled:
        raise ConfigError(f"{config.method} requires a non-empty unlabeled set")

    root = RngStream(config.seed)
    model_cfg = replace(config.model,
                        seed=root.derive_seed("model-init", config.model.seed))
    model = M.build(model_cfg)
    opt = OptState(velocity={n: np.zeros_like(p.data) for n, p in model.params.items()})
    ema = EmaState.from_model(model)

    lab_images = np.stack([ex.image for ex in data.labeled])
    lab_onehot = S.one_hot([ex.label for ex in data.labeled])
    unl_images = None
    if needs_unlabeled:
        unl_images = np.stack([ex.image for ex in data.unlabeled])

    b = config.batch_size
    mu_b = config.ssl.mu * b
    ramp_steps = int(config.lambda_ramp_frac * config.total_steps)
    lines = []
    fh = open(metrics_path, "w") if metrics_path else None
    try:
        for step in range(config.total_steps):
            srng = root.derive("step", step)
            lr = cosine_lr(step, config.total_steps, config.lr)
            idx = srng.derive("sample-x").integer_array(0, len(lab_images), b)
            X = S.LabeledBatch(images=lab_images[idx], labels=lab_onehot[idx])

            if config.method == "supervised":
                total = S.supervised_loss(model, X, config.ssl, srng.derive("loss"),
                                          use_mixup=config.supervised_mixup)
                ls_v, lu_v, mask = float(total.data), 0.0, 0.0
            elif config.method == "mixmatch":
                uidx = srng.derive("sample-u").integer_array(0, len(unl_images), mu_b)
                U = S.UnlabeledBatch(images=unl_images[uidx])
                xp, up = S.mixmatch_prepare(model, X, U, config.ssl, srng.derive("prep"))
                ramp = 1.0 if ramp_steps == 0 else min(1.0, step / ramp_steps)
                cfg_t = replace(config.ssl, lambda_u=config.ssl.lambda_u * ramp)
                total, ls, lu = S.mixmatch_loss(model, xp, up, cfg_t)
                ls_v, lu_v, mask = float(ls.data), float(lu.data), 0.0
            else:
                uidx = srng.derive("sample-u").integer_array(0, len(unl_images), mu_b)
                U = S.UnlabeledBatch(images=unl_images[uidx])
                total, ls, lu, mask = S.fixmatch_loss(
                    model, X, U, config.aug_policy, config.ssl, srng.derive("loss"))
                ls_v, lu_v = float(ls.data), float(lu.data)

            T.backward(total)
            grads = _collect_grads(model)
            sgd_step(model.params, grads, opt, lr, config.momentum,
                     config.weight_decay)
            ema_update(ema, model, config.ema_decay)

            if config.debug_checks:
                for name, p in model.params.items():
                    if not np.all(np.isfinite(p.data)):
                        raise NumericError(f"non-finite parameter {name} at step {step}")

            line = f"{step},{ls_v:.6f},{lu_v:.6f},{mask:.4f},{lr:.6f}"
            lines.append(line)
            if fh:
                fh.write(line + "\n")
    finally:
        if fh:
            fh.close()

    eval_model = M.with_params(model, ema.shadow)
    accuracy = evaluate(eval_model, data.test, config.eval_batch)
    return TrainResult(model=model, ema=ema, metrics_lines=lines,
                       test_accuracy=accuracy)
