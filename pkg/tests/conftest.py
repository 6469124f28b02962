"""Shared helpers: the finite-difference oracle, toy models, and the
acceptance summary printed at the end of the session."""

import numpy as np
import pytest

from sslforge import tensor as T

# ------------------------------------------------------- gradient oracle


def gradcheck(build, params, h=1e-3, subsample=None, rng=None):
    """Worst relative error between analytic and central-difference grads.

    build() must recompute the scalar loss from the current parameter
    values. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator. Run in float64: float32 differences are noise at these
    tolerances.
    """
    for p in params:
        p.grad = None
    loss = build()
    assert loss.data.dtype == np.float64, "gradcheck requires float64 tensors"
    T.backward(loss)
    worst = 0.0
    for p in params:
        ana = p.grad if p.grad is not None else np.zeros_like(p.data)
        idxs = list(np.ndindex(p.data.shape))
        if subsample is not None and len(idxs) > subsample:
            pick = rng.choice(len(idxs), size=subsample, replace=False)
            idxs = [idxs[i] for i in pick]
        for idx in idxs:
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = float(build().data)
            p.data[idx] = orig - h
            dn = float(build().data)
            p.data[idx] = orig
            num = (up - dn) / (2 * h)
            err = abs(num - ana[idx]) / max(abs(num), abs(ana[idx]), 1e-8)
            worst = max(worst, err)
    return worst


# ------------------------------------------------------------ toy models


class ToyModel:
    """Two-parameter linear probe: logits = mean(image) * w.

    Enough structure to exercise every loss path while staying simple
    enough that a test can redo the arithmetic with plain floats.
    """

    def __init__(self, w1, w2):
        self.w = T.Tensor(np.array([[w1, w2]], dtype=np.float64), requires_grad=True)
        self._b = T.Tensor(np.zeros(2, dtype=np.float64))

    def feature(self, images):
        return np.asarray(images).mean(axis=(1, 2, 3)).astype(np.float64)

    def logits(self, images, train):
        feat = T.Tensor(self.feature(images)[:, None], dtype=np.float64)
        return T.dense(feat, self.w, self._b)

    def predict(self, images, train=False):
        with T.no_grad():
            return T.softmax(self.logits(images, train)).data


class ConstantModel:
    """Always predicts the same distribution; logits follow log-probs."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def logits(self, images, train):
        n = len(images)
        return T.Tensor(np.tile(np.log(self.probs), (n, 1)), dtype=np.float64)

    def predict(self, images, train=False):
        return np.tile(self.probs, (len(images), 1))


class ScriptedModel:
    """Returns pre-scripted prediction rows in call order (for forcing)."""

    def __init__(self, rows):
        self.rows = [np.asarray(r, dtype=np.float64) for r in rows]
        self.cursor = 0

    def logits(self, images, train):
        return T.Tensor(np.log(np.stack(self._take(len(images)))), dtype=np.float64)

    def predict(self, images, train=False):
        return np.stack(self._take(len(images)))

    def _take(self, n):
        out = self.rows[self.cursor:self.cursor + n]
        self.cursor += n
        assert len(out) == n, "scripted model exhausted"
        return out


# ------------------------------------------------------ acceptance report

ACCEPTANCE_RESULTS = {}


class _Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        ACCEPTANCE_RESULTS[self.number] = (self.title, status)
        return False


def criterion(number, title):
    """Record pass/fail of one acceptance criterion for the summary."""
    return _Criterion(number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, status = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"ACCEPTANCE {num}: {status} - {title}")


@pytest.fixture
def f64_default():
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(np.float32)
