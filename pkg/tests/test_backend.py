"""Backend selection and numba/numpy agreement.

Selection is cached at first use, so the env-flag tests run in a
subprocess with a controlled environment.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from sslforge import kernels_numba, kernels_numpy
from sslforge.backend import backend_name

PROBE = (
    "from sslforge.backend import backend_name, get_kernels\n"
    "print(backend_name())\n"
)


def run_probe(backend):
    env = dict(os.environ)
    if backend is None:
        env.pop("SSLFORGE_BACKEND", None)
    else:
        env["SSLFORGE_BACKEND"] = backend
    return subprocess.run(
        [sys.executable, "-c", PROBE], env=env, capture_output=True, text=True)


class TestSelection:
    def test_default_is_numba_when_available(self):
        res = run_probe(None)
        assert res.returncode == 0
        assert res.stdout.strip() == "numba"

    @pytest.mark.parametrize("flag,expect", [("numpy", "numpy"), ("numba", "numba"),
                                             ("auto", "numba")])
    def test_explicit_flag(self, flag, expect):
        res = run_probe(flag)
        assert res.returncode == 0
        assert res.stdout.strip() == expect

    def test_unknown_flag_rejected(self):
        res = run_probe("cuda")
        assert res.returncode != 0
        assert "SSLFORGE_BACKEND" in res.stderr

    def test_in_process_name_is_valid(self):
        assert backend_name() in ("numba", "numpy")


def cases():
    rng = np.random.default_rng(0)
    for stride in (1, 2, 3):
        for k in (1, 2, 3):
            x = rng.standard_normal((2, 3, 9, 10))
            w = rng.standard_normal((4, 3, k, k))
            yield stride, x, w


class TestAgreement:
    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
    def test_forward_matches(self, dtype, tol):
        for stride, x, w in cases():
            x, w = x.astype(dtype), w.astype(dtype)
            a = kernels_numba.conv2d_forward(x, w, stride)
            b = kernels_numpy.conv2d_forward(x, w, stride)
            assert a.dtype == dtype
            np.testing.assert_allclose(a, b, rtol=tol, atol=tol)

    def test_gradients_match(self):
        rng = np.random.default_rng(1)
        for stride, x, w in cases():
            x, w = x.astype(np.float32), w.astype(np.float32)
            ho = (x.shape[2] - w.shape[2]) // stride + 1
            wo = (x.shape[3] - w.shape[3]) // stride + 1
            dy = rng.standard_normal((2, 4, ho, wo)).astype(np.float32)
            gi_a = kernels_numba.conv2d_grad_input(dy, w, stride, x.shape[2], x.shape[3])
            gi_b = kernels_numpy.conv2d_grad_input(dy, w, stride, x.shape[2], x.shape[3])
            np.testing.assert_allclose(gi_a, gi_b, rtol=1e-4, atol=1e-5)
            gk_a = kernels_numba.conv2d_grad_kernel(dy, x, stride, w.shape[2], w.shape[3])
            gk_b = kernels_numpy.conv2d_grad_kernel(dy, x, stride, w.shape[2], w.shape[3])
            np.testing.assert_allclose(gk_a, gk_b, rtol=1e-4, atol=1e-5)

    @pytest.mark.parametrize("mod", [kernels_numba, kernels_numpy])
    def test_each_backend_self_deterministic(self, mod):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 12, 12)).astype(np.float32)
        w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        first = mod.conv2d_forward(x, w, 2)
        again = mod.conv2d_forward(x, w, 2)
        np.testing.assert_array_equal(first, again)
