import os
import subprocess
import sys

import numpy as np
import pytest

from mnd import _kernels_py as ref
from mnd import kernels

compiled = pytest.importorskip("mnd._ckernels", reason="compiled kernels not built")


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("shape", [(1, 1, 5, 5), (2, 3, 8, 7), (4, 16, 18, 18)])
def test_im2col_and_col2im_agree_bitwise(shape, stride):
    rng = np.random.default_rng(0)
    xp = rng.normal(size=shape)
    a = ref.im2col(xp, 3, 3, stride)
    b = compiled.im2col(xp, 3, 3, stride)
    assert np.array_equal(a, b)
    cols = rng.normal(size=a.shape)
    assert np.array_equal(ref.col2im(cols, shape, 3, 3, stride), compiled.col2im(cols, shape, 3, 3, stride))


@pytest.mark.parametrize("shape", [(1, 1, 4, 4), (2, 16, 32, 32), (3, 2, 7, 5)])
def test_maxpool_agrees_bitwise_including_ties(shape):
    rng = np.random.default_rng(1)
    # integers make ties common so the first-maximum rule is exercised
    x = rng.integers(0, 3, size=shape).astype(np.float64)
    out_a, arg_a = ref.maxpool2d_forward(x, 2)
    out_b, arg_b = compiled.maxpool2d_forward(x, 2)
    assert np.array_equal(out_a, out_b) and np.array_equal(arg_a, arg_b)
    g = rng.normal(size=out_a.shape)
    assert np.array_equal(ref.maxpool2d_backward(g, arg_a, shape, 2), compiled.maxpool2d_backward(g, arg_b, shape, 2))


def test_im2col_col2im_are_adjoint():
    rng = np.random.default_rng(2)
    shape = (2, 3, 9, 9)
    x = rng.normal(size=shape)
    cols = kernels.im2col(x, 3, 3, 2)
    c = rng.normal(size=cols.shape)
    lhs = np.sum(cols * c)
    rhs = np.sum(x * kernels.col2im(c, shape, 3, 3, 2))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_environment_variable_forces_python_backend():
    env = dict(os.environ, MND_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import mnd; print(mnd.BACKEND)"], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "python"


def test_default_backend_is_compiled_when_available():
    if os.environ.get("MND_PURE_PYTHON", "") not in ("", "0"):
        pytest.skip("fallback forced for this session")
    assert kernels.BACKEND == "cython"
