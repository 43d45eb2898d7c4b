"""Central finite-difference check of tape gradients."""

from dataclasses import dataclass

import numpy as np

from ..errors import EvaluationError, UsageError
from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tol: float
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def _scalar(value):
    v = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if v.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued function, got shape {v.shape}")
    v = float(v.reshape(()))
    if not np.isfinite(v):
        raise EvaluationError("function under check returned a non-finite value")
    return v


def relative_error(analytic, numeric):
    """Largest absolute disagreement scaled by the largest gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return diff
    return diff / scale


def numeric_gradient(f, x, eps=1e-4, batch_f=None):
    """Central differences of ``f`` at ``x``.

    ``batch_f``, when given, maps a stack of inputs (K, *x.shape) to K values
    and is used to evaluate all perturbed points in one call.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    if batch_f is not None:
        k = flat.size
        pts = np.repeat(flat[None], 2 * k, axis=0)
        idx = np.arange(k)
        pts[2 * idx, idx] += eps
        pts[2 * idx + 1, idx] -= eps
        vals = np.asarray(batch_f(pts.reshape((2 * k,) + x.shape)), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("function under check returned a non-finite value")
        return ((vals[0::2] - vals[1::2]) / (2 * eps)).reshape(x.shape)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        xm = flat.copy()
        xm[i] -= eps
        fp = _scalar(f(Tensor(xp.reshape(x.shape))))
        fm = _scalar(f(Tensor(xm.reshape(x.shape))))
        grad[i] = (fp - fm) / (2 * eps)
    return grad.reshape(x.shape)


def grad_check(f, x, eps=1e-4, tol=1e-4, batch_f=None):
    """Compare the tape gradient of scalar ``f`` at ``x`` against central differences."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    _scalar(out)
    if out.requires_grad:
        backward(out)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
    else:
        analytic = np.zeros_like(x0)
    numeric = numeric_gradient(f, x0, eps, batch_f)
    return GradCheckReport(
        max_rel_error=float(relative_error(analytic, numeric)),
        max_abs_error=float(np.abs(analytic - numeric).max(initial=0.0)),
        tol=tol,
        analytic=analytic,
        numeric=numeric,
    )
