"""Minimal reverse-mode automatic differentiation on float64 numpy arrays."""

from .gradcheck import GradCheckReport, grad_check, numeric_gradient, relative_error
from .nn import conv2d, flatten, linear, maxpool2d, resize_pad, softmax
from .tensor import (
    Tape,
    Tensor,
    abs_,
    add,
    as_tensor,
    backward,
    clip,
    div,
    exp,
    expand,
    log,
    mean,
    mul,
    neg,
    pow,
    relu,
    reshape,
    scale,
    sqrt,
    sub,
    sum,
)

absolute = abs_


def elementwise(op, a, b=None, k=None, c=None):
    """Dispatch one of the named elementwise primitives.

    ``op`` is one of add, sub, mul, abs, pow, sqrt, negate, scale; ``k`` is the
    exponent for pow and ``c`` the factor for scale.
    """
    from ..errors import UsageError

    if op in ("add", "sub", "mul"):
        if b is None:
            raise UsageError(f"{op} needs two operands")
        return {"add": add, "sub": sub, "mul": mul}[op](a, b)
    if op == "abs":
        return abs_(a)
    if op == "pow":
        return pow(a, k)
    if op == "sqrt":
        return sqrt(a)
    if op == "negate":
        return neg(a)
    if op == "scale":
        return scale(a, c)
    raise UsageError(f"unknown elementwise op {op!r}")


def reduce(op, a):
    from ..errors import UsageError

    if op == "sum":
        return sum(a)
    if op == "mean":
        return mean(a)
    raise UsageError(f"unknown reduce op {op!r}")
