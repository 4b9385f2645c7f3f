"""Forward-mode dual numbers with two tangent slots, and the elementwise
nonlinearities shared by the plain and dual evaluation paths.

A ``Dual2`` carries a value plus partial derivatives with respect to the two
query coordinates. Slots may be scalars or numpy arrays; arithmetic follows
the product and chain rules. ``__array_ufunc__`` is disabled so that
``ndarray * Dual2`` defers to the reflected operator instead of producing an
object array.

The helpers (``matvec``, ``gelu``, ``relu``, ``elu``, ``clamp``, ...) accept
either plain arrays or duals. On duals, the value slot is computed by the
same numpy expression as the plain path, so a dual evaluation reproduces the
plain result bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Dual2:
    """Number with value and two tangents (d/dx, d/dy)."""

    __slots__ = ("value", "dx", "dy")
    __array_ufunc__ = None  # force ndarray ops to defer to our reflected ops

    def __init__(self, value, dx=0.0, dy=0.0):
        self.value = value
        self.dx = dx
        self.dy = dy

    @classmethod
    def constant(cls, value):
        z = np.zeros_like(np.asarray(value, dtype=np.float64))
        return cls(value, z, z)

    def __repr__(self):
        return f"Dual2({self.value!r}, dx={self.dx!r}, dy={self.dy!r})"

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.value + other.value, self.dx + other.dx, self.dy + other.dy)
        return Dual2(self.value + other, self.dx, self.dy)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.value - other.value, self.dx - other.dx, self.dy - other.dy)
        return Dual2(self.value - other, self.dx, self.dy)

    def __rsub__(self, other):
        return Dual2(other - self.value, -self.dx, -self.dy)

    def __mul__(self, other):
        if isinstance(other, Dual2):
            return Dual2(
                self.value * other.value,
                self.dx * other.value + self.value * other.dx,
                self.dy * other.value + self.value * other.dy,
            )
        return Dual2(self.value * other, self.dx * other, self.dy * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            inv = 1.0 / other.value
            val = self.value * inv
            return Dual2(
                val,
                (self.dx - val * other.dx) * inv,
                (self.dy - val * other.dy) * inv,
            )
        return Dual2(self.value / other, self.dx / other, self.dy / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        val = other * inv
        return Dual2(val, -val * inv * self.dx, -val * inv * self.dy)

    def __neg__(self):
        return Dual2(-self.value, -self.dx, -self.dy)


def value_of(x):
    return x.value if isinstance(x, Dual2) else x


def _lift(x, fval, fgrad):
    """Apply f elementwise; duals get the chain rule with derivative fgrad."""
    if isinstance(x, Dual2):
        g = fgrad(x.value)
        return Dual2(fval(x.value), g * x.dx, g * x.dy)
    return fval(x)


def gelu(x):
    """Exact erf-based GELU."""
    return _lift(
        x,
        lambda v: 0.5 * v * (1.0 + erf(v / _SQRT2)),
        lambda v: 0.5 * (1.0 + erf(v / _SQRT2)) + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v),
    )


def relu(x):
    # subgradient at 0 is 0
    return _lift(
        x,
        lambda v: np.maximum(v, 0.0),
        lambda v: np.where(v > 0.0, 1.0, 0.0),
    )


def elu(x):
    return _lift(
        x,
        lambda v: np.where(v > 0.0, v, np.expm1(np.minimum(v, 0.0))),
        lambda v: np.where(v > 0.0, 1.0, np.exp(np.minimum(v, 0.0))),
    )


def exp(x):
    return _lift(x, np.exp, np.exp)


def gelu_grad(v):
    return 0.5 * (1.0 + erf(v / _SQRT2)) + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)


def elu_grad(v):
    return np.where(v > 0.0, 1.0, np.exp(np.minimum(v, 0.0)))


def matvec(w, x, b=None):
    """Row-batched affine map: (B, C_in) -> (B, C_out) with weight (C_out, C_in).

    The value path is ``x @ w.T (+ b)`` for plain arrays and duals alike.
    """
    if isinstance(x, Dual2):
        val = x.value @ w.T
        dx = x.dx @ w.T
        dy = x.dy @ w.T
        if b is not None:
            val = val + b
        return Dual2(val, dx, dy)
    out = x @ w.T
    if b is not None:
        out = out + b
    return out


def clamp(x, lo, hi):
    """Clip to [lo, hi]; tangents are zeroed where the clip is active."""
    if isinstance(x, Dual2):
        val = np.clip(x.value, lo, hi)
        inside = (x.value > lo) & (x.value < hi)
        return Dual2(val, np.where(inside, x.dx, 0.0), np.where(inside, x.dy, 0.0))
    return np.clip(x, lo, hi)


def colvec(x):
    """Reshape a (B,) quantity to (B, 1) for channel broadcasting."""
    if isinstance(x, Dual2):
        return Dual2(x.value[:, None], x.dx[:, None], x.dy[:, None])
    return x[:, None]
