"""First-order forward-mode dual numbers and complex-step-safe elementary functions.

A :class:`Dual` carries a value array ``val`` and a stack of tangent arrays
``eps`` with one leading axis per seed direction.  The value may be real or
complex, so Jacobians can be formed at states that already carry a
complex-step perturbation.

The elementary functions in this module (:func:`sqrt`, :func:`power`) act on
plain ndarrays, complex arrays and duals alike.  For complex input they apply
the first-order complex-step rule on the real part, which is exact whenever
the imaginary part is a complex-step perturbation (``h**2`` below round-off),
and avoids the branch cuts and special cases of the complex libm routines.
"""

from __future__ import annotations

import numpy as np


class Dual:
    """Value with one or more first-order tangents.

    Parameters
    ----------
    val : ndarray
        Value, any shape ``S``.
    eps : ndarray
        Tangents, shape ``(m,) + S`` for ``m`` seed directions.
    """

    __slots__ = ("val", "eps")
    __array_ufunc__ = None  # ndarray <op> Dual defers to the reflected method

    def __init__(self, val, eps):
        self.val = np.asarray(val)
        self.eps = np.asarray(eps)

    @classmethod
    def seed(cls, val, directions):
        val = np.asarray(val)
        directions = np.asarray(directions)
        if directions.shape == val.shape:
            directions = directions[None]
        return cls(val, directions)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def nseeds(self):
        return self.eps.shape[0]

    @property
    def real(self):
        return self.val.real

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(shape={self.shape}, nseeds={self.nseeds}, dtype={self.val.dtype})"

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.val[idx], self.eps[(slice(None),) + idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.eps.reshape((self.nseeds,) + tuple(shape)))

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.eps + other.eps)
        return Dual(self.val + other, self.eps + np.zeros_like(np.asarray(other), dtype=self.eps.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.eps - other.eps)
        return Dual(self.val - other, self.eps + np.zeros_like(np.asarray(other), dtype=self.eps.dtype))

    def __rsub__(self, other):
        return Dual(other - self.val, -self.eps + np.zeros_like(np.asarray(other), dtype=self.eps.dtype))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.eps * other.val + self.val * other.eps)
        return Dual(self.val * other, self.eps * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.val / other.val
            return Dual(q, (self.eps - q * other.eps) / other.val)
        return Dual(self.val / other, self.eps / other)

    def __rtruediv__(self, other):
        q = other / self.val
        return Dual(q, -q * self.eps / self.val)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("dual exponents are not supported")
        if p == 2:
            return self * self
        if isinstance(p, (int, np.integer)) and p >= 0:
            if p == 0:
                return Dual(np.ones_like(self.val), np.zeros_like(self.eps))
            out = self
            for _ in range(p - 1):
                out = out * self
            return out
        return power(self, p)


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def value(x):
    """Strip tangents."""
    return x.val if isinstance(x, Dual) else x


def real_part(x) -> np.ndarray:
    """Real part of the value, used for every branch decision."""
    return np.real(value(x))


def sqrt(x):
    if isinstance(x, Dual):
        s = sqrt(x.val)
        return Dual(s, x.eps / (2.0 * s))
    x = np.asarray(x)
    if np.iscomplexobj(x):
        s = np.sqrt(x.real)
        return s + 1j * (x.imag / (2.0 * s))
    return np.sqrt(x)


def power(x, p: float):
    """``x**p`` for a real constant exponent ``p``."""
    if isinstance(x, Dual):
        v = power(x.val, p)
        return Dual(v, x.eps * (p * power(x.val, p - 1.0)))
    x = np.asarray(x)
    if np.iscomplexobj(x):
        xr = x.real
        return xr**p + 1j * (p * xr ** (p - 1.0) * x.imag)
    return x**p


def where(cond, a, b):
    """Select with a real-valued mask; works for any mix of duals and arrays."""
    cond = np.asarray(cond)
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, bv = value(a), value(b)
        val = np.where(cond, av, bv)
        ae = a.eps if isinstance(a, Dual) else None
        be = b.eps if isinstance(b, Dual) else None
        ref = ae if ae is not None else be
        if ae is None:
            ae = np.zeros_like(ref)
        if be is None:
            be = np.zeros_like(ref)
        return Dual(val, np.where(cond, ae, be))
    return np.where(cond, a, b)


def _promote(items):
    m = None
    dtype = np.result_type(*[value(x) for x in items])
    for x in items:
        if isinstance(x, Dual):
            m = x.nseeds
            dtype = np.result_type(dtype, x.eps)
    return m, dtype


def concatenate(items, axis: int = 0):
    m, dtype = _promote(items)
    if m is None:
        return np.concatenate(items, axis=axis)
    vals = [np.asarray(value(x), dtype=dtype) for x in items]
    eps = [
        x.eps.astype(dtype, copy=False) if isinstance(x, Dual) else np.zeros((m,) + np.shape(x), dtype=dtype)
        for x in items
    ]
    eaxis = axis + 1 if axis >= 0 else axis
    return Dual(np.concatenate(vals, axis=axis), np.concatenate(eps, axis=eaxis))


def stack(items, axis: int = 0):
    m, dtype = _promote(items)
    if m is None:
        return np.stack(items, axis=axis)
    vals = [np.asarray(value(x), dtype=dtype) for x in items]
    eps = [
        x.eps.astype(dtype, copy=False) if isinstance(x, Dual) else np.zeros((m,) + np.shape(x), dtype=dtype)
        for x in items
    ]
    return Dual(np.stack(vals, axis=axis), np.stack(eps, axis=axis + 1 if axis >= 0 else axis))


def sum_(x, axis=None):
    if isinstance(x, Dual):
        if axis is None:
            return Dual(np.sum(x.val), np.sum(x.eps.reshape(x.nseeds, -1), axis=1))
        ax = axis if axis >= 0 else x.ndim + axis
        return Dual(np.sum(x.val, axis=ax), np.sum(x.eps, axis=ax + 1))
    return np.sum(x, axis=axis)


def zeros_like(x):
    if isinstance(x, Dual):
        return Dual(np.zeros_like(x.val), np.zeros_like(x.eps))
    return np.zeros_like(x)


def complex_step(x, direction, h: float):
    """``x + i*h*direction`` with complex dtype."""
    return np.asarray(x) + 1j * h * np.asarray(direction)
