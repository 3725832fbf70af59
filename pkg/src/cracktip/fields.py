"""Scalar test fields with analytic gradients used as boundary and source data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConstantField:
    value: float = 0.0

    def __call__(self, x) -> np.ndarray:
        return np.full(len(np.atleast_2d(x)), float(self.value))

    def gradient(self, x) -> np.ndarray:
        return np.zeros((len(np.atleast_2d(x)), 2))


@dataclass(frozen=True)
class LinearField:
    """u(x) = a x1 + b x2 + c."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.a * x[:, 0] + self.b * x[:, 1] + self.c

    def gradient(self, x) -> np.ndarray:
        n = len(np.atleast_2d(x))
        return np.broadcast_to(np.array([self.a, self.b], dtype=float), (n, 2)).copy()


@dataclass(frozen=True)
class HarmonicPolynomial:
    """u(x) = sum_n a_n Re(z^n) + b_n Im(z^n) with z = x - center as a complex number.

    ``terms`` is a tuple of (n, a_n, b_n) with n >= 0.
    """

    terms: tuple[tuple[int, float, float], ...]
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for n, _, _ in self.terms:
            if int(n) != n or n < 0:
                raise ValueError(f"harmonic polynomial degree must be a nonnegative integer, got {n}")

    def _z(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x[:, 0] - self.center[0]) + 1j * (x[:, 1] - self.center[1])

    def __call__(self, x) -> np.ndarray:
        z = self._z(x)
        out = np.zeros(len(z))
        for n, a, b in self.terms:
            w = z ** int(n)
            out += a * w.real + b * w.imag
        return out

    def gradient(self, x) -> np.ndarray:
        z = self._z(x)
        gx = np.zeros(len(z))
        gy = np.zeros(len(z))
        for n, a, b in self.terms:
            if n == 0:
                continue
            d = n * z ** (int(n) - 1)
            # d/dx z^n = d, d/dy z^n = i d
            gx += a * d.real + b * d.imag
            gy += -a * d.imag + b * d.real
        return np.stack([gx, gy], axis=1)


@dataclass(frozen=True)
class SumField:
    parts: tuple

    def __call__(self, x) -> np.ndarray:
        return sum(np.asarray(p(x), dtype=float) for p in self.parts)

    def gradient(self, x) -> np.ndarray:
        return sum(np.asarray(p.gradient(x), dtype=float) for p in self.parts)
