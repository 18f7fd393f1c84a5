"""Benefit functions mapping estimator variance to agent benefit.

Two shapes are supported: affine ``a - b*v`` and piecewise-linear concave.
Both are nonincreasing in the variance, which every solver in this package
relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class LinearBenefit:
    """Affine benefit a - b*v with nonnegative slope magnitude b."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValidationError("linear benefit coefficients must be finite")
        if self.b < 0:
            raise ValidationError(f"linear benefit slope b={self.b} must be >= 0")

    def value(self, v: float) -> float:
        return self.a - self.b * v

    def derivative(self, v: float) -> float:
        return -self.b

    __call__ = value


@dataclass(frozen=True)
class PiecewiseConcaveBenefit:
    """Piecewise-linear concave, nonincreasing benefit.

    ``breakpoints`` is a sequence of (v, value) pairs with strictly increasing
    v.  Segment slopes must be nonpositive (nonincreasing evaluations) and
    nonincreasing themselves (concavity).  Outside the breakpoint range the
    end segments are extended, which preserves both properties.  The
    derivative at a breakpoint is the right-derivative.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        if len(pts) < 2:
            raise ValidationError("piecewise benefit needs at least 2 breakpoints")
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValidationError("piecewise breakpoints must be finite")
        if np.any(np.diff(xs) <= 0):
            raise ValidationError("piecewise breakpoint x-values must be strictly increasing")
        slopes = np.diff(ys) / np.diff(xs)
        if np.any(slopes > 1e-15):
            raise ValidationError("piecewise benefit must be nonincreasing")
        if np.any(np.diff(slopes) > 1e-12):
            raise ValidationError("piecewise benefit must be concave")
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_ys", ys)
        object.__setattr__(self, "_slopes", slopes)

    def _segment(self, v: float) -> int:
        # index of the segment whose right-derivative applies at v
        xs = self._xs
        j = int(np.searchsorted(xs, v, side="right")) - 1
        return min(max(j, 0), len(xs) - 2)

    def value(self, v: float) -> float:
        j = self._segment(v)
        return float(self._ys[j] + self._slopes[j] * (v - self._xs[j]))

    def derivative(self, v: float) -> float:
        return float(self._slopes[self._segment(v)])

    __call__ = value


BenefitFunction = Union[LinearBenefit, PiecewiseConcaveBenefit]
