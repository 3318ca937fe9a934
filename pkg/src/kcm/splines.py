"""Uniform B-spline bases: evaluation and derivatives on a padded knot grid."""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SplineBasis"]


@dataclass(frozen=True)
class SplineBasis:
    """Degree-``order`` B-spline basis over ``num_intervals`` uniform pieces of [lo, hi].

    The knot vector extends ``order`` uniform steps past each endpoint, giving
    ``num_intervals + 2 * order + 1`` strictly increasing knots and
    ``num_intervals + order`` basis functions. Inside [lo, hi] the basis is a
    partition of unity with local support: at most ``order + 1`` functions are
    nonzero at any point.
    """

    order: int
    num_intervals: int
    lo: float = -1.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"spline order must be >= 1, got {self.order}")
        if self.num_intervals < 1:
            raise ValueError(f"num_intervals must be >= 1, got {self.num_intervals}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"invalid input range [{self.lo}, {self.hi}]")
        step = (self.hi - self.lo) / self.num_intervals
        idx = np.arange(-self.order, self.num_intervals + self.order + 1, dtype=np.float64)
        object.__setattr__(self, "knots", self.lo + step * idx)

    @property
    def size(self) -> int:
        """Number of basis functions: num_intervals + order."""
        return self.num_intervals + self.order

    def clamp(self, x):
        """Clip values into [lo, hi]; out-of-range inputs are never extrapolated."""
        return np.clip(x, self.lo, self.hi)

    def _check_finite(self, x: np.ndarray):
        if not np.all(np.isfinite(x)):
            raise ValueError("spline input must be finite")

    def _raise_degree(self, xc: np.ndarray, degree: int) -> np.ndarray:
        # Cox-de Boor recurrence, vectorized over all spans at once. The seed
        # uses half-open intervals; x == hi falls in the first padding interval,
        # which the retained bases still cover.
        t = self.knots
        b = ((xc >= t[:-1]) & (xc < t[1:])).astype(np.float64)
        for d in range(1, degree + 1):
            left = (xc - t[: -(d + 1)]) / (t[d:-1] - t[: -(d + 1)])
            right = (t[d + 1 :] - xc) / (t[d + 1 :] - t[1:-d])
            b = left * b[..., :-1] + right * b[..., 1:]
        return b

    def evaluate(self, x) -> np.ndarray:
        """Basis values at ``x`` (clamped into range); shape ``x.shape + (size,)``.

        Values are nonnegative and sum to one for every in-range point.
        """
        arr = np.asarray(x, dtype=np.float64)
        self._check_finite(arr)
        xc = self.clamp(arr)[..., None]
        return self._raise_degree(xc, self.order)

    def derivatives(self, x) -> np.ndarray:
        """First derivative of each basis function at ``x`` (clamped into range)."""
        arr = np.asarray(x, dtype=np.float64)
        self._check_finite(arr)
        xc = self.clamp(arr)[..., None]
        k = self.order
        lower = self._raise_degree(xc, k - 1)
        t = self.knots
        left_den = t[k:-1] - t[: -(k + 1)]
        right_den = t[k + 1 :] - t[1:-k]
        return k * (lower[..., :-1] / left_den - lower[..., 1:] / right_den)
