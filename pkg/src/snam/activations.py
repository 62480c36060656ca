"""Kernel and truncated-power basis expansions.

These are the cheap alternatives to the cubic unit: the Silverman kernel
shares the bell shape of cubic spline bases but has closed-form gradients
with respect to its placement and bandwidth, so both can be trained
directly.  Truncated power bases (polynomial part plus hinge terms) are
kept for low-degree demonstrations and tests; at degree 1 the hinge terms
are shifted ramps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBandwidth
from .splines import KnotVector, place_knots

_SQRT2 = math.sqrt(2.0)


def silverman_kernel(u):
    """0.5 * exp(-|u|/sqrt(2)) * sin(|u|/sqrt(2) + pi/4), unit integral over R."""
    a = np.abs(np.asarray(u, dtype=float)) / _SQRT2
    return 0.5 * np.exp(-a) * np.sin(a + 0.25 * math.pi)


def silverman_kernel_derivative(u):
    """dK/du; equals -sign(u) * 0.5 * exp(-|u|/sqrt(2)) * sin(|u|/sqrt(2)), zero at u = 0."""
    u = np.asarray(u, dtype=float)
    a = np.abs(u) / _SQRT2
    return -np.sign(u) * 0.5 * np.exp(-a) * np.sin(a)


@dataclass
class SilvermanBasis:
    """Kernel centers and strictly positive bandwidths, both trainable."""

    centers: np.ndarray
    bandwidths: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).ravel()
        self.bandwidths = np.asarray(self.bandwidths, dtype=float).ravel()
        if self.bandwidths.shape != self.centers.shape:
            raise InvalidBandwidth("centers and bandwidths must have equal length")
        self._check()

    def _check(self):
        if not np.all(self.bandwidths > 0):
            raise InvalidBandwidth("all bandwidths must be strictly positive")

    @property
    def k(self) -> int:
        return int(self.centers.size)

    @classmethod
    def from_data(cls, data, k: int) -> "SilvermanBasis":
        """Centers at quantile-placed knots, common bandwidth = mean center gap."""
        centers = place_knots("quantile", data, k).knots
        sigma = float(np.mean(np.diff(centers)))
        return cls(centers=centers, bandwidths=np.full(k, sigma))


def eval_silverman_basis(basis: SilvermanBasis, xs) -> np.ndarray:
    """Rows K((x - d_j) / sigma_j), shape (n, k)."""
    basis._check()
    xs = np.asarray(xs, dtype=float).ravel()
    u = (xs[:, None] - basis.centers[None, :]) / basis.bandwidths[None, :]
    return silverman_kernel(u)


def silverman_basis_gradients(basis: SilvermanBasis, xs):
    """Partials of each basis entry wrt center, bandwidth and input.

    Returns (d_center, d_bandwidth, d_x), each shape (n, k):
      d_center_j    = -K'(u) / sigma_j
      d_bandwidth_j = -K'(u) * u / sigma_j
      d_x           =  K'(u) / sigma_j
    with u = (x - d_j) / sigma_j.
    """
    basis._check()
    xs = np.asarray(xs, dtype=float).ravel()
    sig = basis.bandwidths[None, :]
    u = (xs[:, None] - basis.centers[None, :]) / sig
    kp = silverman_kernel_derivative(u)
    d_x = kp / sig
    d_center = -d_x
    d_bandwidth = -kp * u / sig
    return d_center, d_bandwidth, d_x


@dataclass(frozen=True)
class TruncatedPowerBasis:
    """Polynomial part 1, x, ..., x^d plus hinges (x - kappa_j)_+^d at interior knots."""

    knots: KnotVector
    degree: int

    def __post_init__(self):
        if self.degree not in (0, 1, 2, 3):
            raise ValueError(f"degree must be in 0..3, got {self.degree}")

    @property
    def k(self) -> int:
        # d+1 polynomial columns + one hinge per interior knot
        return self.degree + 1 + max(self.knots.k - 2, 0)


def eval_truncated_power_basis(basis: TruncatedPowerBasis, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float).ravel()
    d = basis.degree
    cols = [xs**p for p in range(d + 1)]
    for kap in basis.knots.knots[1:-1]:
        if d == 0:
            cols.append((xs >= kap).astype(float))
        else:
            cols.append(np.maximum(xs - kap, 0.0) ** d)
    return np.column_stack(cols)
