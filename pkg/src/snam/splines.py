"""Natural cubic regression spline bases.

A basis is parameterized by the function values at an ordered knot sequence
``kappa_1 < ... < kappa_k``.  The construction assembles the classic
tridiagonal ``B`` and banded ``D`` matrices from the knot gaps, maps
coefficients to second derivatives through ``G = [0; B^-1 D; 0]``, and
carries the curvature penalty ``S = D' B^-1 D`` so that ``beta' S beta``
equals the integrated squared second derivative of the spline.

Evaluation inside ``[kappa_1, kappa_k]`` follows the interval-local mix of
hat functions and cubic correction terms; outside, the spline continues
linearly with the one-sided boundary slope (natural splines are linear
beyond the boundary knots).

Everything here is immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DegenerateData, DimensionMismatch, SingularSystem


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing knot positions, in feature units."""

    knots: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", arr)
        if arr.ndim != 1 or arr.size < 2:
            raise DegenerateData("need at least two knots")
        if not np.all(np.diff(arr) > 0):
            raise DegenerateData("knots must be strictly increasing")

    @property
    def k(self) -> int:
        return int(self.knots.size)


def place_knots(strategy: str, data, k: int) -> KnotVector:
    """Place ``k`` knots over the data range, uniformly or at quantiles.

    Quantile placement puts knot j at the (j-1)/(k-1) empirical quantile,
    so the basis is denser where the data is.
    """
    if k < 3:
        raise DegenerateData(f"need k >= 3 knots, got {k}")
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise DegenerateData("empty data")
    if strategy == "uniform":
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            raise DegenerateData("zero range: cannot place uniform knots")
        return KnotVector(np.linspace(lo, hi, k))
    if strategy == "quantile":
        if np.unique(x).size < k:
            raise DegenerateData(
                f"quantile placement needs >= {k} distinct values, got {np.unique(x).size}"
            )
        q = np.quantile(x, np.linspace(0.0, 1.0, k))
        if not np.all(np.diff(q) > 0):
            raise DegenerateData("quantile knots collide (heavily tied data)")
        return KnotVector(q)
    raise ValueError(f"unknown knot strategy: {strategy!r}")


@dataclass(frozen=True)
class CubicBasisSystem:
    """Precomputed matrices for one natural cubic unit.

    ``Gmat`` maps coefficients (function values at knots) to second
    derivatives at the knots; its first and last rows are zero (natural
    boundary conditions).  ``Smat = D' B^-1 D`` is the curvature penalty.
    """

    knots: np.ndarray
    h: np.ndarray
    Bmat: np.ndarray
    Dmat: np.ndarray
    Gmat: np.ndarray
    Smat: np.ndarray
    # Cholesky factor of Bmat, reused by the knot-gradient solves.
    B_cho: tuple = field(repr=False, default=None)

    @property
    def k(self) -> int:
        return int(self.knots.size)


def build_system(knots: KnotVector) -> CubicBasisSystem:
    """Assemble B, D, G and S for a knot vector (k >= 3)."""
    kap = np.asarray(knots.knots, dtype=float)
    k = kap.size
    if k < 3:
        raise DegenerateData(f"cubic system needs k >= 3 knots, got {k}")
    h = np.diff(kap)

    m = k - 2
    B = np.zeros((m, m))
    idx = np.arange(m)
    B[idx, idx] = (h[:-1] + h[1:]) / 3.0
    if m > 1:
        B[idx[:-1], idx[:-1] + 1] = h[1:-1] / 6.0
        B[idx[:-1] + 1, idx[:-1]] = h[1:-1] / 6.0

    D = np.zeros((m, k))
    D[idx, idx] = 1.0 / h[:-1]
    D[idx, idx + 1] = -1.0 / h[:-1] - 1.0 / h[1:]
    D[idx, idx + 2] = 1.0 / h[1:]

    try:
        B_cho = cho_factor(B, lower=True)
        G_mid = cho_solve(B_cho, D)
    except (LinAlgError, ValueError) as exc:
        raise SingularSystem(f"B matrix is numerically singular: {exc}") from exc

    G = np.vstack([np.zeros((1, k)), G_mid, np.zeros((1, k))])
    S = D.T @ G_mid
    S = 0.5 * (S + S.T)
    return CubicBasisSystem(knots=kap, h=h, Bmat=B, Dmat=D, Gmat=G, Smat=S, B_cho=B_cho)


def _interval_index(system: CubicBasisSystem, xs: np.ndarray) -> np.ndarray:
    # x exactly on an interior knot goes to the left interval.
    j = np.searchsorted(system.knots, xs, side="left") - 1
    return np.clip(j, 0, system.k - 2)


def boundary_slopes(system: CubicBasisSystem) -> tuple[np.ndarray, np.ndarray]:
    """One-sided derivative rows of the basis at the first and last knot."""
    k = system.k
    h0 = system.h[0]
    hl = system.h[-1]
    lo = np.zeros(k)
    lo[0] = -1.0 / h0
    lo[1] = 1.0 / h0
    lo -= (h0 / 6.0) * system.Gmat[1]
    hi = np.zeros(k)
    hi[k - 2] = -1.0 / hl
    hi[k - 1] = 1.0 / hl
    hi += (hl / 6.0) * system.Gmat[k - 2]
    return lo, hi


def eval_basis_matrix(system: CubicBasisSystem, xs) -> np.ndarray:
    """Rows of basis values for each x; linear continuation outside the knots."""
    xs = np.asarray(xs, dtype=float).ravel()
    n = xs.size
    k = system.k
    kap = system.knots
    out = np.zeros((n, k))

    below = xs < kap[0]
    above = xs > kap[-1]
    inside = ~(below | above)

    if np.any(inside):
        x = xs[inside]
        j = _interval_index(system, x)
        hj = system.h[j]
        u = kap[j + 1] - x
        v = x - kap[j]
        am = u / hj
        ap = v / hj
        cm = (u**3 / hj - hj * u) / 6.0
        cp = (v**3 / hj - hj * v) / 6.0
        rows = cm[:, None] * system.Gmat[j] + cp[:, None] * system.Gmat[j + 1]
        ii = np.arange(x.size)
        rows[ii, j] += am
        rows[ii, j + 1] += ap
        out[inside] = rows

    if np.any(below) or np.any(above):
        slope_lo, slope_hi = boundary_slopes(system)
        if np.any(below):
            base = np.zeros(k)
            base[0] = 1.0
            out[below] = base + (xs[below] - kap[0])[:, None] * slope_lo
        if np.any(above):
            base = np.zeros(k)
            base[-1] = 1.0
            out[above] = base + (xs[above] - kap[-1])[:, None] * slope_hi
    return out


def eval_basis(system: CubicBasisSystem, x: float) -> np.ndarray:
    return eval_basis_matrix(system, [x])[0]


def wiggliness(system: CubicBasisSystem, beta) -> float:
    """Curvature penalty beta' S beta = integral of the squared second derivative."""
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != system.k:
        raise DimensionMismatch(f"beta has length {beta.size}, expected {system.k}")
    return float(beta @ system.Smat @ beta)


def _dB_dD_for_knot(system: CubicBasisSystem, m: int):
    """Derivatives of B and D entries with respect to knot position m."""
    k = system.k
    nmid = k - 2
    h = system.h
    dh = np.zeros(k - 1)
    if m >= 1:
        dh[m - 1] = 1.0
    if m <= k - 2:
        dh[m] = -1.0
    idx = np.arange(nmid)
    dB = np.zeros((nmid, nmid))
    dB[idx, idx] = (dh[:-1] + dh[1:]) / 3.0
    if nmid > 1:
        dB[idx[:-1], idx[:-1] + 1] = dh[1:-1] / 6.0
        dB[idx[:-1] + 1, idx[:-1]] = dh[1:-1] / 6.0
    dD = np.zeros((nmid, k))
    dD[idx, idx] = -dh[:-1] / h[:-1] ** 2
    dD[idx, idx + 1] = dh[:-1] / h[:-1] ** 2 + dh[1:] / h[1:] ** 2
    dD[idx, idx + 2] = -dh[1:] / h[1:] ** 2
    return dB, dD


def knot_value_jacobian(system: CubicBasisSystem, xs, beta) -> np.ndarray:
    """d f(x_i) / d kappa_m for the spline with coefficients beta, shape (n, k).

    Differentiates the full construction: the interval-local terms directly,
    and the second-derivative vector through the solve ``B gamma = D beta``
    (d gamma = B^-1 (dD beta - dB gamma)).  Extrapolated points differentiate
    the linear continuation, whose anchor value is pinned at the boundary
    coefficient by the interpolation property.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    k = system.k
    if beta.size != k:
        raise DimensionMismatch(f"beta has length {beta.size}, expected {k}")
    kap = system.knots
    n = xs.size

    gamma = cho_solve(system.B_cho, system.Dmat @ beta)
    delta = np.concatenate([[0.0], gamma, [0.0]])

    # ddelta[m] = d delta / d kappa_m (length-k vector per knot).
    ddelta = np.zeros((k, k))
    for m in range(k):
        dB, dD = _dB_dD_for_knot(system, m)
        rhs = dD @ beta - dB @ gamma
        ddelta[m, 1:-1] = cho_solve(system.B_cho, rhs)

    out = np.zeros((n, k))
    below = xs < kap[0]
    above = xs > kap[-1]
    inside = ~(below | above)

    if np.any(inside):
        x = xs[inside]
        j = _interval_index(system, x)
        h = system.h[j]
        u = kap[j + 1] - x
        v = x - kap[j]

        # Chain through delta: c- * ddelta[:, j] + c+ * ddelta[:, j+1].
        cm = (u**3 / h - h * u) / 6.0
        cp = (v**3 / h - h * v) / 6.0
        A = ddelta.T  # A[d, m] = d delta_d / d kappa_m
        rows = cm[:, None] * A[j] + cp[:, None] * A[j + 1]

        # Direct dependence on the bracketing knots.
        dam_dkj = u / h**2
        dap_dkj = (v - h) / h**2
        dcm_dkj = (u**3 / h**2 + u) / 6.0
        dcp_dkj = (v**3 / h**2 - 3.0 * v**2 / h + v + h) / 6.0

        dam_dkj1 = (h - u) / h**2
        dap_dkj1 = -v / h**2
        dcm_dkj1 = (3.0 * u**2 / h - u**3 / h**2 - u - h) / 6.0
        dcp_dkj1 = (-(v**3) / h**2 - v) / 6.0

        dj = (
            dam_dkj * beta[j]
            + dap_dkj * beta[j + 1]
            + dcm_dkj * delta[j]
            + dcp_dkj * delta[j + 1]
        )
        dj1 = (
            dam_dkj1 * beta[j]
            + dap_dkj1 * beta[j + 1]
            + dcm_dkj1 * delta[j]
            + dcp_dkj1 * delta[j + 1]
        )
        ii = np.arange(x.size)
        np.add.at(rows, (ii, j), dj)
        np.add.at(rows, (ii, j + 1), dj1)
        out[inside] = rows

    if np.any(below):
        x = xs[below]
        h0 = system.h[0]
        slope = (beta[1] - beta[0]) / h0 - (h0 / 6.0) * delta[1]
        # d slope / d kappa_m: h0 depends on knots 0 and 1; delta[1] on all.
        dslope = -(h0 / 6.0) * ddelta[:, 1]
        dslope[0] += (beta[1] - beta[0]) / h0**2 + delta[1] / 6.0
        dslope[1] += -(beta[1] - beta[0]) / h0**2 - delta[1] / 6.0
        rows = (x - kap[0])[:, None] * dslope[None, :]
        rows[:, 0] -= slope
        out[below] = rows

    if np.any(above):
        x = xs[above]
        hl = system.h[-1]
        slope = (beta[-1] - beta[-2]) / hl + (hl / 6.0) * delta[k - 2]
        dslope = (hl / 6.0) * ddelta[:, k - 2]
        dslope[k - 2] += (beta[-1] - beta[-2]) / hl**2 - delta[k - 2] / 6.0
        dslope[k - 1] += -(beta[-1] - beta[-2]) / hl**2 + delta[k - 2] / 6.0
        rows = (x - kap[-1])[:, None] * dslope[None, :]
        rows[:, k - 1] -= slope
        out[above] = rows

    return out


def wiggliness_knot_gradient(system: CubicBasisSystem, beta) -> np.ndarray:
    """d (beta' S beta) / d kappa_m, shape (k,).

    Uses beta' S beta = (D beta)' B^-1 (D beta), so the derivative is
    2 (dD beta)' gamma - gamma' dB gamma with gamma = B^-1 D beta.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != system.k:
        raise DimensionMismatch(f"beta has length {beta.size}, expected {system.k}")
    gamma = cho_solve(system.B_cho, system.Dmat @ beta)
    grad = np.zeros(system.k)
    for m in range(system.k):
        dB, dD = _dB_dD_for_knot(system, m)
        grad[m] = 2.0 * (dD @ beta) @ gamma - gamma @ dB @ gamma
    return grad
