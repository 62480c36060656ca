"""Post-fit uncertainty: empirical Fisher information and credibility bands.

The empirical Fisher is the averaged outer product of per-observation
log-likelihood gradients at the fitted coefficients.  It is computed over
the coefficient-type parameters only (intercept and unit coefficients);
knot/center/bandwidth parameters are held at their trained values, matching
the band construction, which is stated in terms of coefficients and the
curvature penalty.

Note the scaling: the Fisher here is an average, while the posterior
covariance needs total information, so the posterior precision is
``n * F + Lambda`` with ``Lambda`` the block-diagonal ``lam_u * S_u``.
Bands are pointwise quantiles of shape functions evaluated on coefficient
draws from ``N(beta_hat, (n F + Lambda)^-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import NotPositiveDefinite, TooManyParameters, WrongUnitKind
from .model import (
    AdditiveModel,
    FeatureUnit,
    _logistic,
    coefficient_slices,
    predict_eta_matrix,
)

MAX_FISHER_PARAMS = 4096


@dataclass
class FisherEstimate:
    fisher: np.ndarray  # (p, p) averaged outer product, symmetric PSD
    n: int
    index_map: dict


@dataclass
class CredibleBand:
    grid: np.ndarray
    lower: np.ndarray
    mean: np.ndarray
    upper: np.ndarray
    alpha: float
    n_samples: int


def estimate_noise_variance(model: AdditiveModel, X, y) -> float:
    """MLE residual variance of a fitted gaussian model (enters the likelihood
    gradients as 1/sigma^2)."""
    y = np.asarray(y, dtype=float).ravel()
    eta = predict_eta_matrix(model, X)
    return float(np.mean((y - eta) ** 2))


def per_example_gradients(model: AdditiveModel, X, y, noise_variance: float | None = None):
    """Gradient rows of the single-observation log-likelihood at the fit.

    Returns ``(G, index_map)`` with G of shape (n, p), p = intercept plus all
    unit coefficients.  Rows sum to ~0 at an unpenalized optimum.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    index_map, p = coefficient_slices(model)
    if p > MAX_FISHER_PARAMS:
        raise TooManyParameters(
            f"{p} coefficients exceed the dense-Fisher design point ({MAX_FISHER_PARAMS})"
        )
    eta = predict_eta_matrix(model, X)
    if model.family == "gaussian":
        if noise_variance is None:
            noise_variance = float(np.mean((y - eta) ** 2))
        resid = (y - eta) / noise_variance
    else:
        resid = y - _logistic(eta)

    G = np.empty((X.shape[0], p))
    G[:, 0] = resid
    for i, u in enumerate(model.units):
        G[:, index_map[i]] = u.design(X) * resid[:, None]
    return G, index_map


def empirical_fisher(grads: np.ndarray, index_map: dict | None = None) -> FisherEstimate:
    """F = (1/n) G'G, the averaged outer product of gradient rows."""
    G = np.atleast_2d(np.asarray(grads, dtype=float))
    n = G.shape[0]
    F = (G.T @ G) / n
    F = 0.5 * (F + F.T)
    return FisherEstimate(fisher=F, n=n, index_map=index_map or {})


def fisher_information(model: AdditiveModel, X, y, noise_variance: float | None = None) -> FisherEstimate:
    G, index_map = per_example_gradients(model, X, y, noise_variance)
    return empirical_fisher(G, index_map)


def penalty_precision(model: AdditiveModel) -> np.ndarray:
    """Block-diagonal lam_u * S_u on the coefficient index map (zero blocks
    for the intercept and unpenalized units)."""
    index_map, p = coefficient_slices(model)
    Lam = np.zeros((p, p))
    for i, u in enumerate(model.units):
        S = u.penalty_matrix()
        if S is not None and u.lam > 0:
            sl = index_map[i]
            Lam[sl, sl] = u.lam * S
    return Lam


def posterior_covariance(fisher: FisherEstimate, penalties: np.ndarray | None = None, jitter: float = 1e-8) -> np.ndarray:
    """(n F + Lambda)^-1 with escalating diagonal jitter until the Cholesky
    factorization succeeds (1e-8 up to 1e-4, x10 steps)."""
    A = fisher.n * fisher.fisher
    if penalties is not None:
        A = A + penalties
    p = A.shape[0]
    eye = np.eye(p)
    j = jitter
    j_max = max(1e-4, jitter)
    while j <= j_max * (1.0 + 1e-12):
        try:
            c = cho_factor(A + j * eye, lower=True)
            sigma = cho_solve(c, eye)
            return 0.5 * (sigma + sigma.T)
        except (LinAlgError, ValueError):
            j *= 10.0
    raise NotPositiveDefinite(
        "posterior precision not positive definite even with 1e-4 jitter (degenerate fit?)"
    )


def sample_coefficients(beta_hat, sigma, M: int, seed: int) -> np.ndarray:
    """M multivariate-normal draws N(beta_hat, sigma); deterministic per seed."""
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    sigma = np.asarray(sigma, dtype=float)
    L = np.linalg.cholesky(sigma)
    z = np.random.default_rng(seed).standard_normal((int(M), beta_hat.size))
    return beta_hat + z @ L.T


def model_coefficients(model: AdditiveModel) -> np.ndarray:
    """Flat [intercept | unit coefficients...] matching the Fisher index map."""
    index_map, p = coefficient_slices(model)
    beta = np.empty(p)
    beta[0] = model.intercept
    for i, u in enumerate(model.units):
        beta[index_map[i]] = u.beta
    return beta


def credible_band(model: AdditiveModel, unit: FeatureUnit, grid, samples, alpha: float = 0.05) -> CredibleBand:
    """Pointwise quantile band of a univariate shape function.

    ``samples`` is the (M, k_u) block of posterior coefficient draws for this
    unit.  The band mean is the fitted shape value, not the sample mean.
    """
    if unit.kind == "tensor":
        raise WrongUnitKind("credible_band is for univariate units")
    grid = np.asarray(grid, dtype=float).ravel()
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != unit.beta.size:
        raise WrongUnitKind(
            f"samples have {samples.shape[1]} columns, unit has {unit.beta.size} coefficients"
        )
    Xg = np.zeros((grid.size, 1 + max(unit.features)))
    Xg[:, unit.features[0]] = grid
    rows = unit.design(Xg)
    mean = rows @ unit.beta
    draws = rows @ samples.T  # (grid, M)
    lower = np.quantile(draws, alpha / 2.0, axis=1)
    upper = np.quantile(draws, 1.0 - alpha / 2.0, axis=1)
    return CredibleBand(
        grid=grid,
        lower=lower,
        mean=mean,
        upper=upper,
        alpha=float(alpha),
        n_samples=int(samples.shape[0]),
    )
