"""Penalized likelihood fitting by first-order gradient descent.

The loss is the averaged negative log-likelihood plus, per unit, the
curvature penalty ``lam * beta' S beta`` and (for learnable knots) a knot
distance penalty ``rho * sum_j 1/h_j`` that keeps neighbouring knots from
collapsing.  All gradients are analytic: coefficients and the intercept by
linear-model calculus, Silverman centers and log-bandwidths through the
kernel derivative, and knot positions by differentiating the spline
construction through the tridiagonal solve.

Bandwidths are optimized on the log scale so gradient steps cannot make
them non-positive.  Knot parameters are sorted (and the basis matrices
rebuilt) before every forward pass; the optimizer's moment estimates are
permuted together with the knots so state stays attached to each knot.

A closed-form penalized least squares solver is provided as a test oracle
for the Gaussian fixed-knot case; it is not the production fitter.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import (
    DivergedFit,
    KnotCollapse,
    NonBinaryTarget,
    NonFiniteGradient,
    SingularNormalEquations,
)
from .model import AdditiveModel, FeatureUnit, _logistic, refresh_centering, freeze_centering
from .splines import (
    KnotVector,
    build_system,
    knot_value_jacobian,
    wiggliness_knot_gradient,
)

KNOT_GAP_FLOOR = 1e-8  # relative to the knot range


@dataclass
class FitConfig:
    learning_rate: float = 1e-4
    batch_size: int | None = None  # None = full batch
    max_epochs: int = 1000
    patience: int = 100
    plateau_factor: float = 0.995
    plateau_patience: int = 10
    plateau_tol: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float | None = None  # override every unit's smoothing weight
    knot_penalty: float | None = None  # rho; None = 1e-6 * knot range per unit
    learnable_knots: bool | None = None  # None = respect per-unit flags
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.knot_penalty is not None and self.knot_penalty < 0:
            raise ValueError("knot_penalty must be >= 0")


@dataclass
class FitResult:
    model: AdditiveModel
    train_loss: list[float]
    val_loss: list[float] | None
    epochs: int
    unit_penalties: list[dict]


# --- losses -------------------------------------------------------------------


def _check_binary(y: np.ndarray):
    if not np.all((y == 0.0) | (y == 1.0)):
        raise NonBinaryTarget("bernoulli family needs targets in {0, 1}")


def negative_log_likelihood(model: AdditiveModel, X, y) -> float:
    """Averaged NLL: 0.5 * mean squared error (gaussian, unit variance) or
    the numerically stable bernoulli-logit cross entropy."""
    from .model import predict_eta_matrix

    y = np.asarray(y, dtype=float).ravel()
    eta = predict_eta_matrix(model, X)
    if model.family == "gaussian":
        return float(0.5 * np.mean((y - eta) ** 2))
    _check_binary(y)
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _knot_rho(unit: FeatureUnit, config: FitConfig) -> float:
    if config.knot_penalty is not None:
        return config.knot_penalty
    rho = getattr(unit, "knot_rho", None)
    if rho is None:
        rho = 1e-6 * float(unit.basis.knots[-1] - unit.basis.knots[0])
    return rho


def penalty_terms(model: AdditiveModel, config: FitConfig) -> list[dict]:
    """Per-unit penalty values: curvature and (learnable knots) knot distance."""
    out = []
    for u in model.units:
        entry = {"wiggliness": 0.0, "knot_distance": 0.0}
        S = u.penalty_matrix()
        if S is not None and u.lam > 0:
            entry["wiggliness"] = float(u.lam * (u.beta @ S @ u.beta))
        if u.kind == "cubic" and u.learnable_knots:
            h = np.diff(u.basis.knots)
            entry["knot_distance"] = float(_knot_rho(u, config) * np.sum(1.0 / h))
        out.append(entry)
    return out


def total_loss(model: AdditiveModel, X, y, config: FitConfig) -> float:
    loss = negative_log_likelihood(model, X, y)
    for entry in penalty_terms(model, config):
        loss += entry["wiggliness"] + entry["knot_distance"]
    return float(loss)


# --- parameter packing --------------------------------------------------------


@dataclass
class _Slot:
    unit: int | None  # None = intercept
    name: str  # intercept | beta | centers | log_bw | knots
    sl: slice


def param_layout(model: AdditiveModel) -> tuple[list[_Slot], int]:
    slots = [_Slot(None, "intercept", slice(0, 1))]
    pos = 1
    for i, u in enumerate(model.units):
        slots.append(_Slot(i, "beta", slice(pos, pos + u.beta.size)))
        pos += u.beta.size
        if u.kind == "silverman":
            k = u.basis.k
            slots.append(_Slot(i, "centers", slice(pos, pos + k)))
            pos += k
            slots.append(_Slot(i, "log_bw", slice(pos, pos + k)))
            pos += k
        elif u.kind == "cubic" and u.learnable_knots:
            k = u.basis.k
            if getattr(u, "knot_params", None) is None:
                u.knot_params = u.basis.knots.copy()
            slots.append(_Slot(i, "knots", slice(pos, pos + k)))
            pos += k
    return slots, pos


def get_params(model: AdditiveModel, slots: list[_Slot], size: int) -> np.ndarray:
    theta = np.empty(size)
    for s in slots:
        if s.name == "intercept":
            theta[s.sl] = model.intercept
            continue
        u = model.units[s.unit]
        if s.name == "beta":
            theta[s.sl] = u.beta
        elif s.name == "centers":
            theta[s.sl] = u.basis.centers
        elif s.name == "log_bw":
            theta[s.sl] = np.log(u.basis.bandwidths)
        elif s.name == "knots":
            theta[s.sl] = u.knot_params
    return theta


def set_params(model: AdditiveModel, slots: list[_Slot], theta: np.ndarray) -> None:
    for s in slots:
        if s.name == "intercept":
            model.intercept = float(theta[s.sl][0])
            continue
        u = model.units[s.unit]
        if s.name == "beta":
            u.beta[:] = theta[s.sl]
        elif s.name == "centers":
            u.basis.centers[:] = theta[s.sl]
        elif s.name == "log_bw":
            u.basis.bandwidths[:] = np.exp(theta[s.sl])
        elif s.name == "knots":
            u.knot_params[:] = theta[s.sl]


# --- knot sorting -------------------------------------------------------------


def _sort_knots_with_perms(model: AdditiveModel) -> list[tuple[int, np.ndarray]]:
    perms = []
    for i, u in enumerate(model.units):
        if not (u.kind == "cubic" and u.learnable_knots):
            continue
        params = getattr(u, "knot_params", None)
        if params is None:
            u.knot_params = u.basis.knots.copy()
            params = u.knot_params
        order = np.argsort(params, kind="stable")
        sorted_vals = params[order]
        span = float(sorted_vals[-1] - sorted_vals[0])
        gaps = np.diff(sorted_vals)
        if span <= 0 or np.any(gaps < KNOT_GAP_FLOOR * span):
            raise KnotCollapse(
                f"knot gap below {KNOT_GAP_FLOOR:g} * range in unit {i}; increase the knot distance penalty"
            )
        if not np.array_equal(order, np.arange(order.size)):
            perms.append((i, order))
        u.knot_params = sorted_vals
        if not np.array_equal(sorted_vals, u.basis.knots):
            u.basis = build_system(KnotVector(sorted_vals))
    return perms


def sort_knots(model: AdditiveModel) -> None:
    """Sort every learnable knot vector ascending and rebuild its matrices."""
    _sort_knots_with_perms(model)


# --- gradients ----------------------------------------------------------------


def _eta_and_designs(model: AdditiveModel, X, design_cache=None, idx=None):
    designs = []
    eta = None
    for i, u in enumerate(model.units):
        if design_cache is not None and design_cache[i] is not None:
            D = design_cache[i][idx] if idx is not None else design_cache[i]
        else:
            D = u.design(X)
        designs.append(D)
        contrib = D @ u.beta
        eta = contrib if eta is None else eta + contrib
    n = X.shape[0] if hasattr(X, "shape") else len(X)
    if eta is None:
        eta = np.zeros(n)
    return model.intercept + eta, designs


def _eta_gradient(family: str, eta: np.ndarray, y: np.ndarray) -> np.ndarray:
    if family == "gaussian":
        return eta - y
    return _logistic(eta) - y


def gradients(
    model: AdditiveModel,
    X,
    y,
    config: FitConfig,
    slots: list[_Slot] | None = None,
    size: int | None = None,
    design_cache=None,
    idx=None,
) -> np.ndarray:
    """Exact gradient of total_loss over all trainable parameters (flat vector)."""
    from .activations import silverman_basis_gradients

    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if model.family == "bernoulli":
        _check_binary(y)
    if slots is None:
        slots, size = param_layout(model)
    n = X.shape[0]

    eta, designs = _eta_and_designs(model, X, design_cache, idx)
    w = _eta_gradient(model.family, eta, y) / n

    grad = np.zeros(size)
    for s in slots:
        if s.name == "intercept":
            grad[s.sl] = w.sum()
            continue
        u = model.units[s.unit]
        if s.name == "beta":
            g = designs[s.unit].T @ w
            S = u.penalty_matrix()
            if S is not None and u.lam > 0:
                g = g + 2.0 * u.lam * (S @ u.beta)
            grad[s.sl] = g
        elif s.name in ("centers", "log_bw"):
            xcol = X[:, u.features[0]]
            d_center, d_bw, _ = silverman_basis_gradients(u.basis, xcol)
            if s.name == "centers":
                grad[s.sl] = (d_center.T @ w) * u.beta
            else:
                grad[s.sl] = (d_bw.T @ w) * u.beta * u.basis.bandwidths
        elif s.name == "knots":
            xcol = X[:, u.features[0]]
            T = knot_value_jacobian(u.basis, xcol, u.beta)
            g = T.T @ w
            if u.lam > 0:
                g = g + u.lam * wiggliness_knot_gradient(u.basis, u.beta)
            rho = _knot_rho(u, config)
            if rho > 0:
                h = np.diff(u.basis.knots)
                gk = np.zeros(u.basis.k)
                gk[:-1] += 1.0 / h**2  # d(1/h_m)/d kappa_m = +1/h_m^2
                gk[1:] -= 1.0 / h**2  # d(1/h_{m-1})/d kappa_m = -1/h_{m-1}^2
                g = g + rho * gk
            grad[s.sl] = g
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has NaN/Inf components (fit diverged?)")
    return grad


# --- optimizer ----------------------------------------------------------------


class _Adam:
    def __init__(self, size: int, config: FitConfig):
        self.lr = config.learning_rate
        self.b1 = config.beta1
        self.b2 = config.beta2
        self.eps = config.eps
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad**2
        mhat = self.m / (1.0 - self.b1**self.t)
        vhat = self.v / (1.0 - self.b2**self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def permute(self, sl: slice, order: np.ndarray) -> None:
        self.m[sl] = self.m[sl][order]
        self.v[sl] = self.v[sl][order]


# --- fit ----------------------------------------------------------------------


def _init_intercept(model: AdditiveModel, y: np.ndarray) -> None:
    if model.family == "gaussian":
        model.intercept = float(np.mean(y))
    else:
        p = float(np.clip(np.mean(y), 1e-6, 1.0 - 1e-6))
        model.intercept = float(np.log(p / (1.0 - p)))


def _has_trainable_basis(u: FeatureUnit) -> bool:
    return u.kind == "silverman" or (u.kind == "cubic" and u.learnable_knots)


def fit(model: AdditiveModel, train, val, config: FitConfig) -> FitResult:
    """Mini-batch Adam on total_loss with early stopping and plateau LR decay.

    ``train`` and ``val`` are (X, y) pairs; ``val`` may be None, which
    disables early stopping (plateau detection then follows the training
    loss).  The best-validation parameters are restored at the end, and
    centering means are frozen to exact training-set means (the intercept
    absorbs the recentering shift, so returned predictions equal the
    validated ones).  Deterministic for a given seed.
    """
    X, y = train
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    has_val = val is not None and val[0] is not None and len(val[1]) > 0
    if has_val:
        Xv = np.atleast_2d(np.asarray(val[0], dtype=float))
        yv = np.asarray(val[1], dtype=float).ravel()

    if config.learnable_knots is not None:
        for u in model.units:
            if u.kind == "cubic" and len(u.features) == 1:
                u.learnable_knots = bool(config.learnable_knots)
    for u in model.units:
        if config.lam is not None:
            u.lam = config.lam
        if u.kind == "cubic" and u.learnable_knots and getattr(u, "knot_rho", None) is None:
            u.knot_rho = (
                config.knot_penalty
                if config.knot_penalty is not None
                else 1e-6 * float(u.basis.knots[-1] - u.basis.knots[0])
            )

    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    batch = n if config.batch_size is None else min(config.batch_size, n)

    _init_intercept(model, y)
    sort_knots(model)
    refresh_centering(model, X, only_trainable=False)

    slots, size = param_layout(model)
    theta = get_params(model, slots, size)
    opt = _Adam(size, config)
    dynamic = any(_has_trainable_basis(u) for u in model.units)

    def build_cache():
        return [None if _has_trainable_basis(u) else u.design(X) for u in model.units]

    cache = build_cache()

    def full_train_loss() -> float:
        eta, _ = _eta_and_designs(model, X, cache)
        if model.family == "gaussian":
            nll = 0.5 * np.mean((y - eta) ** 2)
        else:
            nll = np.mean(np.logaddexp(0.0, eta) - y * eta)
        return float(nll + sum(e["wiggliness"] + e["knot_distance"] for e in penalty_terms(model, config)))

    def val_metric() -> float:
        return negative_log_likelihood(model, Xv, yv)

    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_snapshot = None
    stall = 0
    plateau_best = np.inf
    plateau_stall = 0

    def sync_sorted(theta: np.ndarray) -> np.ndarray:
        # Sort knot parameters, rebuild systems, keep optimizer state aligned.
        for ui, order in _sort_knots_with_perms(model):
            for s in slots:
                if s.unit == ui and s.name == "knots":
                    opt.permute(s.sl, order)
        return get_params(model, slots, size)

    for epoch in range(config.max_epochs):
        order_idx = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order_idx[start : start + batch]
            if dynamic:
                theta = sync_sorted(theta)
            g = gradients(model, X[idx], y[idx], config, slots, size, cache, idx)
            opt.step(theta, g)
            set_params(model, slots, theta)

        if dynamic:
            theta = sync_sorted(theta)
            refresh_centering(model, X, only_trainable=True)
            theta = get_params(model, slots, size)
            cache = build_cache()

        tl = full_train_loss()
        if not np.isfinite(tl):
            raise DivergedFit(f"training loss became non-finite at epoch {epoch}")
        train_hist.append(tl)
        metric = tl
        if has_val:
            vl = val_metric()
            val_hist.append(vl)
            metric = vl
            if vl < best_val:
                best_val = vl
                best_snapshot = (
                    theta.copy(),
                    [u.center_means.copy() for u in model.units],
                )
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break
        if metric < plateau_best - config.plateau_tol:
            plateau_best = metric
            plateau_stall = 0
        else:
            plateau_stall += 1
            if plateau_stall >= config.plateau_patience:
                opt.lr *= config.plateau_factor
                plateau_stall = 0

    epochs_run = len(train_hist)
    if has_val and best_snapshot is not None:
        theta, means = best_snapshot
        set_params(model, slots, theta)
        sort_knots(model)
        for u, m in zip(model.units, means):
            u.center_means = m.copy()
    freeze_centering(model, X)
    return FitResult(
        model=model,
        train_loss=train_hist,
        val_loss=val_hist if has_val else None,
        epochs=epochs_run,
        unit_penalties=penalty_terms(model, config),
    )


# --- closed-form oracle -------------------------------------------------------


def penalized_least_squares_oracle(X, y, lam: float, S=None) -> np.ndarray:
    """Gaussian fixed-basis solution: (X'X + 2 n lam S)^-1 X'y.

    Scaled so the gradient of total_loss vanishes at the returned
    coefficients.  Retries once with a 1e-10 ridge on factorization failure.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    A = X.T @ X
    if S is not None and lam != 0.0:
        A = A + (2.0 * n * lam) * np.asarray(S, dtype=float)
    b = X.T @ y
    for jitter in (0.0, 1e-10):
        try:
            c = cho_factor(A + jitter * np.eye(k), lower=True)
            return cho_solve(c, b)
        except (LinAlgError, ValueError):
            continue
    raise SingularNormalEquations("normal equations singular even after ridge jitter")
