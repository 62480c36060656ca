"""Additive model composition: feature units, centering, prediction.

A model is an intercept plus a sum of feature units.  Each unit expands one
feature (or a pair, for tensor-product units) into a basis row, subtracts
per-column centering means so that every unit's contributions sum to zero
over the training data (the intercept absorbs all constants), and takes the
dot product with its coefficients.

Centering means are buffers: they are recomputed from the training data
while basis parameters move and frozen at the end of training.  Both the
refresh and the freeze adjust the intercept so predictions are unchanged
(recentering is a pure reparameterization).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .activations import (
    SilvermanBasis,
    TruncatedPowerBasis,
    eval_silverman_basis,
    eval_truncated_power_basis,
)
from .errors import DimensionMismatch, WrongUnitKind
from .splines import (
    CubicBasisSystem,
    KnotVector,
    build_system,
    eval_basis_matrix,
    place_knots,
)

UNIT_KINDS = ("cubic", "silverman", "truncated", "linear", "tensor")


def tensor_expand(row_i, row_j) -> np.ndarray:
    """Row-major flattened outer product of two univariate basis rows."""
    row_i = np.asarray(row_i, dtype=float)
    row_j = np.asarray(row_j, dtype=float)
    if row_i.ndim != 1 or row_j.ndim != 1:
        raise DimensionMismatch("tensor_expand expects two 1-d basis rows")
    return np.outer(row_i, row_j).ravel()


@dataclass
class FeatureUnit:
    """One additive component with coefficients and centering state."""

    kind: str
    features: tuple[int, ...]
    basis: object
    beta: np.ndarray
    lam: float = 0.0
    learnable_knots: bool = False
    center_means: np.ndarray = None
    center_frozen: bool = False

    def __post_init__(self):
        if self.kind not in UNIT_KINDS:
            raise ValueError(f"unknown unit kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.features = tuple(int(f) for f in self.features)
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if self.beta.size != self.dim:
            raise DimensionMismatch(
                f"beta has length {self.beta.size}, basis dimension is {self.dim}"
            )
        if self.center_means is None:
            self.center_means = np.zeros(self.dim)
        else:
            self.center_means = np.asarray(self.center_means, dtype=float).ravel()
            if self.center_means.size != self.dim:
                raise DimensionMismatch("centering means do not match basis dimension")

    @property
    def dim(self) -> int:
        if self.kind == "cubic":
            return self.basis.k
        if self.kind == "silverman":
            return self.basis.k
        if self.kind == "truncated":
            return self.basis.k
        if self.kind == "linear":
            return 1
        bi, bj = self.basis
        return bi.k * bj.k

    def penalty_matrix(self) -> np.ndarray | None:
        """Unscaled curvature penalty for this unit; None when unpenalized."""
        if self.kind == "cubic":
            return self.basis.Smat
        if self.kind == "tensor":
            bi, bj = self.basis
            return np.kron(bi.Smat, np.eye(bj.k)) + np.kron(np.eye(bi.k), bj.Smat)
        return None

    def raw_design(self, X: np.ndarray) -> np.ndarray:
        """Uncentered basis expansion of this unit's feature column(s)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "linear":
            return X[:, [self.features[0]]]
        if self.kind == "cubic":
            return eval_basis_matrix(self.basis, X[:, self.features[0]])
        if self.kind == "silverman":
            return eval_silverman_basis(self.basis, X[:, self.features[0]])
        if self.kind == "truncated":
            return eval_truncated_power_basis(self.basis, X[:, self.features[0]])
        bi, bj = self.basis
        rows_i = eval_basis_matrix(bi, X[:, self.features[0]])
        rows_j = eval_basis_matrix(bj, X[:, self.features[1]])
        return (rows_i[:, :, None] * rows_j[:, None, :]).reshape(X.shape[0], -1)

    def design(self, X: np.ndarray) -> np.ndarray:
        return self.raw_design(X) - self.center_means

    def contributions(self, X: np.ndarray) -> np.ndarray:
        return self.design(X) @ self.beta

    def n_trainable(self) -> int:
        n = self.beta.size
        if self.kind == "silverman":
            n += 2 * self.basis.k
        if self.kind == "cubic" and self.learnable_knots:
            n += self.basis.k
        return n


def unit_forward(unit: FeatureUnit, row) -> tuple[float, np.ndarray]:
    """Centered basis row and contribution for a single feature vector."""
    row = np.asarray(row, dtype=float).ravel()
    basis_row = unit.design(row[None, :])[0]
    return float(basis_row @ unit.beta), basis_row


@dataclass
class AdditiveModel:
    intercept: float
    family: str
    units: list[FeatureUnit]
    feature_names: list[str]

    def __post_init__(self):
        if self.family not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown family {self.family!r}")
        d = len(self.feature_names)
        seen = set()
        for u in self.units:
            if any(f >= d or f < 0 for f in u.features):
                raise DimensionMismatch(
                    f"unit references feature index {u.features} but model has {d} features"
                )
            key = tuple(sorted(u.features))
            if key in seen:
                raise ValueError(f"duplicate unit for feature set {key}")
            seen.add(key)


def predict_eta_matrix(model: AdditiveModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eta = np.full(X.shape[0], model.intercept)
    for u in model.units:
        eta += u.contributions(X)
    return eta


def _logistic(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def predict_mu_matrix(model: AdditiveModel, X) -> np.ndarray:
    eta = predict_eta_matrix(model, X)
    if model.family == "gaussian":
        return eta
    return _logistic(eta)


def predict_eta(model: AdditiveModel, row) -> float:
    return float(predict_eta_matrix(model, np.asarray(row, dtype=float)[None, :])[0])


def predict_mu(model: AdditiveModel, row) -> float:
    return float(predict_mu_matrix(model, np.asarray(row, dtype=float)[None, :])[0])


def count_params(model: AdditiveModel) -> int:
    """Trainable scalars: intercept, coefficients, learnable knots/centers/bandwidths."""
    return 1 + sum(u.n_trainable() for u in model.units)


def shape_curve(model: AdditiveModel, unit: FeatureUnit, grid) -> np.ndarray:
    """Fitted effect of a univariate unit over a grid, with current centering."""
    if unit.kind == "tensor":
        raise WrongUnitKind("shape_curve is for univariate units; use shape_surface")
    grid = np.asarray(grid, dtype=float).ravel()
    X = np.zeros((grid.size, len(model.feature_names)))
    X[:, unit.features[0]] = grid
    return unit.contributions(X)


def shape_surface(model: AdditiveModel, unit: FeatureUnit, grid_i, grid_j) -> np.ndarray:
    """Fitted bivariate effect on the Cartesian grid, shape (len_i, len_j)."""
    if unit.kind != "tensor":
        raise WrongUnitKind("shape_surface needs a tensor unit")
    grid_i = np.asarray(grid_i, dtype=float).ravel()
    grid_j = np.asarray(grid_j, dtype=float).ravel()
    bi, bj = unit.basis
    Bi = eval_basis_matrix(bi, grid_i)
    Bj = eval_basis_matrix(bj, grid_j)
    Bmat = unit.beta.reshape(bi.k, bj.k)
    center_offset = float(unit.center_means @ unit.beta)
    return Bi @ Bmat @ Bj.T - center_offset


def refresh_centering(model: AdditiveModel, X, only_trainable: bool = True) -> None:
    """Recompute centering means from X; intercept absorbs the shift.

    With ``only_trainable`` the refresh touches only units whose raw
    expansion can change during training (Silverman parameters, learnable
    knots); fixed bases keep their initialization-time means.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    shift = 0.0
    for u in model.units:
        if u.center_frozen:
            continue
        trainable = u.kind == "silverman" or (u.kind == "cubic" and u.learnable_knots)
        if only_trainable and not trainable:
            continue
        new_means = u.raw_design(X).mean(axis=0)
        shift += float((u.center_means - new_means) @ u.beta)
        u.center_means = new_means
    model.intercept += shift


def freeze_centering(model: AdditiveModel, X) -> None:
    """Pin means to exact training-set column means; predictions unchanged."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    shift = 0.0
    for u in model.units:
        if u.center_frozen:
            continue
        new_means = u.raw_design(X).mean(axis=0)
        shift += float((u.center_means - new_means) @ u.beta)
        u.center_means = new_means
        u.center_frozen = True
    model.intercept += shift


def coefficient_slices(model: AdditiveModel) -> tuple[dict, int]:
    """Index map over [intercept | unit coefficients...] for Fisher/posterior work."""
    index_map = {"intercept": slice(0, 1)}
    pos = 1
    for i, u in enumerate(model.units):
        index_map[i] = slice(pos, pos + u.beta.size)
        pos += u.beta.size
    return index_map, pos


# --- unit constructors -------------------------------------------------------


def linear_unit(feature: int) -> FeatureUnit:
    return FeatureUnit(kind="linear", features=(feature,), basis=None, beta=np.zeros(1))


def cubic_unit(
    feature: int,
    data,
    k: int,
    lam: float = 1e-3,
    strategy: str = "quantile",
    learnable_knots: bool = False,
) -> FeatureUnit:
    system = build_system(place_knots(strategy, data, k))
    return FeatureUnit(
        kind="cubic",
        features=(feature,),
        basis=system,
        beta=np.zeros(k),
        lam=lam,
        learnable_knots=learnable_knots,
    )


def silverman_unit(feature: int, data, k: int, lam: float = 0.0) -> FeatureUnit:
    basis = SilvermanBasis.from_data(data, k)
    return FeatureUnit(kind="silverman", features=(feature,), basis=basis, beta=np.zeros(k), lam=lam)


def truncated_unit(feature: int, data, k: int, degree: int = 1) -> FeatureUnit:
    basis = TruncatedPowerBasis(knots=place_knots("quantile", data, k), degree=degree)
    return FeatureUnit(kind="truncated", features=(feature,), basis=basis, beta=np.zeros(basis.k))


def tensor_unit(
    features: tuple[int, int],
    data_i,
    data_j,
    k_i: int,
    k_j: int,
    lam: float = 1e-3,
    strategy: str = "quantile",
) -> FeatureUnit:
    bi = build_system(place_knots(strategy, data_i, k_i))
    bj = build_system(place_knots(strategy, data_j, k_j))
    return FeatureUnit(
        kind="tensor",
        features=tuple(features),
        basis=(bi, bj),
        beta=np.zeros(k_i * k_j),
        lam=lam,
    )


# --- serialization -----------------------------------------------------------


def _unit_to_dict(u: FeatureUnit) -> dict:
    d = {
        "kind": u.kind,
        "features": list(u.features),
        "beta": u.beta.tolist(),
        "lam": float(u.lam),
        "center_means": u.center_means.tolist(),
        "center_frozen": bool(u.center_frozen),
    }
    if u.kind == "cubic":
        d["knots"] = u.basis.knots.tolist()
        d["learnable_knots"] = bool(u.learnable_knots)
    elif u.kind == "silverman":
        d["centers"] = u.basis.centers.tolist()
        d["bandwidths"] = u.basis.bandwidths.tolist()
    elif u.kind == "truncated":
        d["knots"] = u.basis.knots.knots.tolist()
        d["degree"] = int(u.basis.degree)
    elif u.kind == "tensor":
        bi, bj = u.basis
        d["knots_i"] = bi.knots.tolist()
        d["knots_j"] = bj.knots.tolist()
    return d


def _unit_from_dict(d: dict) -> FeatureUnit:
    kind = d["kind"]
    common = dict(
        features=tuple(d["features"]),
        beta=np.asarray(d["beta"], dtype=float),
        lam=float(d["lam"]),
        center_means=np.asarray(d["center_means"], dtype=float),
        center_frozen=bool(d["center_frozen"]),
    )
    if kind == "linear":
        return FeatureUnit(kind="linear", basis=None, **common)
    if kind == "cubic":
        system = build_system(KnotVector(np.asarray(d["knots"], dtype=float)))
        return FeatureUnit(
            kind="cubic", basis=system, learnable_knots=bool(d.get("learnable_knots", False)), **common
        )
    if kind == "silverman":
        basis = SilvermanBasis(
            centers=np.asarray(d["centers"], dtype=float),
            bandwidths=np.asarray(d["bandwidths"], dtype=float),
        )
        return FeatureUnit(kind="silverman", basis=basis, **common)
    if kind == "truncated":
        basis = TruncatedPowerBasis(
            knots=KnotVector(np.asarray(d["knots"], dtype=float)), degree=int(d["degree"])
        )
        return FeatureUnit(kind="truncated", basis=basis, **common)
    if kind == "tensor":
        bi = build_system(KnotVector(np.asarray(d["knots_i"], dtype=float)))
        bj = build_system(KnotVector(np.asarray(d["knots_j"], dtype=float)))
        return FeatureUnit(kind="tensor", basis=(bi, bj), **common)
    raise ValueError(f"unknown unit kind {kind!r}")


def model_to_dict(model: AdditiveModel) -> dict:
    return {
        "family": model.family,
        "intercept": float(model.intercept),
        "feature_names": list(model.feature_names),
        "units": [_unit_to_dict(u) for u in model.units],
    }


def model_from_dict(d: dict) -> AdditiveModel:
    return AdditiveModel(
        intercept=float(d["intercept"]),
        family=d["family"],
        units=[_unit_from_dict(ud) for ud in d["units"]],
        feature_names=list(d["feature_names"]),
    )


def save_model(model: AdditiveModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path) -> AdditiveModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
