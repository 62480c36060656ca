"""Dataset ingestion, preprocessing, cross-validation splits and metrics.

Preprocessing follows the benchmark protocol: numeric features go through a
rank-based quantile map onto [-1, 1] (mid-rank empirical CDF of the training
column, linearly interpolated, clamped beyond the training range), targets
of regression tasks are centered and scaled to unit variance, and
categorical features are one-hot encoded.  Every statistic is fitted on the
training split only; the fitted state is immutable and reusable across
folds.

The k-fold shuffler is a documented xorshift64* Fisher-Yates permutation,
deterministic for a given seed.  It intentionally does not reproduce any
third-party library's shuffle order bit-for-bit.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyFile,
    SchemaMismatch,
    SingleClassAUC,
    TooFewRows,
    ZeroVariance,
)


@dataclass
class ColumnMeta:
    name: str  # post-encoding column name
    kind: str  # 'numeric' | 'one-hot'
    source: str  # raw column it came from


@dataclass
class Schema:
    """Declared column kinds plus the target."""

    columns: dict[str, str]  # raw column name -> 'numeric' | 'categorical'
    target: str
    task: str  # 'regression' | 'binary'
    positive_label: str | None = None  # for string-valued binary targets

    def __post_init__(self):
        for name, kind in self.columns.items():
            if kind not in ("numeric", "categorical"):
                raise SchemaMismatch(f"column {name!r}: unknown kind {kind!r}")
        if self.task not in ("regression", "binary"):
            raise SchemaMismatch(f"unknown task {self.task!r}")


@dataclass
class RawTable:
    columns: dict  # name -> float array (numeric) | list[str] (categorical)
    target: np.ndarray
    n: int
    n_dropped_missing_target: int = 0
    n_dropped_missing_feature: int = 0


def _is_missing(cell: str) -> bool:
    return cell is None or cell.strip() in ("", "NA", "NaN", "nan", "null")


def load_csv(path, schema: Schema) -> RawTable:
    """Load and type-check a headered CSV against the schema.

    Rows with a missing target are dropped and counted; rows with missing
    feature cells likewise (imputation is out of scope).  An untypeable
    numeric cell raises SchemaMismatch naming the row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        wanted = list(schema.columns) + [schema.target]
        for name in wanted:
            if name not in header:
                raise SchemaMismatch(f"{path}: column {name!r} not found in header")
        pos = {name: header.index(name) for name in wanted}

        cols: dict[str, list] = {name: [] for name in schema.columns}
        target: list = []
        dropped_target = 0
        dropped_feature = 0
        for rownum, row in enumerate(reader, start=2):  # header is line 1
            if len(row) == 0 or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise SchemaMismatch(f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}")
            if _is_missing(row[pos[schema.target]]):
                dropped_target += 1
                continue
            if any(_is_missing(row[pos[n]]) for n in schema.columns):
                dropped_feature += 1
                continue
            for name, kind in schema.columns.items():
                cell = row[pos[name]].strip()
                if kind == "numeric":
                    try:
                        cols[name].append(float(cell))
                    except ValueError:
                        raise SchemaMismatch(
                            f"{path}: row {rownum}, column {name!r}: cannot parse {cell!r} as numeric"
                        ) from None
                else:
                    cols[name].append(cell)
            tcell = row[pos[schema.target]].strip()
            if schema.task == "regression":
                try:
                    target.append(float(tcell))
                except ValueError:
                    raise SchemaMismatch(
                        f"{path}: row {rownum}, column {schema.target!r}: cannot parse {tcell!r} as numeric"
                    ) from None
            else:
                target.append(tcell)

    n = len(target)
    if n == 0:
        raise EmptyFile(f"{path}: no usable data rows")
    if dropped_target:
        warnings.warn(f"{path}: dropped {dropped_target} rows with missing target")
    if dropped_feature:
        warnings.warn(f"{path}: dropped {dropped_feature} rows with missing features")

    typed = {}
    for name, kind in schema.columns.items():
        typed[name] = np.asarray(cols[name], dtype=float) if kind == "numeric" else cols[name]

    if schema.task == "binary":
        vals = sorted(set(target))
        if set(vals) <= {"0", "1", "0.0", "1.0"}:
            yarr = np.asarray([float(v) for v in target])
        else:
            if schema.positive_label is None:
                raise SchemaMismatch(
                    f"{path}: binary target {schema.target!r} has labels {vals[:5]}; set positive_label"
                )
            yarr = np.asarray([1.0 if v == schema.positive_label else 0.0 for v in target])
    else:
        yarr = np.asarray(target, dtype=float)
    return RawTable(
        columns=typed,
        target=yarr,
        n=n,
        n_dropped_missing_target=dropped_target,
        n_dropped_missing_feature=dropped_feature,
    )


# --- quantile transform ---------------------------------------------------------


@dataclass(frozen=True)
class QuantileMap:
    """Mid-rank empirical CDF of a training column, mapped onto [-1, 1]."""

    values: np.ndarray  # sorted distinct training values
    ranks: np.ndarray  # mid-rank CDF at each value, in (0, 1)
    constant: bool = False


def fit_quantile_transform(train_column) -> QuantileMap:
    x = np.asarray(train_column, dtype=float).ravel()
    values, counts = np.unique(x, return_counts=True)
    if values.size < 2:
        warnings.warn("constant column: quantile transform maps it to all zeros")
        return QuantileMap(values=values, ranks=np.array([0.5]), constant=True)
    n = x.size
    cum = np.cumsum(counts)
    ranks = (cum - 0.5 * counts) / n
    return QuantileMap(values=values, ranks=ranks, constant=False)


def apply_quantile_transform(state: QuantileMap, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if state.constant:
        return np.zeros_like(v)
    r = np.interp(v, state.values, state.ranks)
    out = 2.0 * r - 1.0
    out = np.where(v < state.values[0], -1.0, out)
    out = np.where(v > state.values[-1], 1.0, out)
    return out


# --- target standardization ------------------------------------------------------


@dataclass(frozen=True)
class TargetScaler:
    mean: float
    std: float

    def apply(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def invert(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean


def standardize_target(train_targets) -> TargetScaler:
    y = np.asarray(train_targets, dtype=float).ravel()
    mu = float(np.mean(y))
    sigma = float(np.std(y))
    if sigma <= 0 or not np.isfinite(sigma):
        raise ZeroVariance("target has zero variance on the training split")
    return TargetScaler(mean=mu, std=sigma)


# --- one-hot encoding -------------------------------------------------------------


@dataclass(frozen=True)
class OneHotMap:
    categories: tuple[str, ...]  # sorted training categories


def fit_one_hot(train_column) -> OneHotMap:
    return OneHotMap(categories=tuple(sorted(set(train_column))))


def apply_one_hot(state: OneHotMap, column) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(state.categories)}
    out = np.zeros((len(column), len(state.categories)))
    unseen = 0
    for i, v in enumerate(column):
        j = lookup.get(v)
        if j is None:
            unseen += 1
        else:
            out[i, j] = 1.0
    if unseen:
        warnings.warn(f"{unseen} values outside the training categories mapped to all-zero rows")
    return out


# --- whole-table preprocessing -----------------------------------------------------


@dataclass
class PreprocessState:
    """All statistics fitted on the training split; immutable afterwards."""

    schema: Schema
    quantile_maps: dict[str, QuantileMap]
    one_hot_maps: dict[str, OneHotMap]
    target_scaler: TargetScaler | None
    feature_meta: list[ColumnMeta] = field(default_factory=list)

    @property
    def feature_names(self) -> list[str]:
        return [m.name for m in self.feature_meta]


def fit_preprocess(table: RawTable, schema: Schema) -> PreprocessState:
    qmaps = {}
    omaps = {}
    meta: list[ColumnMeta] = []
    for name, kind in schema.columns.items():
        if kind == "numeric":
            qmaps[name] = fit_quantile_transform(table.columns[name])
            meta.append(ColumnMeta(name=name, kind="numeric", source=name))
        else:
            omaps[name] = fit_one_hot(table.columns[name])
            for cat in omaps[name].categories:
                meta.append(ColumnMeta(name=f"{name}={cat}", kind="one-hot", source=name))
    scaler = standardize_target(table.target) if schema.task == "regression" else None
    return PreprocessState(
        schema=schema,
        quantile_maps=qmaps,
        one_hot_maps=omaps,
        target_scaler=scaler,
        feature_meta=meta,
    )


def apply_preprocess(state: PreprocessState, table: RawTable) -> tuple[np.ndarray, np.ndarray]:
    """Encode a table with fitted statistics; returns (X, y)."""
    blocks = []
    for name, kind in state.schema.columns.items():
        if kind == "numeric":
            blocks.append(apply_quantile_transform(state.quantile_maps[name], table.columns[name])[:, None])
        else:
            blocks.append(apply_one_hot(state.one_hot_maps[name], table.columns[name]))
    X = np.hstack(blocks) if blocks else np.zeros((table.n, 0))
    y = table.target
    if state.target_scaler is not None:
        y = state.target_scaler.apply(y)
    return X, np.asarray(y, dtype=float)


# --- preprocess state serialization -------------------------------------------------


def preprocess_to_dict(state: PreprocessState) -> dict:
    return {
        "schema": {
            "columns": dict(state.schema.columns),
            "target": state.schema.target,
            "task": state.schema.task,
            "positive_label": state.schema.positive_label,
        },
        "quantile_maps": {
            name: {"values": m.values.tolist(), "ranks": m.ranks.tolist(), "constant": m.constant}
            for name, m in state.quantile_maps.items()
        },
        "one_hot_maps": {name: list(m.categories) for name, m in state.one_hot_maps.items()},
        "target_scaler": (
            None
            if state.target_scaler is None
            else {"mean": state.target_scaler.mean, "std": state.target_scaler.std}
        ),
    }


def preprocess_from_dict(d: dict) -> PreprocessState:
    schema = Schema(
        columns=dict(d["schema"]["columns"]),
        target=d["schema"]["target"],
        task=d["schema"]["task"],
        positive_label=d["schema"].get("positive_label"),
    )
    qmaps = {
        name: QuantileMap(
            values=np.asarray(m["values"], dtype=float),
            ranks=np.asarray(m["ranks"], dtype=float),
            constant=bool(m["constant"]),
        )
        for name, m in d["quantile_maps"].items()
    }
    omaps = {name: OneHotMap(categories=tuple(cats)) for name, cats in d["one_hot_maps"].items()}
    ts = d["target_scaler"]
    scaler = None if ts is None else TargetScaler(mean=float(ts["mean"]), std=float(ts["std"]))
    meta: list[ColumnMeta] = []
    for name, kind in schema.columns.items():
        if kind == "numeric":
            meta.append(ColumnMeta(name=name, kind="numeric", source=name))
        else:
            for cat in omaps[name].categories:
                meta.append(ColumnMeta(name=f"{name}={cat}", kind="one-hot", source=name))
    return PreprocessState(
        schema=schema,
        quantile_maps=qmaps,
        one_hot_maps=omaps,
        target_scaler=scaler,
        feature_meta=meta,
    )


# --- k-fold splitting ----------------------------------------------------------------


class _XorShift64Star:
    """xorshift64* PRNG; documented shuffler for reproducible fold assignment."""

    MASK = (1 << 64) - 1
    MULT = 0x2545F4914F6CDD1D

    def __init__(self, seed: int):
        self.state = (int(seed) & self.MASK) or 0x9E3779B97F4A7C15

    def next64(self) -> int:
        x = self.state
        x ^= (x >> 12) & self.MASK
        x = (x ^ (x << 25)) & self.MASK
        x ^= (x >> 27) & self.MASK
        self.state = x
        return (x * self.MULT) & self.MASK

    def randbelow(self, bound: int) -> int:
        return self.next64() % bound


def kfold_split(n: int, k: int = 5, seed: int = 101, shuffle: bool = True):
    """Disjoint, exhaustive folds; sizes differ by at most one.

    Shuffles 0..n-1 with a Fisher-Yates pass driven by xorshift64*, then cuts
    the permutation into k contiguous chunks (the first n % k chunks get the
    extra element).  Returns [(train_idx, test_idx), ...].
    """
    if n < k:
        raise TooFewRows(f"cannot split {n} rows into {k} folds")
    idx = np.arange(n)
    if shuffle:
        rng = _XorShift64Star(seed)
        for i in range(n - 1, 0, -1):
            j = rng.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
    base = n // k
    rem = n % k
    folds = []
    start = 0
    for f in range(k):
        size = base + (1 if f < rem else 0)
        test = idx[start : start + size]
        train = np.concatenate([idx[:start], idx[start + size :]])
        folds.append((train.copy(), test.copy()))
        start += size
    return folds


# --- metrics ----------------------------------------------------------------------------


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.size != t.size:
        raise ValueError("length mismatch")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def auc(scores, targets) -> float:
    """Probability a random positive outranks a random negative; ties count half
    (normalized Mann-Whitney U via average ranks)."""
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if s.size != t.size:
        raise ValueError("length mismatch")
    pos = t == 1.0
    n_pos = int(pos.sum())
    n_neg = int(t.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassAUC("AUC needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    r = 1.0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        avg = 0.5 * (r + r + (j - i))
        ranks[order[i : j + 1]] = avg
        r += j - i + 1
        i = j + 1
    rank_sum_pos = float(ranks[pos].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
