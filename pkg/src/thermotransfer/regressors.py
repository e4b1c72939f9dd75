"""Batch ridge regression (offline source model) and exponentially weighted RLS."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .core import Dataset, build_design_matrix, feature_names

DEFAULT_RIDGE = 1e-8
DEFAULT_P0 = 1e4


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    lag: int | None = None
    n_inputs: int | None = None

    def __post_init__(self):
        w = np.asarray(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(w)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", w)

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coefficients

    __call__ = predict

    def save(self, path) -> None:
        names = (feature_names(self.lag, self.n_inputs) if self.lag is not None
                 else [f"w{i}" for i in range(len(self.coefficients))])
        with Path(path).open("w", newline="") as fh:
            fh.write(f"# lag={self.lag} m_in={self.n_inputs}\n")
            w = csv.writer(fh)
            w.writerow(["feature", "coefficient"])
            for name, c in zip(names, self.coefficients):
                w.writerow([name, repr(float(c))])

    @classmethod
    def load(cls, path) -> "LinearModel":
        with Path(path).open(newline="") as fh:
            first = fh.readline()
            m = re.match(r"# lag=(\w+) m_in=(\w+)", first)
            if not m:
                raise ValueError(f"{path}: missing layout header")
            rows = list(csv.reader(fh))
        lag = None if m.group(1) == "None" else int(m.group(1))
        n_inputs = None if m.group(2) == "None" else int(m.group(2))
        coefs = [float(r[1]) for r in rows[1:]]
        if lag is not None and [r[0] for r in rows[1:]] != feature_names(lag, n_inputs):
            raise ValueError(f"{path}: feature names do not match lag={lag}, m_in={n_inputs}")
        return cls(np.array(coefs), lag, n_inputs)


def solve_ridge(X, y, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Minimise ``||Xw - y||^2 + ridge * ||w||^2`` via a Cholesky solve."""
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    G = X.T @ X
    if ridge > 0:
        G = G + ridge * np.eye(G.shape[0])
    try:
        c, low = scipy.linalg.cho_factor(G, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("normal equations are singular; use ridge > 0") from exc
    if ridge == 0:
        # cho_factor accepts numerically singular matrices with tiny pivots
        d = np.abs(np.diag(c))
        if d.min() <= 1e-10 * d.max():
            raise RankDeficiencyError("normal equations are rank deficient; use ridge > 0")
    return scipy.linalg.cho_solve((c, low), X.T @ y)


def fit_batch_linear(data: Dataset, lag: int, ridge: float = DEFAULT_RIDGE) -> LinearModel:
    X, y = build_design_matrix(data, lag)
    return LinearModel(solve_ridge(X, y, ridge), lag, data.n_inputs)


@dataclass(frozen=True)
class RlsState:
    coefficients: np.ndarray
    inverse_covariance: np.ndarray
    forgetting: float
    sample_count: int = 0

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coefficients

    __call__ = predict

    def snapshot(self) -> LinearModel:
        return LinearModel(self.coefficients.copy())


def rls_init(dim: int, forgetting: float = 0.999, p0: float = DEFAULT_P0) -> RlsState:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not p0 > 0:
        raise ValueError("p0 must be positive")
    if not 0.0 < forgetting <= 1.0:
        raise ValueError("forgetting factor must lie in (0, 1]")
    return RlsState(np.zeros(dim), p0 * np.eye(dim), float(forgetting), 0)


def rls_update(state: RlsState, x, y: float) -> RlsState:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != state.coefficients.shape:
        raise ValueError(f"feature length {x.size} != model dimension {state.coefficients.size}")
    if not (np.all(np.isfinite(x)) and np.isfinite(y)):
        raise ValueError("non-finite sample passed to rls_update")
    lam = state.forgetting
    P = state.inverse_covariance
    Px = P @ x
    g = Px / (lam + x @ Px)
    w = state.coefficients + g * (y - state.coefficients @ x)
    P = (P - np.outer(g, Px)) / lam
    P = 0.5 * (P + P.T)
    return replace(state, coefficients=w, inverse_covariance=P,
                   sample_count=state.sample_count + 1)
