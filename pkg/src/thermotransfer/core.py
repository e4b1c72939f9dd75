"""Shared data types, lagged features and multi-step rollout prediction.

Conventions used throughout the package:

* ``y[t]`` is the zone temperature measured at step ``t``.
* ``u[t]`` holds the inputs applied during ``[t, t+1)``: water flow, inlet
  water temperature, outdoor temperature, solar gain and occupancy.
* The regression input for ``y[t]`` is
  ``[y[t-1], ..., y[t-lag], u[t-1], ..., u[t-lag], 1]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

INPUT_NAMES = ("flow", "inlet_temp", "outdoor_temp", "solar_gain", "occupancy")
N_INPUTS = len(INPUT_NAMES)

PredictFn = Callable[[np.ndarray], np.ndarray]


class InsufficientHistoryError(ValueError):
    """Raised when fewer than ``lag`` past samples are available."""


class HorizonError(ValueError):
    """Raised when a rollout asks for more steps than inputs were supplied."""


@dataclass(frozen=True)
class SampleRecord:
    time_index: int
    output: float
    inputs: tuple[float, ...]


@dataclass(frozen=True)
class HorizonSpec:
    sampling_period_h: float = 0.5
    horizon_steps: int = 12
    discount: float = 0.995

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.sampling_period_h <= 0:
            raise ValueError("sampling_period_h must be positive")

    @property
    def horizon_h(self) -> float:
        return self.horizon_steps * self.sampling_period_h


@dataclass(frozen=True)
class Dataset:
    """Column-oriented time series for one house.

    ``t`` holds contiguous integer step indices, ``y`` the outputs and ``u``
    an ``(n, m_in)`` array of inputs.
    """

    t: np.ndarray
    y: np.ndarray
    u: np.ndarray
    domain_id: str = "target"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        y = np.asarray(self.y, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if not (len(t) == len(y) == len(u)):
            raise ValueError("t, y and u must have the same length")
        if len(t) > 1 and np.any(np.diff(t) != 1):
            raise ValueError("time indices must be contiguous and increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord], domain_id="target"):
        if not records:
            raise ValueError("empty record list")
        widths = {len(r.inputs) for r in records}
        if len(widths) != 1:
            raise ValueError("inputs length must be constant across records")
        return cls(
            t=np.array([r.time_index for r in records]),
            y=np.array([r.output for r in records]),
            u=np.array([r.inputs for r in records]),
            domain_id=domain_id,
        )

    @property
    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(int(ti), float(yi), tuple(float(v) for v in ui))
            for ti, yi, ui in zip(self.t, self.y, self.u)
        ]

    @property
    def n_inputs(self) -> int:
        return self.u.shape[1]

    def __len__(self):
        return len(self.t)

    def position(self, t: int) -> int:
        """Row index of absolute time ``t``."""
        if len(self.t) == 0:
            raise IndexError("empty dataset")
        pos = int(t) - int(self.t[0])
        if pos < 0 or pos >= len(self.t):
            raise IndexError(f"time index {t} outside dataset")
        return pos

    def slice(self, start: int, stop: int) -> "Dataset":
        """Rows ``start:stop`` by position, keeping absolute time indices."""
        return Dataset(self.t[start:stop], self.y[start:stop], self.u[start:stop],
                       self.domain_id)

    def to_csv(self, path) -> None:
        path = Path(path)
        header = ["t", "y"] + [f"u{i + 1}" for i in range(self.n_inputs)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for ti, yi, ui in zip(self.t, self.y, self.u):
                w.writerow([int(ti), repr(float(yi))] + [repr(float(v)) for v in ui])

    @classmethod
    def from_csv(cls, path, domain_id="target") -> "Dataset":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:2] != ["t", "y"] or not all(h.startswith("u") for h in header[2:]):
            raise ValueError(f"unexpected dataset header {header}")
        arr = np.array([[float(v) for v in row] for row in body], dtype=float)
        return cls(arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2:], domain_id)


def feature_length(lag: int, n_inputs: int) -> int:
    return lag * (1 + n_inputs) + 1


def feature_names(lag: int, n_inputs: int) -> list[str]:
    names = [f"y_lag{i}" for i in range(1, lag + 1)]
    for i in range(1, lag + 1):
        names += [f"u{c + 1}_lag{i}" for c in range(n_inputs)]
    return names + ["intercept"]


def _features(y_lags: np.ndarray, u_lags: np.ndarray) -> np.ndarray:
    # y_lags: (..., lag) most recent first; u_lags: (..., lag, m_in) most recent first
    lead = y_lags.shape[:-1]
    ones = np.ones(lead + (1,))
    return np.concatenate([y_lags, u_lags.reshape(lead + (-1,)), ones], axis=-1)


def build_feature_vector(data: Dataset, t: int, lag: int) -> np.ndarray:
    """Regression input for predicting ``y[t]`` from the ``lag`` previous samples."""
    if lag < 1:
        raise ValueError("lag order must be >= 1")
    t0 = int(data.t[0]) if len(data) else 0
    if t - lag < t0:
        raise InsufficientHistoryError(f"t={t} needs {lag} samples of history")
    pos = data.position(t - 1)
    idx = np.arange(pos, pos - lag, -1)
    return _features(data.y[idx], data.u[idx])


def build_design_matrix(data: Dataset, lag: int) -> tuple[np.ndarray, np.ndarray]:
    """All constructible (features, target) pairs of a dataset."""
    if lag < 1:
        raise ValueError("lag order must be >= 1")
    n = len(data)
    if n <= lag:
        raise InsufficientHistoryError(f"dataset of length {n} is too short for lag {lag}")
    rows = np.arange(lag, n)
    idx = rows[:, None] - np.arange(1, lag + 1)[None, :]
    X = _features(data.y[idx], data.u[idx])
    return X, data.y[rows]


def as_batch_predict(predict: PredictFn) -> PredictFn:
    """Wrap a per-vector predictor so it also accepts a 2-D batch."""

    def batched(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.asarray(predict(X), dtype=float)
        return np.array([float(predict(row)) for row in X])

    return batched


def rollout_arrays(predict: PredictFn, y_past, u_past, u_future, lag: int,
                   return_features: bool = False):
    """Multi-step prediction feeding predictions back as lagged outputs.

    ``y_past`` holds measured outputs up to the current step ``t_k`` (at least
    ``lag`` values), ``u_past`` the inputs applied before ``t_k`` (at least
    ``lag - 1`` rows) and ``u_future`` the inputs applied at ``t_k, ...,
    t_k + M - 1``. ``u_future`` may carry a leading batch axis ``(B, M, m_in)``;
    ``predict`` then receives ``(B, d)`` feature matrices.

    Returns the predictions for ``t_k + 1, ..., t_k + M`` with shape ``(M,)``
    or ``(B, M)``; with ``return_features`` also the feature vectors fed to
    ``predict``, shaped ``(M, d)`` or ``(B, M, d)``.
    """
    y_past = np.asarray(y_past, dtype=float)
    u_past = np.asarray(u_past, dtype=float)
    u_future = np.asarray(u_future, dtype=float)
    if len(y_past) < lag:
        raise InsufficientHistoryError(f"need {lag} past outputs, got {len(y_past)}")
    if lag > 1 and len(u_past) < lag - 1:
        raise InsufficientHistoryError(f"need {lag - 1} past inputs, got {len(u_past)}")
    batched = u_future.ndim == 3
    if not batched:
        u_future = u_future[None]
    B, M, m_in = u_future.shape

    y_buf = np.empty((B, lag + M))
    y_buf[:, :lag] = y_past[len(y_past) - lag:]
    u_buf = np.empty((B, lag - 1 + M, m_in))
    if lag > 1:
        u_buf[:, :lag - 1] = u_past[len(u_past) - (lag - 1):]
    u_buf[:, lag - 1:] = u_future

    feats = np.empty((B, M, feature_length(lag, m_in))) if return_features else None
    for j in range(M):
        # predicting position lag + j in y_buf; lags are y_buf[lag+j-1 .. j]
        y_lags = y_buf[:, j:lag + j][:, ::-1]
        u_lags = u_buf[:, j:lag + j][:, ::-1]
        X = _features(y_lags, u_lags)
        if feats is not None:
            feats[:, j] = X
        y_buf[:, lag + j] = np.asarray(predict(X), dtype=float).reshape(B)
    out = y_buf[:, lag:]
    if not batched:
        out = out[0]
        feats = None if feats is None else feats[0]
    return (out, feats) if return_features else out


def rollout_predict(predict: PredictFn, data: Dataset, t_k: int, spec: HorizonSpec,
                    lag: int, true_inputs=None) -> np.ndarray:
    """Predict ``y[t_k+1 .. t_k+M]`` from measurements up to ``t_k``.

    Inputs over the horizon come from ``true_inputs`` when given (``M`` rows,
    applied at ``t_k .. t_k+M-1``) and otherwise from ``data`` itself.
    """
    M = spec.horizon_steps
    pos = data.position(t_k)
    if true_inputs is None:
        if pos + M > len(data):
            raise HorizonError(f"dataset ends before t_k + {M}")
        u_future = data.u[pos:pos + M]
    else:
        u_future = np.asarray(true_inputs, dtype=float)
        if u_future.ndim == 1:
            u_future = u_future[:, None]
        if len(u_future) < M:
            raise HorizonError(f"horizon of {M} steps exceeds {len(u_future)} supplied inputs")
        u_future = u_future[:M]
    if pos + 1 < lag:
        raise InsufficientHistoryError(f"t_k={t_k} needs {lag} measured outputs")
    return rollout_arrays(predict, data.y[:pos + 1], data.u[:pos], u_future, lag)
