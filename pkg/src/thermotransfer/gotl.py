"""Better-reply adaptation of the source/target mixing weight.

The combined predictor is ``(1 - alpha) * f_target + alpha * f_source`` with
``alpha`` restricted to the grid ``{0, 1/n, ..., 1}``.  The discounted error of
any grid weight is a quadratic in ``alpha``, so it is tracked through three
running sums instead of one account per grid point::

    A = sum d * e_S**2      B = sum d * e**2      C = sum d * e * e_S
    R(alpha) = (1 - alpha)**2 B + alpha**2 A + 2 alpha (1 - alpha) C
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import rollout_arrays


@dataclass(frozen=True)
class WeightGrid:
    n: int = 40

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs 1/delta >= 2")

    @classmethod
    def from_delta(cls, delta: float) -> "WeightGrid":
        n = round(1.0 / delta)
        if not 0 < delta < 1 or abs(n * delta - 1.0) > 1e-9:
            raise ValueError(f"1/delta must be an integer, got delta={delta}")
        return cls(n)

    @property
    def delta(self) -> float:
        return 1.0 / self.n

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def value(self, index: int) -> float:
        return index / self.n

    def index_of(self, alpha: float) -> int:
        i = round(alpha * self.n)
        if abs(i - alpha * self.n) > 1e-9 or not 0 <= i <= self.n:
            raise ValueError(f"alpha={alpha} is not on the grid of step {self.delta}")
        return i


@dataclass(frozen=True)
class IntervalErrors:
    """Errors of the target and source predictors over one evaluation interval."""

    target_errors: np.ndarray
    source_errors: np.ndarray
    discount: float = 0.995

    def __post_init__(self):
        e = np.asarray(self.target_errors, dtype=float).ravel()
        es = np.asarray(self.source_errors, dtype=float).ravel()
        if e.shape != es.shape:
            raise ValueError("target and source error sequences differ in length")
        object.__setattr__(self, "target_errors", e)
        object.__setattr__(self, "source_errors", es)

    @property
    def weights(self) -> np.ndarray:
        # the last step of the interval gets weight 1, the first discount**(M-1)
        M = len(self.target_errors)
        return self.discount ** np.arange(M - 1, -1, -1, dtype=float)

    def statistics(self) -> tuple[float, float, float]:
        d, e, es = self.weights, self.target_errors, self.source_errors
        return float(d @ (es * es)), float(d @ (e * e)), float(d @ (e * es))


@dataclass(frozen=True)
class GotlState:
    alpha_index: int
    grid: WeightGrid = WeightGrid()
    source_sq: float = 0.0
    target_sq: float = 0.0
    cross: float = 0.0
    interval_index: int = 1
    discount: float = 0.995
    interval_forgetting: float = 1.0

    def __post_init__(self):
        if not 0 <= self.alpha_index <= self.grid.n:
            raise ValueError("alpha outside [0, 1]")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not 0 < self.interval_forgetting <= 1:
            raise ValueError("interval_forgetting must lie in (0, 1]")
        if self.source_sq < 0 or self.target_sq < 0:
            raise ValueError("error accounts must be nonnegative")

    @property
    def alpha(self) -> float:
        return self.grid.value(self.alpha_index)

    @property
    def delta(self) -> float:
        return self.grid.delta

    def risk(self, alpha) -> np.ndarray | float:
        """Discounted cumulative squared error of the combined predictor at ``alpha``."""
        return quadratic_risk(alpha, self.source_sq, self.target_sq, self.cross)


def gotl_init(alpha: float = 1.0, delta: float = 0.025, discount: float = 0.995,
              interval_forgetting: float = 1.0) -> GotlState:
    grid = WeightGrid.from_delta(delta)
    return GotlState(grid.index_of(alpha), grid, discount=discount,
                     interval_forgetting=interval_forgetting)


def quadratic_risk(alpha, A: float, B: float, C: float):
    alpha = np.asarray(alpha, dtype=float)
    # expanded around alpha = 0 so identical error processes give a flat curve
    r = B + alpha * alpha * (A + B - 2.0 * C) - 2.0 * alpha * (B - C)
    return float(r) if r.ndim == 0 else r


def combined_predict(f_target, f_source, alpha: float, x):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    return (1.0 - alpha) * f_target(x) + alpha * f_source(x)


def combined_predictor(f_target, f_source, alpha: float) -> Callable:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    return lambda x: (1.0 - alpha) * f_target(x) + alpha * f_source(x)


def add_statistics(state: GotlState, A: float, B: float, C: float) -> GotlState:
    rho = state.interval_forgetting
    return replace(
        state,
        source_sq=rho * state.source_sq + A,
        target_sq=rho * state.target_sq + B,
        cross=rho * state.cross + C,
    )


def interval_error_update(state: GotlState, errs: IntervalErrors) -> GotlState:
    if errs.discount != state.discount:
        errs = IntervalErrors(errs.target_errors, errs.source_errors, state.discount)
    return add_statistics(state, *errs.statistics())


def neighbor_set(alpha: float, delta: float) -> list[float]:
    grid = WeightGrid.from_delta(delta)
    return [grid.value(i) for i in _neighbor_indices(grid.index_of(alpha), grid.n)]


def _neighbor_indices(i: int, n: int) -> list[int]:
    # only the end points lose a neighbour, so every grid weight stays reachable
    if i == 0:
        return [0, 1]
    if i == n:
        return [n - 1, n]
    return [i - 1, i, i + 1]


def better_reply(state: GotlState) -> float | None:
    """Neighbouring grid weight with strictly lower risk, or ``None``.

    When both neighbours improve, the lower-risk one wins and exact ties go to
    the smaller weight.
    """
    i = state.alpha_index
    current = state.risk(state.grid.value(i))
    best = None
    best_risk = current
    for j in _neighbor_indices(i, state.grid.n):
        if j == i:
            continue
        r = state.risk(state.grid.value(j))
        if r < best_risk:
            best, best_risk = j, r
    return None if best is None else state.grid.value(best)


def gotl_step(state: GotlState, errs: IntervalErrors | None = None,
              f_target_next=None, f_source=None):
    """Close evaluation interval ``k`` and choose the weight for interval ``k+1``.

    Returns the new state and, when both predictors are supplied, the combined
    predictor to use over the next interval.
    """
    if errs is not None:
        state = interval_error_update(state, errs)
    reply = better_reply(state)
    index = state.alpha_index if reply is None else state.grid.index_of(reply)
    state = replace(state, alpha_index=index, interval_index=state.interval_index + 1)
    predictor = None
    if f_target_next is not None and f_source is not None:
        predictor = combined_predictor(f_target_next, f_source, state.alpha)
    return state, predictor


def closed_form_alpha(A: float, B: float, C: float, current: float | None = None) -> float:
    """Unconstrained minimiser of the quadratic risk, clipped to ``[0, 1]``."""
    if A < 0 or B < 0:
        raise ValueError("squared-error sums must be nonnegative")
    curvature = A + B - 2.0 * C
    if curvature <= 0:
        if current is None:
            raise ValueError("flat risk has no unique minimiser; pass the current alpha")
        return current
    return float(np.clip((B - C) / curvature, 0.0, 1.0))


def evaluate_interval(f_target, f_source, alpha: float, y, u, t_k: int, horizon: int, lag: int,
                      discount: float = 0.995):
    """Roll the combined predictor out from row ``t_k`` and score both members.

    Both members are evaluated on the feature vectors of the deployed
    combined rollout, so the stored errors reproduce its loss exactly at
    the current weight. Returns ``(IntervalErrors, combined_predictions)``.
    """
    F = combined_predictor(f_target, f_source, alpha)
    pred, X = rollout_arrays(F, y[:t_k + 1], u[:t_k], u[t_k:t_k + horizon], lag,
                             return_features=True)
    truth = np.asarray(y[t_k + 1:t_k + 1 + horizon], dtype=float)
    if len(truth) < horizon:
        raise ValueError("interval extends past the available measurements")
    errs = IntervalErrors(f_target(X) - truth, f_source(X) - truth, discount)
    return errs, pred
