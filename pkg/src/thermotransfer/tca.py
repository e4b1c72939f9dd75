"""Transfer Component Analysis over several source houses.

Fits a latent projection in which the source domains have small mean
discrepancy while the pooled variance is preserved, then regresses the
target temperature on the projected features.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import Dataset, HorizonSpec, build_design_matrix, rollout_arrays
from .regressors import DEFAULT_RIDGE, LinearModel, solve_ridge

COMPONENT_GRID = (5, 10, 15, 20, 25, 30)


class IllConditionedError(np.linalg.LinAlgError):
    pass


class ComplexEigenError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Kernel:
    name: str = "linear"
    gamma: float = 1.0

    def __call__(self, A, B=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape[1] != B.shape[1]:
            raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
        if self.name == "linear":
            return A @ B.T
        if self.name == "rbf":
            sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
            return np.exp(-self.gamma * np.maximum(sq, 0.0))
        raise ValueError(f"unknown kernel {self.name!r}")

    @property
    def tag(self) -> str:
        return "linear" if self.name == "linear" else f"rbf:{self.gamma!r}"

    @classmethod
    def from_tag(cls, tag: str) -> "Kernel":
        if tag == "linear":
            return cls()
        name, _, gamma = tag.partition(":")
        return cls(name, float(gamma))


LINEAR = Kernel()


@dataclass(frozen=True)
class DomainLayout:
    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1 or min(sizes) < 1:
            raise ValueError("every domain needs at least one instance")
        object.__setattr__(self, "sizes", sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def n_domains(self) -> int:
        return len(self.sizes)

    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_domains), self.sizes)


def gram_matrix(points, kernel: Kernel = LINEAR) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("expected a non-empty 2-D array of points")
    K = kernel(points)
    return 0.5 * (K + K.T)


def build_L(layout: DomainLayout) -> np.ndarray:
    """Multi-domain MMD matrix.

    Same-domain entries are ``(D-1) / (N^2 n_d^2)`` and cross-domain entries
    ``-1 / (N^2 n_d n_u)``.
    """
    N, D = layout.total, layout.n_domains
    n = np.asarray(layout.sizes, dtype=float)
    lab = layout.labels()
    nd = n[lab]
    L = -1.0 / (N * N * np.outer(nd, nd))
    same = lab[:, None] == lab[None, :]
    L[same] = ((D - 1) / (N * N * nd[:, None] ** 2) * np.ones((1, N)))[same]
    return L


def build_H(N: int) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    return np.eye(N) - np.full((N, N), 1.0 / N)


def solve_tca(K, L, H, mu: float, m: int, cond_limit: float = 1e14) -> tuple[np.ndarray, np.ndarray]:
    """Leading ``m`` generalized eigenvectors of ``KHK v = lam (KLK + mu I) v``.

    Returns ``(W, eigenvalues)``. Columns with a nonzero eigenvalue are scaled
    to unit projected variance, ``w^T K H K w = 1``.
    """
    K = np.asarray(K, dtype=float)
    N = K.shape[0]
    if not mu > 0:
        raise ValueError("mu must be strictly positive")
    if not 1 <= m <= N:
        raise ValueError(f"m={m} must lie in [1, {N}]")
    A = K @ H @ K
    B = K @ L @ K + mu * np.eye(N)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    if np.linalg.cond(B) > cond_limit:
        raise IllConditionedError("KLK + mu*I is near singular; increase mu")
    try:
        lam, V = scipy.linalg.eigh(A, B, subset_by_index=[N - m, N - 1])
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(str(exc)) from exc
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    # eigh normalises v^T B v = 1, hence v^T A v = lam
    tol = 1e-10 * max(1.0, abs(lam[0]))
    scale = np.where(lam > tol, 1.0 / np.sqrt(np.where(lam > tol, lam, 1.0)), 1.0)
    return V * scale, lam


def dense_tca_oracle(K, L, H, mu: float, m: int, imag_tol: float = 1e-8):
    """Leading eigenvectors of ``(KLK + mu I)^{-1} KHK`` via a dense general solver."""
    N = K.shape[0]
    M = np.linalg.solve(K @ L @ K + mu * np.eye(N), K @ H @ K)
    lam, V = np.linalg.eig(M)
    order = np.argsort(-lam.real)[:m]
    lam, V = lam[order], V[:, order]
    if np.max(np.abs(lam.imag)) > imag_tol * max(1.0, np.max(np.abs(lam))):
        raise ComplexEigenError("complex eigenpairs; increase mu")
    return V.real, lam.real


def mmd(sample_a, sample_b, kernel: Kernel = LINEAR) -> float:
    """Squared maximum mean discrepancy, clipped at zero."""
    a = np.atleast_2d(np.asarray(sample_a, dtype=float))
    b = np.atleast_2d(np.asarray(sample_b, dtype=float))
    val = kernel(a).mean() - 2.0 * kernel(a, b).mean() + kernel(b).mean()
    return max(float(val), 0.0)


@dataclass(frozen=True)
class TcaModel:
    training_points: np.ndarray
    projection: np.ndarray
    mu: float
    components: int
    kernel: Kernel = LINEAR
    eigenvalues: np.ndarray | None = None

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.training_points.shape[1]:
            raise ValueError(
                f"point dimension {X.shape[1]} != training dimension {self.training_points.shape[1]}")
        Z = self.kernel(X, self.training_points) @ self.projection
        return Z[0] if single else Z


def fit_tca(domains: Sequence[np.ndarray], mu: float = 1.0, m: int = 5,
            kernel: Kernel = LINEAR) -> TcaModel:
    domains = [np.atleast_2d(np.asarray(d, dtype=float)) for d in domains]
    if len({d.shape[1] for d in domains}) != 1:
        raise ValueError("all domains must share the feature dimension")
    layout = DomainLayout(tuple(len(d) for d in domains))
    points = np.vstack(domains)
    K = gram_matrix(points, kernel)
    W, lam = solve_tca(K, build_L(layout), build_H(layout.total), mu, m)
    return TcaModel(points, W, mu, m, kernel, lam)


def project(model: TcaModel, x) -> np.ndarray:
    return model.project(x)


class MultiSourcePredictor:
    """``x -> h(theta(x))``: ridge regression on TCA-projected features.

    Features are standardized with source statistics, the intercept column is
    dropped before projection and re-appended for the regression.
    """

    def __init__(self, tca: TcaModel, mean, scale, regression: LinearModel, lag: int,
                 n_inputs: int):
        self.tca = tca
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.regression = regression
        self.lag = lag
        self.n_inputs = n_inputs

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = (X[..., :-1] - self.mean) / self.scale
        theta = self.tca.project(np.atleast_2d(Z))
        return np.hstack([theta, np.ones((len(theta), 1))])

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        out = self.transform(np.atleast_2d(X)) @ self.regression.coefficients
        return out[0] if X.ndim == 1 else out

    __call__ = predict

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "training_points.csv", self.tca.training_points, delimiter=",", fmt="%.17g")
        np.savetxt(d / "projection.csv", self.tca.projection, delimiter=",", fmt="%.17g")
        with (d / "standardization.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mean", "scale"])
            for a, b in zip(self.mean, self.scale):
                w.writerow([repr(float(a)), repr(float(b))])
        np.savetxt(d / "regression.csv", self.regression.coefficients, delimiter=",", fmt="%.17g")
        meta = {"m": self.tca.components, "mu": self.tca.mu, "kernel": self.tca.kernel.tag,
                "lag": self.lag, "m_in": self.n_inputs}
        with (d / "meta.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k, v in meta.items():
                w.writerow([k, json.dumps(v)])

    @classmethod
    def load(cls, directory) -> "MultiSourcePredictor":
        d = Path(directory)
        with (d / "meta.csv").open(newline="") as fh:
            meta = {k: json.loads(v) for k, v in list(csv.reader(fh))[1:]}
        points = np.loadtxt(d / "training_points.csv", delimiter=",", ndmin=2)
        W = np.loadtxt(d / "projection.csv", delimiter=",", ndmin=2)
        with (d / "standardization.csv").open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        mean = [float(r[0]) for r in rows]
        scale = [float(r[1]) for r in rows]
        coefs = np.loadtxt(d / "regression.csv", delimiter=",", ndmin=1)
        tca = TcaModel(points, W, float(meta["mu"]), int(meta["m"]), Kernel.from_tag(meta["kernel"]))
        return cls(tca, mean, scale, LinearModel(coefs), int(meta["lag"]), int(meta["m_in"]))


def _subsample(X: np.ndarray, limit: int | None) -> np.ndarray:
    if limit is None or len(X) <= limit:
        return X
    idx = np.linspace(0, len(X) - 1, limit).round().astype(int)
    return X[idx]


def _fit_from_designs(designs, targets, lag, n_inputs, mu, m, kernel, ridge, max_points):
    pooled = np.vstack(designs)[:, :-1]
    mean = pooled.mean(axis=0)
    scale = pooled.std(axis=0)
    # constant channels (e.g. a fixed inlet temperature) carry no information
    scale = np.where(scale > 1e-12, scale, 1.0)
    Zs = [(X[:, :-1] - mean) / scale for X in designs]
    tca = fit_tca([_subsample(Z, max_points) for Z in Zs], mu, m, kernel)
    theta = tca.project(np.vstack(Zs))
    Phi = np.hstack([theta, np.ones((len(theta), 1))])
    reg = LinearModel(solve_ridge(Phi, np.concatenate(targets), ridge))
    return MultiSourcePredictor(tca, mean, scale, reg, lag, n_inputs)


def _truncate(model: MultiSourcePredictor, m: int, designs, targets, ridge) -> MultiSourcePredictor:
    # leading eigenvectors do not depend on how many are requested
    t = model.tca
    tca = TcaModel(t.training_points, t.projection[:, :m], t.mu, m, t.kernel,
                   None if t.eigenvalues is None else t.eigenvalues[:m])
    out = MultiSourcePredictor(tca, model.mean, model.scale, model.regression, model.lag,
                               model.n_inputs)
    Phi = out.transform(np.vstack(designs))
    out.regression = LinearModel(solve_ridge(Phi, np.concatenate(targets), ridge))
    return out


def fit_multisource_predictor(source_datasets: Sequence[Dataset], lag: int = 3, mu: float = 1.0,
                              m: int = 5, kernel: Kernel = LINEAR, ridge: float = DEFAULT_RIDGE,
                              max_points: int | None = 600) -> MultiSourcePredictor:
    """Fit TCA on the union of the source houses and a regressor on top.

    ``max_points`` caps the number of kernel training points kept per domain
    (evenly spaced in time); the regression always uses every sample.
    """
    if not source_datasets:
        raise ValueError("need at least one source dataset")
    if len({d.n_inputs for d in source_datasets}) != 1:
        raise ValueError("source datasets have different input layouts")
    designs, targets = zip(*(build_design_matrix(d, lag) for d in source_datasets))
    return _fit_from_designs(designs, targets, lag, source_datasets[0].n_inputs, mu, m, kernel,
                             ridge, max_points)


def rollout_rmse(predict, data: Dataset, lag: int, horizon: int, start: int = 0,
                 stop: int | None = None) -> float:
    """RMSE of back-to-back ``horizon``-step rollouts over rows ``start:stop``."""
    stop = len(data) if stop is None else stop
    first = max(start + lag - 1, lag - 1)
    origins = np.arange(first, stop - horizon, horizon)
    if len(origins) == 0:
        raise ValueError("segment too short for one rollout")
    sq = []
    for pos in origins:
        pred = rollout_arrays(predict, data.y[:pos + 1], data.u[:pos],
                              data.u[pos:pos + horizon], lag)
        sq.append((pred - data.y[pos + 1:pos + 1 + horizon]) ** 2)
    return float(np.sqrt(np.mean(sq)))


def select_components(source_datasets: Sequence[Dataset], grid=COMPONENT_GRID, mu: float = 1.0,
                      lag: int = 3, spec: HorizonSpec = HorizonSpec(), kernel: Kernel = LINEAR,
                      ridge: float = DEFAULT_RIDGE, max_points: int | None = 600,
                      return_scores: bool = False):
    """Pick the component count by leave-one-third-out cross validation.

    Every fold holds out one contiguous third of one source house, fits on the
    rest and scores rollout RMSE on the held-out third. Ties go to the smaller
    component count.
    """
    if len(source_datasets) < 2:
        raise ValueError("cross validation needs at least two source houses")
    grid = sorted(int(g) for g in grid)
    scores = {g: [] for g in grid}
    for d, held in enumerate(source_datasets):
        n = len(held)
        cuts = [0, n // 3, 2 * n // 3, n]
        for i in range(3):
            test = held.slice(cuts[i], cuts[i + 1])
            train = [ds for j, ds in enumerate(source_datasets) if j != d]
            train += [held.slice(cuts[p], cuts[p + 1]) for p in range(3) if p != i]
            designs, targets = zip(*(build_design_matrix(ds, lag) for ds in train))
            n_kernel = sum(min(len(X), max_points or len(X)) for X in designs)
            if grid[-1] > n_kernel:
                raise ValueError(f"component count {grid[-1]} exceeds {n_kernel} training points")
            full = _fit_from_designs(designs, targets, lag, held.n_inputs, mu, grid[-1], kernel,
                                     ridge, max_points)
            for g in grid:
                model = _truncate(full, g, designs, targets, ridge)
                scores[g].append(rollout_rmse(model, test, lag, spec.horizon_steps))
    means = {g: float(np.mean(v)) for g, v in scores.items()}
    best = min(grid, key=lambda g: (means[g], g))
    return (best, means) if return_scores else best
