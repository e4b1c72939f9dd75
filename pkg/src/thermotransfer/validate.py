"""Quick self-checks of the numerical invariants, runnable without pytest."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .gotl import GotlState, WeightGrid, better_reply, closed_form_alpha, gotl_step
from .mpc import (MpcParams, MpcScenario, PredictorAssembly, horizon_cost, optimize_horizon,
                  predicted_outlet, receding_horizon_run)
from .regressors import rls_init, rls_update, solve_ridge
from .simulator import HouseConfig, disturbances_for
from .tca import DomainLayout, build_H, build_L, gram_matrix, solve_tca


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def check_gotl_convergence(rng, trials: int = 200) -> tuple[bool, str]:
    grid = WeightGrid(40)
    worst = 0
    for _ in range(trials):
        e = rng.normal(size=(2, 8))
        A, B, C = float(e[1] @ e[1]), float(e[0] @ e[0]), float(e[0] @ e[1])
        state = GotlState(int(rng.integers(0, 41)), grid, A, B, C)
        for _ in range(grid.n):
            state, _ = gotl_step(state)
        star = closed_form_alpha(A, B, C, state.alpha)
        worst = max(worst, abs(state.alpha - star))
        if better_reply(state) is not None or abs(state.alpha - star) > grid.delta + 1e-12:
            return False, f"stopped at {state.alpha}, optimum {star:.4f}"
    return True, f"max distance to optimum {worst:.4f}"


def check_rls_batch(rng) -> tuple[bool, str]:
    X = rng.normal(size=(200, 19))
    y = X @ rng.normal(size=19) + 0.1 * rng.normal(size=200)
    state = rls_init(19, 1.0, 1e8)
    for x, t in zip(X, y):
        state = rls_update(state, x, t)
    ref = solve_ridge(X, y, 1e-8)
    err = np.linalg.norm(state.coefficients - ref) / np.linalg.norm(ref)
    return bool(err < 1e-6), f"relative error {err:.2e}"


def check_tca_constraint(rng) -> tuple[bool, str]:
    Xs = rng.normal(size=(60, 6))
    Xt = rng.normal(size=(50, 6)) + 1.0
    K = gram_matrix(np.vstack([Xs, Xt]))
    H = build_H(110)
    W, _ = solve_tca(K, build_L(DomainLayout((60, 50))), H, 1.0, 4)
    dev = np.abs(np.diag(W.T @ K @ H @ K @ W) - 1).max()
    return bool(dev < 1e-6), f"max |diag - 1| {dev:.2e}"


def check_mpc_enumeration(rng) -> tuple[bool, str]:
    import itertools
    for _ in range(10):
        N = int(rng.integers(1, 7))
        p = MpcParams(kappa=float(rng.uniform(0, 50)), horizon_steps=N, reopt_steps=1)
        a, b = rng.uniform(0.5, 1.0), rng.uniform(0.5, 3.0)
        presence = rng.integers(0, 2, N + 1).astype(float)

        def rollout(flows):
            temps = np.empty(flows.shape)
            T = np.full(len(flows), 20.0)
            for j in range(flows.shape[1]):
                T = a * T + (1 - a) * 18.0 + b * (flows[:, j] > 0)
                temps[:, j] = T
            return temps

        plan = optimize_horizon(rollout, 20.0, presence, p)
        best, best_seq = np.inf, None
        for bits in itertools.product((0, 1), repeat=N):
            f = np.array(bits, float) * p.flow_max
            temps = np.concatenate([[20.0], rollout(f[None])[0]])
            c = horizon_cost(temps, f, predicted_outlet(temps[:N], f, p), presence, p)[0]
            if c < best:
                best, best_seq = c, f
        if not np.array_equal(plan.flow_sequence, best_seq) or plan.total != best:
            return False, f"mismatch at N={N}"
    return True, "10 instances agree"


def check_closed_loop(rng) -> tuple[bool, str]:
    dist = disturbances_for("cold-site", "couple", 3, int(rng.integers(0, 1000)))
    run = receding_horizon_run(MpcScenario(HouseConfig(), dist, 2), PredictorAssembly("exact"),
                               MpcParams(kappa=100.0))
    gap = max(abs(s.planned - s.realized) for s in run.segments)
    return bool(gap < 1e-9), f"max segment gap {gap:.2e}"


CHECKS = {
    "gotl-convergence": check_gotl_convergence,
    "rls-equals-batch": check_rls_batch,
    "tca-constraint": check_tca_constraint,
    "mpc-enumeration": check_mpc_enumeration,
    "mpc-closed-loop": check_closed_loop,
}


def run_checks(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        start = time.perf_counter()
        passed, detail = check(np.random.default_rng(seed))
        results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
    return results
