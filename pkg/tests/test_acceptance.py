"""Acceptance suite. Each test carries ``criterion(n)``; the summary prints one line each."""
import itertools
import math
import time

import numpy as np
import pytest
import scipy.linalg

from thermotransfer.gotl import (GotlState, IntervalErrors, WeightGrid, better_reply,
                                 closed_form_alpha, gotl_init, gotl_step, interval_error_update)
from thermotransfer.harness import (INTERVALS_PER_WEEK, PRESETS, MpcStudyConfig, ewma,
                                    run_experiment, run_mpc_curves)
from thermotransfer.mpc import (MpcParams, MpcScenario, PredictorAssembly, is_pareto_set,
                                optimize_horizon, pareto_filter, receding_horizon_run)
from thermotransfer.regressors import rls_init, rls_update
from thermotransfer.simulator import HouseConfig, ZoneState, disturbances_for
from thermotransfer.tca import (DomainLayout, build_H, build_L, dense_tca_oracle, fit_tca,
                                gram_matrix, mmd, project, solve_tca)

BURN_IN = 4 * INTERVALS_PER_WEEK
WEEK5 = 5 * INTERVALS_PER_WEEK


# --- 1. GOTL optimality -----------------------------------------------------------

@pytest.mark.criterion(1)
def test_gotl_reaches_closed_form_optimum(detail):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_gap, worst_steps, done = 0.0, 0, 0
    while done < 1000:
        e, es = rng.normal(size=(2, int(rng.integers(2, 30)))) * rng.uniform(0.1, 5, 2)[:, None]
        A, B, C = float(es @ es), float(e @ e), float(e @ es)
        if A + B - 2 * C <= 1e-9:
            continue
        state = GotlState(int(rng.integers(0, 41)), WeightGrid(40), A, B, C)
        steps = 0
        while better_reply(state) is not None:
            state, _ = gotl_step(state)
            steps += 1
            assert steps <= 40
        gap = abs(state.alpha - closed_form_alpha(A, B, C))
        worst_gap, worst_steps = max(worst_gap, gap), max(worst_steps, steps)
        done += 1
    elapsed = time.perf_counter() - start
    detail(f"1000 triples, max |alpha - alpha*| = {worst_gap:.4f}, max steps {worst_steps}, "
           f"{elapsed:.2f} s")
    assert worst_gap <= 0.025 + 1e-12
    assert elapsed < 5.0


# --- 2. convexity of the cumulative risk ------------------------------------------------

@pytest.mark.criterion(2)
def test_risk_convex_on_grid(detail):
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst = np.inf
    for _ in range(100):
        state = gotl_init(1.0)
        for _ in range(int(rng.integers(1, 6))):
            M = int(rng.integers(1, 25))
            state = interval_error_update(state, IntervalErrors(rng.normal(size=M) * 3,
                                                                rng.normal(size=M) * 3))
        r = state.risk(state.grid.values)
        worst = min(worst, np.diff(r, 2).min())
    elapsed = time.perf_counter() - start
    detail(f"min second difference {worst:.3e}, {elapsed:.3f} s")
    assert worst >= -1e-12
    assert elapsed < 1.0


# --- 3. RLS against batch ---------------------------------------------------------------

@pytest.mark.criterion(3)
def test_rls_equals_batch_ridge(detail):
    rng = np.random.default_rng(103)
    start = time.perf_counter()
    X = rng.normal(size=(200, 19))
    y = X @ rng.normal(size=19) + 0.1 * rng.normal(size=200)
    state = rls_init(19, 1.0, 1e8)
    for x, t in zip(X, y):
        state = rls_update(state, x, t)
    # independent oracle: least squares on the ridge-augmented system
    aug_X = np.vstack([X, np.sqrt(1e-8) * np.eye(19)])
    aug_y = np.concatenate([y, np.zeros(19)])
    ref = np.linalg.lstsq(aug_X, aug_y, rcond=None)[0]
    rel = np.linalg.norm(state.coefficients - ref) / np.linalg.norm(ref)
    elapsed = time.perf_counter() - start
    detail(f"relative error {rel:.2e}, {elapsed:.3f} s")
    assert rel < 1e-6
    assert elapsed < 1.0


# --- 4. TCA constraint and effect --------------------------------------------------------

@pytest.mark.criterion(4)
def test_tca_unit_variance_constraint(detail):
    rng = np.random.default_rng(104)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        n1, n2 = int(rng.integers(20, 100)), int(rng.integers(20, 100))
        pts = np.vstack([rng.normal(size=(n1, 8)), rng.normal(size=(n2, 8)) + rng.normal(size=8)])
        K, H = gram_matrix(pts), build_H(n1 + n2)
        W, _ = solve_tca(K, build_L(DomainLayout((n1, n2))), H, 1.0, 5)
        worst = max(worst, np.abs(np.diag(W.T @ K @ H @ K @ W) - 1).max())
    detail(f"max |diag - 1| = {worst:.2e}")
    assert worst < 1e-6
    assert time.perf_counter() - start < 10.0


def _scale_free_mmd(a, b):
    pooled = np.vstack([a, b])
    return mmd(a, b) / np.sum(np.var(pooled, axis=0))


@pytest.mark.criterion(4)
@pytest.mark.parametrize("m", [5, 10])
def test_tca_shrinks_domain_shift(m, detail):
    rng = np.random.default_rng(105)
    start = time.perf_counter()
    d = 12
    a = rng.normal(size=(200, d))
    b = rng.normal(size=(200, d)) + 4.0 * np.eye(d)[0]
    # literal ratio with the default trade-off
    model = fit_tca([a, b], m=m)
    literal = mmd(project(model, a), project(model, b)) / mmd(a, b)
    # ratio relative to the spread, with a trade-off small enough for the MMD term to act
    model = fit_tca([a, b], mu=1e-3, m=m)
    za, zb = project(model, a), project(model, b)
    relative = _scale_free_mmd(za, zb) / _scale_free_mmd(a, b)
    elapsed = time.perf_counter() - start
    detail(f"m={m}: literal ratio {literal:.4f}, spread-relative ratio {relative:.4f}, "
           f"{elapsed:.2f} s")
    assert literal <= 0.2
    assert relative <= 0.2
    assert elapsed < 10.0


# --- 5. TCA against the dense eigen-solution -----------------------------------------------

@pytest.mark.criterion(5)
def test_tca_matches_dense_oracle(detail):
    rng = np.random.default_rng(106)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    while checked < 50:
        n1, n2 = int(rng.integers(5, 26)), int(rng.integers(5, 26))
        pts = np.vstack([rng.normal(size=(n1, 6)), rng.normal(size=(n2, 6)) + 1.5])
        K, L, H = gram_matrix(pts), build_L(DomainLayout((n1, n2))), build_H(n1 + n2)
        m = int(rng.integers(1, 5))
        V, lam_ref = dense_tca_oracle(K, L, H, 1.0, m)
        gaps = np.abs(np.diff(np.concatenate([lam_ref, [0.0]])))
        if gaps.min() <= 1e-6 * max(1.0, lam_ref[0]):
            continue  # the subspace is not unique at a degenerate eigenvalue
        W, _ = solve_tca(K, L, H, 1.0, m)
        worst = max(worst, scipy.linalg.subspace_angles(W, V).max())
        checked += 1
    elapsed = time.perf_counter() - start
    detail(f"50 problems with N <= 50, max principal angle {worst:.2e} rad, {elapsed:.2f} s")
    assert worst < 1e-6
    assert elapsed < 5.0


# --- 6. MPC against a naive enumerator ------------------------------------------------

def naive_best(a, b, c, current, presence, p):
    N, Ts = p.horizon_steps, p.sampling_period_h
    best, best_bits = math.inf, None
    for bits in itertools.product((0, 1), repeat=N):
        T, cost_c, cost_h, cost_p = current, presence[0] * (current - p.setpoint) ** 2, 0.0, 0.0
        for j, bit in enumerate(bits):
            flow = bit * p.flow_max
            if bit:
                cost_h += p.beta * Ts * p.effectiveness * (p.inlet_temp - T)
            cost_p += p.gamma * Ts * flow / 1000.0
            T = a * T + b * flow + c
            cost_c += presence[j + 1] * (T - p.setpoint) ** 2
        total = p.kappa * cost_c / N + cost_h + cost_p
        if total < best:
            best, best_bits = total, bits
    return best, best_bits


@pytest.mark.criterion(6)
def test_mpc_matches_naive_enumerator(detail):
    rng = np.random.default_rng(107)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        N = int(rng.integers(1, 9))
        a, b, c = rng.uniform(0.8, 0.99), rng.uniform(10, 80), rng.uniform(0, 3)
        current = float(rng.uniform(15, 25))
        presence = rng.integers(0, 2, N + 1).astype(float)
        p = MpcParams(kappa=float(rng.choice([0.0, 3.0, 100.0, 1000.0])), horizon_steps=N,
                      reopt_steps=1)

        def rollout(flows):
            T = np.full(len(flows), current)
            out = np.empty(flows.shape)
            for j in range(N):
                T = a * T + b * flows[:, j] + c
                out[:, j] = T
            return out

        plan = optimize_horizon(rollout, current, presence, p)
        best, bits = naive_best(a, b, c, current, presence, p)
        assert tuple(plan.flows_binary) == bits
        worst = max(worst, abs(plan.total - best) / max(1.0, abs(best)))
    elapsed = time.perf_counter() - start
    detail(f"50 instances with N <= 8, identical plans, max relative cost gap {worst:.1e}, "
           f"{elapsed:.2f} s")
    assert worst < 1e-9
    assert elapsed < 30.0


# --- 7. experiment shapes 1-3 ---------------------------------------------------------------

@pytest.mark.criterion(7)
@pytest.mark.parametrize("exp", ["exp1", "exp2", "exp3"])
def test_experiment_shape(exp, detail):
    result = run_experiment(PRESETS[exp])
    alpha = result.column("alpha")
    alpha_smooth = ewma(alpha)
    src, tgt, gotl, ens = (result.column(f"ewma_{n}")
                           for n in ("source", "target", "gotl", "ensemble"))
    late = slice(BURN_IN, None)
    frac_min = np.mean(gotl[late] <= np.minimum(src, tgt)[late] + 0.05)
    frac_ens = np.mean(gotl[late] <= ens[late] + 0.05)
    detail(f"{exp}: alpha ewma {alpha_smooth[0]:.2f} -> {alpha_smooth[-1]:.3f}; "
           f"GOTL within 0.05 of best single at {frac_min:.1%}, "
           f"within 0.05 of ensemble at {frac_ens:.1%} of {len(gotl) - BURN_IN} intervals")
    assert alpha[0] == 1.0
    assert alpha_smooth[-1] < alpha_smooth[0]
    half = len(alpha_smooth) // 2
    assert alpha_smooth[half:].mean() < alpha_smooth[:half].mean()
    assert frac_min >= 0.9
    assert frac_ens == 1.0


# --- 8. multi-source benefit ---------------------------------------------------------------

@pytest.fixture(scope="module")
def exp4_result():
    return run_experiment(PRESETS["exp4"])


@pytest.mark.criterion(8)
def test_combined_source_beats_single_sources(exp4_result, detail):
    r = exp4_result
    combined = r.column("rmse_source")[:WEEK5].mean()
    singles = {name: v[:WEEK5].mean() for name, v in r.extra_sources.items()}
    detail(f"first 5 weeks rollout RMSE: combined {combined:.3f}, "
           + ", ".join(f"{k} {v:.3f}" for k, v in singles.items()))
    assert len(singles) == 2
    assert all(combined < v for v in singles.values())


@pytest.mark.criterion(8)
def test_gotl_beats_individual_regressors_after_week5(exp4_result, detail):
    r = exp4_result
    gotl = r.column("ewma_gotl")[WEEK5:]
    rivals = {"target": r.column("ewma_target")[WEEK5:]}
    rivals.update({k: ewma(v)[WEEK5:] for k, v in r.extra_sources.items()})
    wins = np.all([gotl < v for v in rivals.values()], axis=0)
    per = ", ".join(f"{k} {np.mean(gotl < v):.1%}" for k, v in rivals.items())
    detail(f"GOTL below every individual regressor at {wins.mean():.1%} of intervals "
           f"(per rival: {per})")
    assert wins.mean() >= 0.8


# --- 9. MPC energy result --------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_mpc_gotl_saves_heating_at_matched_comfort(detail):
    curves = run_mpc_curves(MpcStudyConfig())
    tgt, gotl = curves["target"], curves["gotl"]
    assert len(tgt) == len(gotl) == 5
    t0, g0 = tgt[0], gotl[0]  # lowest comfort cost of each sweep
    detail(f"lowest-comfort points: target kappa={t0.kappa:g} comfort {t0.comfort:.2f} "
           f"heating {t0.heating:.1f} kWh; GOTL kappa={g0.kappa:g} comfort {g0.comfort:.2f} "
           f"heating {g0.heating:.1f} kWh")
    assert is_pareto_set(pareto_filter(tgt)) and is_pareto_set(pareto_filter(gotl))
    assert g0.heating <= t0.heating
    assert g0.comfort <= 1.05 * t0.comfort


# --- 10. closed-loop consistency ---------------------------------------------------------

@pytest.mark.criterion(10)
def test_exact_mpc_segments_are_realized(detail):
    start = time.perf_counter()
    dist = disturbances_for("cold-site", "couple", 8, 7)
    scenario = MpcScenario(HouseConfig(size_factor=3.0), dist, 7, ZoneState(19.0, 18.0))
    worst, count = 0.0, 0
    for kappa in (10.0, 1000.0):
        run = receding_horizon_run(scenario, PredictorAssembly("exact"), MpcParams(kappa=kappa))
        for seg in run.segments:
            worst = max(worst, abs(seg.planned - seg.realized))
            count += 1
    elapsed = time.perf_counter() - start
    detail(f"{count} segments, max |planned - realized| = {worst:.1e}, {elapsed:.1f} s")
    assert count > 300
    assert worst <= 1e-9
    assert elapsed < 60.0
