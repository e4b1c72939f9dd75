"""Receding-horizon control of the radiant circuit by exhaustive search.

Every candidate on/off flow sequence over the horizon is rolled out through a
temperature predictor and scored with a comfort + heating + pump cost. The
cheapest sequence wins; its first ``reopt_steps`` actions are applied before
the next re-plan.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, feature_length, rollout_arrays
from .gotl import combined_predictor, evaluate_interval, gotl_init, gotl_step
from .regressors import DEFAULT_P0, rls_init, rls_update
from .simulator import (FLOW_MAX, INLET_TEMP, WATER_CP, ControlAction, DisturbanceSeries,
                        HouseConfig, ZoneState, hysteresis_control, input_row, step_zone)

PREDICTOR_MODES = ("target", "source", "gotl", "ensemble", "exact")
# kg/s of water -> m3/h is a factor 3.6; the kW*s result -> kWh divides by 3600
PUMP_FLOW_TO_KWH = 3.6 / 3600.0


@dataclass(frozen=True)
class MpcParams:
    kappa: float = 100.0
    beta: float = 0.3333  # kW/(degC h)
    gamma: float = 527.8  # kW s/(h m3)
    setpoint: float = 21.0
    horizon_steps: int = 12
    reopt_steps: int = 2
    flow_max: float = FLOW_MAX
    inlet_temp: float = INLET_TEMP
    sampling_period_h: float = 0.5
    effectiveness: float = 0.8  # heat-exchanger effectiveness behind the outlet estimate

    def __post_init__(self):
        if not self.horizon_steps >= self.reopt_steps >= 1:
            raise ValueError("need horizon_steps >= reopt_steps >= 1")
        for name in ("kappa", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.flow_max > 0 or not self.sampling_period_h > 0:
            raise ValueError("flow_max and sampling_period_h must be positive")
        if not 0 < self.effectiveness <= 1:
            raise ValueError("effectiveness must lie in (0, 1]")


@dataclass(frozen=True)
class HorizonPlan:
    flow_sequence: np.ndarray
    predicted_temps: np.ndarray  # t+1 .. t+N
    cost_breakdown: tuple[float, float, float]
    current_temp: float = float("nan")

    @property
    def total(self) -> float:
        return float(sum(self.cost_breakdown))

    @property
    def flows_binary(self) -> np.ndarray:
        return (self.flow_sequence > 0).astype(int)


def predicted_outlet(temps, flows, params: MpcParams):
    """Return-water temperature estimate; equals the inlet on idle steps."""
    temps = np.asarray(temps, dtype=float)
    on = np.asarray(flows) > 0
    return np.where(on, params.inlet_temp - params.effectiveness * (params.inlet_temp - temps),
                    params.inlet_temp)


def horizon_cost(temps, flows, outlets, presence, params: MpcParams):
    """Cost of one horizon. Returns ``(total, comfort, heating, pump)``.

    ``temps`` and ``presence`` cover ``t = 0 .. N`` (``N + 1`` values, the
    first temperature being the measured one) while ``flows`` and ``outlets``
    cover ``t = 0 .. N - 1``. A leading batch axis is allowed on ``temps``,
    ``flows`` and ``outlets``; the four costs then come back as arrays.
    """
    temps = np.asarray(temps, dtype=float)
    flows = np.asarray(flows, dtype=float)
    outlets = np.asarray(outlets, dtype=float)
    presence = np.asarray(presence, dtype=float)
    N = flows.shape[-1]
    if temps.shape[-1] != N + 1 or presence.shape[-1] != N + 1 or outlets.shape != flows.shape:
        raise ValueError(f"length mismatch: temps {temps.shape}, presence {presence.shape}, "
                         f"flows {flows.shape}, outlets {outlets.shape}")
    Ts = params.sampling_period_h
    comfort = params.kappa * np.sum(presence * (temps - params.setpoint) ** 2, axis=-1) / N
    on = flows > 0
    heating = params.beta * Ts * np.sum(np.where(on, params.inlet_temp - outlets, 0.0), axis=-1)
    pump = params.gamma * Ts * PUMP_FLOW_TO_KWH * np.sum(flows, axis=-1)
    total = comfort + heating + pump
    if total.ndim == 0:
        return float(total), float(comfort), float(heating), float(pump)
    return total, comfort, heating, pump


def candidate_flows(horizon_steps: int, flow_max: float = FLOW_MAX) -> np.ndarray:
    """All on/off sequences, lexicographic with the first step most significant."""
    bits = np.array(list(itertools.product((0, 1), repeat=horizon_steps)), dtype=float)
    return bits * flow_max


def optimize_horizon(rollout: Callable, current_temp: float, presence, params: MpcParams,
                     candidates: np.ndarray | None = None) -> HorizonPlan:
    """Exhaustive search over binary flow sequences.

    ``rollout(flows)`` maps a ``(B, N)`` array of flow sequences to predicted
    temperatures ``(B, N)`` for steps ``t+1 .. t+N``. ``presence`` covers
    ``t .. t+N``. Exact ties go to the first candidate in lexicographic order.
    """
    N = params.horizon_steps
    flows = candidate_flows(N, params.flow_max) if candidates is None else np.asarray(candidates)
    pred = np.asarray(rollout(flows), dtype=float)
    if pred.shape != flows.shape:
        raise ValueError(f"rollout returned shape {pred.shape}, expected {flows.shape}")
    temps = np.concatenate([np.full((len(flows), 1), float(current_temp)), pred], axis=1)
    outlets = predicted_outlet(temps[:, :N], flows, params)
    total, comfort, heating, pump = horizon_cost(temps, flows, outlets, presence, params)
    best = int(np.argmin(total))
    return HorizonPlan(flows[best].copy(), pred[best].copy(),
                       (float(comfort[best]), float(heating[best]), float(pump[best])),
                       float(current_temp))


def learned_rollout(predict, y_past, u_past, forecast_inputs, lag: int) -> Callable:
    """Rollout closure for a lagged-feature predictor.

    ``forecast_inputs`` is the ``(N, m_in)`` input forecast whose first
    column (flow) gets replaced by each candidate sequence.
    """
    forecast_inputs = np.asarray(forecast_inputs, dtype=float)

    def rollout(flows):
        flows = np.asarray(flows, dtype=float)
        u_future = np.broadcast_to(forecast_inputs, flows.shape + forecast_inputs.shape[1:]).copy()
        u_future[..., 0] = flows
        return rollout_arrays(predict, y_past, u_past, u_future, lag)

    return rollout


def simulator_rollout(config: HouseConfig, state: ZoneState, forecast: DisturbanceSeries,
                      params: MpcParams) -> Callable:
    """Rollout closure that runs the plant model itself, all candidates at once.

    Uses the same update order as :func:`step_zone`, so the predictions match
    a closed-loop simulation to rounding.
    """
    dt = params.sampling_period_h
    out_t = np.asarray(forecast.outdoor_temp, dtype=float)
    solar = np.asarray(forecast.solar_gain, dtype=float)
    occ = np.asarray(forecast.occupancy, dtype=float)
    c = config

    def rollout(flows):
        flows = np.asarray(flows, dtype=float)
        B, N = flows.shape
        if len(out_t) < N:
            raise ValueError("forecast shorter than the horizon")
        zone = np.full(B, state.zone_temp)
        wall = np.full(B, state.wall_temp)
        out = np.empty((B, N))
        for j in range(N):
            q = c.radiant_effectiveness * WATER_CP * flows[:, j] * (params.inlet_temp - zone)
            gains = c.solar_aperture * solar[j] + c.internal_gain_per_person * occ[j]
            dz = (-c.zone_loss * (zone - out_t[j]) - c.coupling * (zone - wall) + q + gains)
            dw = c.coupling * (zone - wall) - c.wall_loss * (wall - out_t[j])
            zone, wall = zone + dt * (dz / c.zone_capacity), wall + dt * (dw / c.wall_capacity)
            out[:, j] = zone
        return out

    return rollout


# --- closed loop -------------------------------------------------------------

@dataclass
class PredictorAssembly:
    """Which predictor drives the controller, plus the online-learning knobs."""

    mode: str = "gotl"
    f_source: Callable | None = None
    lag: int = 3
    forgetting: float = 0.999
    p0: float = DEFAULT_P0
    delta: float = 0.025
    discount: float = 0.995
    initial_alpha: float = 1.0
    ensemble_alpha: float = 0.5
    evaluation_steps: int = 12

    def __post_init__(self):
        if self.mode not in PREDICTOR_MODES:
            raise ValueError(f"unknown predictor mode {self.mode!r}; pick from {PREDICTOR_MODES}")
        if self.mode in ("source", "gotl", "ensemble") and self.f_source is None:
            raise ValueError(f"mode {self.mode!r} needs a source predictor")


@dataclass(frozen=True)
class MpcScenario:
    config: HouseConfig
    disturbances: DisturbanceSeries
    days: int
    initial: ZoneState = ZoneState()
    noise_std: float = 0.0
    noise_seed: int = 0
    warmup_steps: int | None = None  # hysteresis steps before the first plan; default lag


@dataclass(frozen=True)
class LedgerRow:
    t: int
    flow: float
    zone_temp: float
    comfort_cum: float
    heating_cum_kwh: float
    pump_cum_kwh: float
    alpha: float


@dataclass(frozen=True)
class SegmentRecord:
    t: int
    planned: float
    realized: float


@dataclass
class MpcRunResult:
    dataset: Dataset
    ledger: list[LedgerRow]
    segments: list[SegmentRecord] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)

    @property
    def comfort(self) -> float:
        return self.ledger[-1].comfort_cum if self.ledger else 0.0

    @property
    def heating(self) -> float:
        return self.ledger[-1].heating_cum_kwh if self.ledger else 0.0

    @property
    def pump(self) -> float:
        return self.ledger[-1].pump_cum_kwh if self.ledger else 0.0


def receding_horizon_run(scenario: MpcScenario, assembly: PredictorAssembly,
                         params: MpcParams) -> MpcRunResult:
    """Closed-loop MPC on the simulator with online learning of the target model.

    The ledger logs realized costs from the plant; its comfort column carries
    no ``kappa`` so runs with different weights can be compared directly.
    The segment log pairs each plan's predicted cost over the applied
    ``reopt_steps`` actions with the cost the plant actually realized.
    """
    cfg = scenario.config
    dist = scenario.disturbances
    dt = params.sampling_period_h
    N, R, lag, M = params.horizon_steps, params.reopt_steps, assembly.lag, assembly.evaluation_steps
    n = scenario.days * int(round(24.0 / dt))
    if len(dist) < n + N:
        raise ValueError(f"disturbances cover {len(dist)} steps, need {n + N} for the forecasts")
    warmup = lag if scenario.warmup_steps is None else scenario.warmup_steps
    if warmup < lag:
        raise ValueError("warm-up must cover at least lag steps")
    noise = (np.random.default_rng(scenario.noise_seed).normal(0.0, scenario.noise_std, n)
             if scenario.noise_std > 0 else np.zeros(n))

    m_in = 5
    y = np.empty(n)
    u = np.empty((n, m_in))
    rls = rls_init(feature_length(lag, m_in), assembly.forgetting, assembly.p0)
    gotl = gotl_init(assembly.initial_alpha, assembly.delta, assembly.discount)
    snapshot, t_eval = None, None

    state = scenario.initial
    t0 = state.time_index
    action = ControlAction(0.0, params.inlet_temp)
    queue: list[float] = []
    open_segment = None  # [start, planned, realized so far]
    comfort_cum = heating_cum = pump_cum = 0.0
    ledger, segments, alphas = [], [], []

    for k in range(n):
        y[k] = state.zone_temp + noise[k]
        if k >= lag:
            x = np.concatenate([y[k - lag:k][::-1], u[k - lag:k][::-1].ravel(), [1.0]])
            rls = rls_update(rls, x, y[k])

        if assembly.mode == "gotl" and k >= warmup and (k - warmup) % M == 0:
            if snapshot is not None:
                errs, _ = evaluate_interval(snapshot, assembly.f_source, gotl.alpha, y[:k + 1],
                                            u[:k], t_eval, M, lag, assembly.discount)
                gotl, _ = gotl_step(gotl, errs)
            snapshot, t_eval = rls.snapshot(), k
            alphas.append(gotl.alpha)

        if k < warmup:
            action = hysteresis_control(y[k], params.setpoint, 0.5, action, params.flow_max)
        else:
            if not queue:
                if open_segment is not None:
                    segments.append(SegmentRecord(*open_segment))
                forecast = dist_window(dist, k, N + 1)
                presence = forecast.presence.astype(float)
                rollout = _controller_rollout(assembly, rls, gotl.alpha, cfg, state, forecast,
                                              y[:k + 1], u[:k], params)
                plan = optimize_horizon(rollout, y[k], presence, params)
                queue = list(plan.flow_sequence[:R])
                open_segment = [t0 + k, segment_cost(plan, presence, params, R), 0.0]
            action = ControlAction(float(queue.pop(0)), params.inlet_temp)

        d = dist[k]
        flow = action.water_flow
        u[k] = input_row(cfg, action, d)
        new_state, outlet, _ = step_zone(cfg, state, action, d, dt)
        c, h, pm = _step_costs(state.zone_temp, float(d.presence_flag), flow, outlet, params)
        comfort_cum += c
        heating_cum += h
        pump_cum += pm
        if open_segment is not None:
            open_segment[2] += params.kappa * c + h + pm
        alpha = gotl.alpha if assembly.mode == "gotl" else _fixed_alpha(assembly)
        ledger.append(LedgerRow(t0 + k, float(flow), state.zone_temp, comfort_cum, heating_cum,
                                pump_cum, alpha))
        state = new_state
    if open_segment is not None and not queue:
        segments.append(SegmentRecord(*open_segment))
    return MpcRunResult(Dataset(np.arange(t0, t0 + n), y, u, "mpc"), ledger, segments, alphas)


def _step_costs(zone_temp, present, flow, outlet, params: MpcParams):
    """Realized comfort (without kappa), heating and pump cost of one step."""
    Ts = params.sampling_period_h
    comfort = present * (zone_temp - params.setpoint) ** 2 / params.horizon_steps
    heating = params.beta * Ts * (params.inlet_temp - outlet) if flow > 0 else 0.0
    pump = params.gamma * Ts * PUMP_FLOW_TO_KWH * flow
    return comfort, heating, pump


def segment_cost(plan: HorizonPlan, presence, params: MpcParams, steps: int) -> float:
    """Planned cost of the first ``steps`` actions of ``plan``."""
    temps = np.concatenate([[plan.current_temp], plan.predicted_temps])[:steps]
    flows = plan.flow_sequence[:steps]
    outlets = predicted_outlet(temps, flows, params)
    Ts = params.sampling_period_h
    comfort = params.kappa * np.sum(np.asarray(presence)[:steps] * (temps - params.setpoint) ** 2)
    heating = params.beta * Ts * np.sum(np.where(flows > 0, params.inlet_temp - outlets, 0.0))
    pump = params.gamma * Ts * PUMP_FLOW_TO_KWH * np.sum(flows)
    return float(comfort / params.horizon_steps + heating + pump)


def _fixed_alpha(assembly: PredictorAssembly) -> float:
    return {"target": 0.0, "source": 1.0, "ensemble": assembly.ensemble_alpha}.get(
        assembly.mode, float("nan"))


def dist_window(dist: DisturbanceSeries, start: int, length: int) -> DisturbanceSeries:
    stop = start + length
    if stop > len(dist):
        raise ValueError("disturbance forecast runs past the scenario")
    return DisturbanceSeries(np.asarray(dist.outdoor_temp[start:stop], dtype=float),
                             np.asarray(dist.solar_gain[start:stop], dtype=float),
                             np.asarray(dist.occupancy[start:stop]))


def _controller_rollout(assembly: PredictorAssembly, rls, alpha: float, cfg: HouseConfig,
                        state: ZoneState, forecast: DisturbanceSeries, y_past, u_past,
                        params: MpcParams) -> Callable:
    N = params.horizon_steps
    if assembly.mode == "exact":
        return simulator_rollout(cfg, state, forecast, params)
    target = rls.snapshot()
    weight = alpha if assembly.mode == "gotl" else _fixed_alpha(assembly)
    if weight == 0.0:
        predict = target
    elif weight == 1.0:
        predict = assembly.f_source
    else:
        predict = combined_predictor(target, assembly.f_source, weight)
    idle = ControlAction(0.0, params.inlet_temp)
    inputs = np.array([input_row(cfg, idle, forecast[j]) for j in range(N)])
    return learned_rollout(predict, y_past, u_past, inputs, assembly.lag)


# --- comfort / heating trade-off ---------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    kappa: float
    comfort: float
    heating: float


def comfort_heating_curve(scenario: MpcScenario, make_assembly: Callable[[], PredictorAssembly],
                          params: MpcParams, kappas: Sequence[float]) -> list[CurvePoint]:
    """One closed-loop run per ``kappa`` with a fresh predictor each time.

    Returns realized ``(comfort, heating)`` totals sorted by comfort cost.
    """
    if len(kappas) < 2:
        raise ValueError("a curve needs at least two kappa values")
    points = []
    for kappa in kappas:
        run = receding_horizon_run(scenario, make_assembly(), replace(params, kappa=float(kappa)))
        points.append(CurvePoint(float(kappa), run.comfort, run.heating))
    return sorted(points, key=lambda p: (p.comfort, p.heating))


def pareto_filter(points: Sequence[CurvePoint]) -> list[CurvePoint]:
    """Drop points dominated in both comfort and heating; sorted by comfort."""
    kept = []
    for p in sorted(points, key=lambda p: (p.comfort, p.heating)):
        if not kept or p.heating < kept[-1].heating:
            kept.append(p)
    return kept


def is_pareto_set(points: Sequence[CurvePoint]) -> bool:
    pts = sorted(points, key=lambda p: p.comfort)
    return all(b.heating <= a.heating for a, b in zip(pts, pts[1:]))
