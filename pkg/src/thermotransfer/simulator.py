"""Two-node (2R2C) thermal zone with radiant water heating.

The zone air/floor node exchanges heat with outdoor air, with a heavy wall
node and with the radiant circuit; the wall node loses heat to outdoors.
Each step is one forward-Euler update of length ``dt_h`` hours with all
inputs held constant, so for a fixed flow status the step map is affine in
state, inputs and disturbances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import Dataset

WATER_CP = 4.186  # kJ/(kg K); kg/s * kJ/(kg K) = kW/K
INLET_TEMP = 45.0
FLOW_MAX = 0.0787  # kg/s
SANITY_BAND = (-30.0, 60.0)


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class HouseConfig:
    thermal_capacitance: float = 8.0  # kWh/K, zone + wall
    envelope_conductance: float = 0.06  # kW/K, zone->outdoor + wall->outdoor
    radiant_effectiveness: float = 0.8
    solar_aperture: float = 1.0
    internal_gain_per_person: float = 0.1  # kW
    size_factor: float = 1.0
    zone_capacity_fraction: float = 0.25
    direct_loss_fraction: float = 0.3
    coupling_conductance: float = 0.5  # kW/K, zone<->wall

    def __post_init__(self):
        positive = ("thermal_capacitance", "envelope_conductance", "radiant_effectiveness",
                    "solar_aperture", "internal_gain_per_person", "size_factor",
                    "coupling_conductance")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.radiant_effectiveness > 1:
            raise ValueError("radiant_effectiveness must be <= 1")
        if not 0 < self.zone_capacity_fraction < 1:
            raise ValueError("zone_capacity_fraction must lie in (0, 1)")
        if not 0 <= self.direct_loss_fraction <= 1:
            raise ValueError("direct_loss_fraction must lie in [0, 1]")

    @property
    def zone_capacity(self) -> float:
        return self.size_factor * self.thermal_capacitance * self.zone_capacity_fraction

    @property
    def wall_capacity(self) -> float:
        return self.size_factor * self.thermal_capacitance * (1 - self.zone_capacity_fraction)

    @property
    def zone_loss(self) -> float:
        return self.size_factor * self.envelope_conductance * self.direct_loss_fraction

    @property
    def wall_loss(self) -> float:
        return self.size_factor * self.envelope_conductance * (1 - self.direct_loss_fraction)

    @property
    def coupling(self) -> float:
        return self.size_factor * self.coupling_conductance


@dataclass(frozen=True)
class ZoneState:
    zone_temp: float = 21.0
    wall_temp: float = 20.0
    time_index: int = 0


@dataclass(frozen=True)
class Disturbances:
    outdoor_temp: float
    solar_gain: float
    occupancy: int = 0

    @property
    def presence_flag(self) -> bool:
        return self.occupancy > 0


@dataclass(frozen=True)
class ControlAction:
    water_flow: float = 0.0
    inlet_temp: float = INLET_TEMP


def radiant_heat(config: HouseConfig, flow, inlet_temp, zone_temp):
    """Heat (kW) handed from the water circuit to the zone."""
    return config.radiant_effectiveness * WATER_CP * flow * (inlet_temp - zone_temp)


def outlet_temperature(config: HouseConfig, flow, inlet_temp, zone_temp):
    """Return-water temperature; an idle circuit reads the inlet temperature."""
    flow = np.asarray(flow, dtype=float)
    drop = config.radiant_effectiveness * (inlet_temp - np.asarray(zone_temp, dtype=float))
    out = np.where(flow > 0, inlet_temp - drop, inlet_temp)
    return float(out) if out.ndim == 0 else out


def _derivatives(config: HouseConfig, zone, wall, flow, inlet, outdoor, solar_kw, occupancy):
    q = radiant_heat(config, flow, inlet, zone)
    gains = config.solar_aperture * solar_kw + config.internal_gain_per_person * occupancy
    dz = (-config.zone_loss * (zone - outdoor) - config.coupling * (zone - wall) + q + gains)
    dw = config.coupling * (zone - wall) - config.wall_loss * (wall - outdoor)
    return dz / config.zone_capacity, dw / config.wall_capacity, q


def step_zone(config: HouseConfig, state: ZoneState, action: ControlAction,
              disturbances: Disturbances, dt_h: float = 0.5):
    """Advance one step. Returns ``(new_state, outlet_temp, heat_delivered_kwh)``."""
    if not dt_h > 0:
        raise ValueError("dt_h must be positive")
    dz, dw, q = _derivatives(config, state.zone_temp, state.wall_temp, action.water_flow,
                             action.inlet_temp, disturbances.outdoor_temp,
                             disturbances.solar_gain, disturbances.occupancy)
    zone = state.zone_temp + dt_h * dz
    wall = state.wall_temp + dt_h * dw
    lo, hi = SANITY_BAND
    if not (lo <= zone <= hi and lo <= wall <= hi):
        raise SimulationDiverged(f"temperatures left [{lo}, {hi}] at t={state.time_index + 1}: "
                                 f"zone={zone:.2f}, wall={wall:.2f}")
    outlet = outlet_temperature(config, action.water_flow, action.inlet_temp, state.zone_temp)
    return ZoneState(zone, wall, state.time_index + 1), float(outlet), float(q * dt_h)


def steady_state(config: HouseConfig, action: ControlAction, disturbances: Disturbances):
    """Equilibrium ``(zone, wall)`` of the continuous dynamics under constant inputs."""
    r = config.radiant_effectiveness * WATER_CP * action.water_flow
    g = config.solar_aperture * disturbances.solar_gain + \
        config.internal_gain_per_person * disturbances.occupancy
    To = disturbances.outdoor_temp
    A = np.array([[-(config.zone_loss + config.coupling + r), config.coupling],
                  [config.coupling, -(config.coupling + config.wall_loss)]])
    b = -np.array([config.zone_loss * To + r * action.inlet_temp + g, config.wall_loss * To])
    return np.linalg.solve(A, b)


def exact_feature_predictor(config: HouseConfig, dt_h: float = 0.5) -> Callable:
    """The simulator's one-step map expressed on lagged features (lag >= 2).

    The hidden wall temperature is reconstructed from the two most recent
    outputs, which is exact because the zone update is linear in the wall
    temperature. Features follow the package layout with five inputs
    ``[flow, inlet, outdoor, solar_received, occupancy]``.
    """
    Cz, Uzw = config.zone_capacity, config.coupling

    def predict(X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        d = X.shape[1]
        lag = (d - 1) // 6
        if lag < 2 or d != lag * 6 + 1:
            raise ValueError("exact predictor needs lag >= 2 with five inputs")
        y1, y2 = X[:, 0], X[:, 1]
        u1 = X[:, lag:lag + 5]
        u2 = X[:, lag + 5:lag + 10]
        # solar in the features is already multiplied by the aperture
        flow2, inlet2, To2, sol2, occ2 = u2.T
        q2 = radiant_heat(config, flow2, inlet2, y2)
        g2 = sol2 + config.internal_gain_per_person * occ2
        w2 = (Cz * (y1 - y2) / dt_h + config.zone_loss * (y2 - To2) + Uzw * y2 - q2 - g2) / Uzw
        w1 = w2 + dt_h * (Uzw * (y2 - w2) - config.wall_loss * (w2 - To2)) / config.wall_capacity
        flow1, inlet1, To1, sol1, occ1 = u1.T
        q1 = radiant_heat(config, flow1, inlet1, y1)
        g1 = sol1 + config.internal_gain_per_person * occ1
        dz = -config.zone_loss * (y1 - To1) - Uzw * (y1 - w1) + q1 + g1
        out = y1 + dt_h * dz / Cz
        return out[0] if single else out

    return predict


# --- disturbances -----------------------------------------------------------

WEATHER_PRESETS = {
    # stand-ins for a mild and a cold continental winter site
    "mild-site": dict(mean=6.0, seasonal=3.0, daily=4.0, noise=1.5, solar_peak=1.4),
    "cold-site": dict(mean=0.0, seasonal=3.5, daily=3.0, noise=2.0, solar_peak=1.0),
}


@dataclass(frozen=True)
class DisturbanceSeries:
    outdoor_temp: np.ndarray
    solar_gain: np.ndarray
    occupancy: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.outdoor_temp)
        occ = np.zeros(n, dtype=int) if self.occupancy is None else np.asarray(self.occupancy)
        if len(self.solar_gain) != n or len(occ) != n:
            raise ValueError("disturbance channels differ in length")
        if np.any(np.asarray(self.solar_gain) < 0) or np.any(occ < 0):
            raise ValueError("solar gain and occupancy must be nonnegative")
        object.__setattr__(self, "occupancy", occ.astype(int))

    def __len__(self):
        return len(self.outdoor_temp)

    def __getitem__(self, k) -> Disturbances:
        return Disturbances(float(self.outdoor_temp[k]), float(self.solar_gain[k]),
                            int(self.occupancy[k]))

    @property
    def presence(self) -> np.ndarray:
        return self.occupancy > 0

    def with_occupancy(self, occupancy) -> "DisturbanceSeries":
        occupancy = np.asarray(occupancy)
        n = min(len(self), len(occupancy))
        return DisturbanceSeries(self.outdoor_temp[:n], self.solar_gain[:n], occupancy[:n])


def steps_per_day(dt_h: float) -> int:
    n = 24.0 / dt_h
    if abs(n - round(n)) > 1e-9:
        raise ValueError("a day must hold a whole number of steps")
    return int(round(n))


def generate_weather(profile: str, days: int, seed: int, dt_h: float = 0.5) -> DisturbanceSeries:
    """Outdoor temperature and solar gain (kW for unit aperture).

    Seasonal and daily sinusoids plus AR(1) noise; solar gain is a clipped
    half-sine over the winter daylight hours, scaled by a daily cloud factor.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    try:
        p = WEATHER_PRESETS[profile]
    except KeyError:
        raise ValueError(f"unknown weather profile {profile!r}") from None
    rng = np.random.default_rng(seed)
    spd = steps_per_day(dt_h)
    n = days * spd
    hours = np.arange(n) * dt_h
    day = hours / 24.0
    hod = hours % 24.0
    phi = 0.98
    eps = rng.normal(0.0, p["noise"] * math.sqrt(1 - phi * phi), n)
    noise = np.empty(n)
    noise[0] = rng.normal(0.0, p["noise"])
    for k in range(1, n):
        noise[k] = phi * noise[k - 1] + eps[k]
    outdoor = (p["mean"] - p["seasonal"] * np.cos(2 * np.pi * (day - 75.0) / 365.0)
               - p["daily"] * np.cos(2 * np.pi * (hod - 4.0) / 24.0) + noise)
    clouds = rng.uniform(0.15, 1.0, days)
    sun = np.clip(np.sin(np.pi * (hod - 8.0) / 8.0), 0.0, None)
    sun[(hod < 8.0) | (hod >= 16.0)] = 0.0
    solar = p["solar_peak"] * sun * np.repeat(clouds, spd)
    return DisturbanceSeries(outdoor, solar)


OCCUPANCY_PATTERNS = {
    # (start_hour, end_hour, persons) blocks; hours not covered are empty
    "family": {
        "workday": [(0.0, 7.0, 4), (7.0, 15.0, 1), (15.0, 24.0, 4)],
        "weekend": [(0.0, 10.0, 4), (10.0, 14.0, 2), (14.0, 24.0, 4)],
    },
    "couple": {
        "workday": [(0.0, 7.5, 2), (18.0, 24.0, 2)],
        "weekend": [(0.0, 13.0, 2), (17.0, 24.0, 2)],
    },
    "retired": {
        "workday": [(0.0, 9.0, 2), (9.0, 11.0, 1), (11.0, 24.0, 2)],
        "weekend": [(0.0, 15.0, 2), (18.0, 24.0, 2)],
    },
}


def generate_occupancy(pattern: str, days: int, seed: int, dt_h: float = 0.5) -> np.ndarray:
    """Person count per step from a weekly template with per-day jitter.

    Day 0 is a Monday; interior block boundaries move by up to one step per day.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    try:
        template = OCCUPANCY_PATTERNS[pattern]
    except KeyError:
        raise ValueError(f"unknown occupancy pattern {pattern!r}") from None
    rng = np.random.default_rng(seed)
    spd = steps_per_day(dt_h)
    occ = np.zeros(days * spd, dtype=int)
    for d in range(days):
        blocks = template["weekend" if d % 7 >= 5 else "workday"]
        for start, end, persons in blocks:
            a = int(round(start / dt_h))
            b = int(round(end / dt_h))
            if 0 < a:
                a += int(rng.integers(-1, 2))
            if b < spd:
                b += int(rng.integers(-1, 2))
            occ[d * spd + max(a, 0):d * spd + min(b, spd)] = persons
    return occ


def disturbances_for(weather: str, occupancy: str, days: int, seed: int,
                     dt_h: float = 0.5) -> DisturbanceSeries:
    w = generate_weather(weather, days, seed, dt_h)
    return w.with_occupancy(generate_occupancy(occupancy, days, seed + 7919, dt_h))


# --- control -----------------------------------------------------------------

def hysteresis_control(zone_temp: float, setpoint: float, band: float,
                       previous: ControlAction | None = None,
                       flow_max: float = FLOW_MAX) -> ControlAction:
    if not band > 0:
        raise ValueError("band must be positive")
    if zone_temp < setpoint - band:
        return ControlAction(flow_max)
    if zone_temp > setpoint + band:
        return ControlAction(0.0)
    return previous if previous is not None else ControlAction(0.0)


class HysteresisController:
    """On/off thermostat; holds its previous action inside the dead band."""

    def __init__(self, setpoint: float = 21.0, band: float = 0.5, flow_max: float = FLOW_MAX):
        if not band > 0:
            raise ValueError("band must be positive")
        self.setpoint = setpoint
        self.band = band
        self.flow_max = flow_max
        self.action = ControlAction(0.0)

    def __call__(self, t: int, zone_temp: float) -> ControlAction:
        self.action = hysteresis_control(zone_temp, self.setpoint, self.band, self.action,
                                         self.flow_max)
        return self.action


@dataclass
class ScenarioLog:
    dataset: Dataset
    wall_temp: np.ndarray
    outlet_temp: np.ndarray
    heat_kwh: np.ndarray
    presence: np.ndarray


def input_row(config: HouseConfig, action: ControlAction, dist: Disturbances) -> list[float]:
    return [action.water_flow, action.inlet_temp, dist.outdoor_temp,
            config.solar_aperture * dist.solar_gain, float(dist.occupancy)]


def simulate(config: HouseConfig, controller, disturbances: DisturbanceSeries, days: int,
             dt_h: float = 0.5, initial: ZoneState | None = None,
             domain_id: str = "target", noise_std: float = 0.0,
             noise_seed: int = 0) -> ScenarioLog:
    """Closed-loop run. ``noise_std`` adds white sensor noise to the logged and
    controller-visible zone temperature; the plant itself is unaffected."""
    n = days * steps_per_day(dt_h)
    if len(disturbances) < n:
        raise ValueError(f"disturbances cover {len(disturbances)} steps, need {n}")
    state = initial if initial is not None else ZoneState()
    noise = (np.random.default_rng(noise_seed).normal(0.0, noise_std, n) if noise_std > 0
             else np.zeros(n))
    t0 = state.time_index
    y = np.empty(n)
    u = np.empty((n, 5))
    wall = np.empty(n)
    outlet = np.empty(n)
    heat = np.empty(n)
    for k in range(n):
        dist = disturbances[k]
        y[k] = state.zone_temp + noise[k]
        action = controller(t0 + k, y[k])
        wall[k] = state.wall_temp
        u[k] = input_row(config, action, dist)
        state, outlet[k], heat[k] = step_zone(config, state, action, dist, dt_h)
    data = Dataset(np.arange(t0, t0 + n), y, u, domain_id)
    return ScenarioLog(data, wall, outlet, heat, disturbances.presence[:n])


def run_scenario(config: HouseConfig, controller, weather: DisturbanceSeries,
                 occupancy=None, days: int = 150, dt_h: float = 0.5,
                 initial: ZoneState | None = None, domain_id: str = "target",
                 noise_std: float = 0.0, noise_seed: int = 0) -> Dataset:
    """Simulate a house under ``controller`` and log it as a :class:`Dataset`.

    ``controller(t, zone_temp)`` returns a :class:`ControlAction`.
    """
    dist = weather if occupancy is None else weather.with_occupancy(occupancy)
    return simulate(config, controller, dist, days, dt_h, initial, domain_id, noise_std,
                    noise_seed).dataset


def scaled(config: HouseConfig, size_factor: float) -> HouseConfig:
    return replace(config, size_factor=size_factor)
