"""Experiment runners: predictor comparison on simulated houses and the MPC sweep."""
from __future__ import annotations

import csv
from dataclasses import asdict, astuple, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, HorizonSpec, feature_length, rollout_arrays
from .gotl import evaluate_interval, gotl_init, gotl_step
from .mpc import (PREDICTOR_MODES, CurvePoint, LedgerRow, MpcParams, MpcRunResult, MpcScenario,
                  PredictorAssembly, comfort_heating_curve)
from .regressors import DEFAULT_P0, DEFAULT_RIDGE, fit_batch_linear, rls_init, rls_update
from .simulator import (HouseConfig, HysteresisController, disturbances_for, simulate,
                        steps_per_day)
from .tca import COMPONENT_GRID, fit_multisource_predictor, select_components

EWMA_SMOOTHING = 0.9
INTERVALS_PER_WEEK = 28  # 6 h intervals


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HouseSpec:
    size_factor: float = 1.0
    weather: str = "mild-site"
    occupancy: str = "family"
    seed: int = 1

    def house(self, base: HouseConfig = HouseConfig()) -> HouseConfig:
        return replace(base, size_factor=self.size_factor)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str = "exp1"
    sources: tuple[HouseSpec, ...] = (HouseSpec(),)
    target: HouseSpec = HouseSpec(weather="cold-site", seed=2)
    source_days: int = 150
    target_days: int = 150
    noise_std: float = 0.1
    lag: int = 3
    forgetting: float = 0.999
    p0: float = DEFAULT_P0
    ridge: float = DEFAULT_RIDGE
    delta: float = 0.025
    discount: float = 0.995
    interval_forgetting: float = 1.0
    initial_alpha: float = 1.0
    ensemble_alpha: float = 0.5
    sampling_period_h: float = 0.5
    horizon_steps: int = 12
    setpoint: float = 21.0
    band: float = 0.5
    tca_mu: float = 1.0
    tca_grid: tuple[int, ...] = COMPONENT_GRID
    tca_components: int | None = None
    tca_max_points: int = 600
    smoothing: float = EWMA_SMOOTHING

    def __post_init__(self):
        if self.experiment_id == "exp4" and len(self.sources) != 2:
            raise ConfigError("exp4 needs exactly two source houses")
        if self.experiment_id in ("exp1", "exp2", "exp3") and len(self.sources) != 1:
            raise ConfigError(f"{self.experiment_id} needs exactly one source house")
        if not self.sources:
            raise ConfigError("at least one source house is required")
        if not 0 < self.smoothing < 1:
            raise ConfigError("smoothing must lie in (0, 1)")

    @property
    def spec(self) -> HorizonSpec:
        return HorizonSpec(self.sampling_period_h, self.horizon_steps, self.discount)


# Table of house differences: weather change, then 3x size, then other presence.
PRESETS = {
    "exp1": ExperimentConfig("exp1"),
    "exp2": ExperimentConfig("exp2", target=HouseSpec(3.0, "cold-site", "family", 2)),
    "exp3": ExperimentConfig("exp3", target=HouseSpec(3.0, "cold-site", "couple", 2)),
    "exp4": ExperimentConfig(
        "exp4",
        sources=(HouseSpec(1.0, "mild-site", "family", 1), HouseSpec(3.0, "mild-site", "couple", 3)),
        target=HouseSpec(2.0, "cold-site", "retired", 2),
    ),
}


@dataclass
class MetricsRow:
    k: int
    alpha: float
    rmse_source: float
    rmse_target: float
    rmse_gotl: float
    rmse_ensemble: float
    ewma_source: float = 0.0
    ewma_target: float = 0.0
    ewma_gotl: float = 0.0
    ewma_ensemble: float = 0.0


@dataclass(frozen=True)
class GotlLogRow:
    """Cumulative risks after interval ``k`` was scored with weight ``alpha``."""

    k: int
    alpha: float
    R_target: float
    R_source: float
    R_combined: float
    rmse_interval: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    extra_sources: dict[str, np.ndarray] = field(default_factory=dict)
    gotl_log: list[GotlLogRow] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def ewma(series, smoothing: float = EWMA_SMOOTHING) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    out = np.empty_like(x)
    out[0] = x[0]
    for k in range(1, len(x)):
        out[k] = smoothing * out[k - 1] + (1.0 - smoothing) * x[k]
    return out


def house_dataset(spec: HouseSpec, days: int, config: ExperimentConfig, domain_id: str) -> Dataset:
    dist = disturbances_for(spec.weather, spec.occupancy, days, spec.seed,
                            config.sampling_period_h)
    ctrl = HysteresisController(config.setpoint, config.band)
    log = simulate(spec.house(), ctrl, dist, days, config.sampling_period_h,
                   domain_id=domain_id, noise_std=config.noise_std, noise_seed=spec.seed + 104729)
    return log.dataset


def fit_source(config: ExperimentConfig, datasets: Sequence[Dataset]):
    """Single house: ridge regression. Several houses: TCA + regression."""
    if len(datasets) == 1:
        return fit_batch_linear(datasets[0], config.lag, config.ridge)
    m = config.tca_components
    if m is None:
        m = select_components(datasets, config.tca_grid, config.tca_mu, config.lag, config.spec,
                              ridge=config.ridge, max_points=config.tca_max_points)
    return fit_multisource_predictor(datasets, config.lag, config.tca_mu, m, ridge=config.ridge,
                                     max_points=config.tca_max_points)


def _rmse(pred, truth) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - truth) ** 2)))


def stream_target(config: ExperimentConfig, target: Dataset, f_source, extra_sources=None):
    """Walk the target house interval by interval.

    At each evaluation instant the four predictors roll out over the same
    measured inputs; the target regressor is an RLS model trained on all
    target data seen so far.
    """
    lag, M = config.lag, config.horizon_steps
    y, u = target.y, target.u
    rls = rls_init(feature_length(lag, target.n_inputs), config.forgetting, config.p0)
    state = gotl_init(config.initial_alpha, config.delta, config.discount,
                      config.interval_forgetting)
    extra_sources = extra_sources or {}
    extra_rmse = {name: [] for name in extra_sources}

    def train_until(rls, t_from, t_to):
        for t in range(max(t_from, lag), t_to + 1):
            x = np.concatenate([y[t - lag:t][::-1], u[t - lag:t][::-1].ravel(), [1.0]])
            rls = rls_update(rls, x, y[t])
        return rls

    rows, log = [], []
    t_k = M
    rls = train_until(rls, 0, t_k)
    k = 1
    while t_k + M < len(target):
        f_target = rls.snapshot()
        truth = y[t_k + 1:t_k + 1 + M]

        def roll(f):
            return rollout_arrays(f, y[:t_k + 1], u[:t_k], u[t_k:t_k + M], lag)

        errs, pred_gotl = evaluate_interval(f_target, f_source, state.alpha, y, u, t_k, M, lag,
                                            config.discount)
        ens = lambda X: (1 - config.ensemble_alpha) * f_target(X) + config.ensemble_alpha * f_source(X)
        rows.append(MetricsRow(k, state.alpha, _rmse(roll(f_source), truth),
                               _rmse(roll(f_target), truth), _rmse(pred_gotl, truth),
                               _rmse(roll(ens), truth)))
        for name, f in extra_sources.items():
            extra_rmse[name].append(_rmse(roll(f), truth))
        alpha_k = state.alpha
        state, _ = gotl_step(state, errs)
        log.append(GotlLogRow(k, alpha_k, state.risk(0.0), state.risk(1.0), state.risk(alpha_k),
                              rows[-1].rmse_gotl))
        rls = train_until(rls, t_k + 1, t_k + M)
        t_k += M
        k += 1

    for attr in ("source", "target", "gotl", "ensemble"):
        smoothed = ewma([getattr(r, f"rmse_{attr}") for r in rows], config.smoothing)
        for r, s in zip(rows, smoothed):
            setattr(r, f"ewma_{attr}", float(s))
    return rows, {name: np.array(v) for name, v in extra_rmse.items()}, log


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    sources = [house_dataset(s, config.source_days, config, f"source{i + 1}")
               for i, s in enumerate(config.sources)]
    target = house_dataset(config.target, config.target_days, config, "target")
    f_source = fit_source(config, sources)
    extra = {}
    if len(sources) > 1:
        extra = {f"source{i + 1}": fit_batch_linear(d, config.lag, config.ridge)
                 for i, d in enumerate(sources)}
    rows, extra_rmse, log = stream_target(config, target, f_source, extra)
    return ExperimentResult(config, rows, extra_rmse, log)


# --- config files -------------------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = value
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _house(kv: dict, prefix: str, default: HouseSpec) -> HouseSpec:
    vals = {}
    for f in fields(HouseSpec):
        key = f"{prefix}.{f.name}"
        if key in kv:
            vals[f.name] = _coerce(kv.pop(key), getattr(default, f.name))
    return replace(default, **vals)


def experiment_config_from_kv(kv: dict[str, str]) -> ExperimentConfig:
    kv = dict(kv)
    exp_id = kv.pop("experiment", kv.pop("experiment_id", "exp1"))
    base = PRESETS.get(exp_id, ExperimentConfig(exp_id, sources=PRESETS["exp1"].sources))
    try:
        n_sources = int(kv.pop("sources", len(base.sources)))
        src_defaults = list(base.sources) + [HouseSpec()] * max(0, n_sources - len(base.sources))
        sources = tuple(_house(kv, f"source{i + 1}", src_defaults[i]) for i in range(n_sources))
        target = _house(kv, "target", base.target)
        vals = {}
        for f in fields(ExperimentConfig):
            if f.name in kv:
                raw = kv.pop(f.name)
                if f.name == "tca_grid":
                    vals[f.name] = tuple(int(v) for v in raw.replace(",", " ").split())
                elif f.name == "tca_components":
                    vals[f.name] = None if raw.lower() == "auto" else int(raw)
                else:
                    vals[f.name] = _coerce(raw, getattr(base, f.name))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kv:
        raise ConfigError(f"unknown config keys: {sorted(kv)}")
    return replace(base, experiment_id=exp_id, sources=sources, target=target, **vals)


def load_experiment_config(path) -> ExperimentConfig:
    return experiment_config_from_kv(parse_kv(Path(path).read_text()))


def write_metrics(result: ExperimentResult, out_dir) -> tuple[Path, Path]:
    """Write ``{exp}_metrics.csv`` and ``{exp}_alpha.csv`` (plus ``{exp}_gotl.csv``)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exp = result.config.experiment_id
    metrics = out_dir / f"{exp}_metrics.csv"
    alpha = out_dir / f"{exp}_alpha.csv"
    names = [f.name for f in fields(MetricsRow)]
    extra = sorted(result.extra_sources)
    with metrics.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + [f"rmse_{n}" for n in extra])
        for i, r in enumerate(result.rows):
            rec = asdict(r)
            w.writerow([rec["k"]] + [repr(float(rec[n])) for n in names[1:]]
                       + [repr(float(result.extra_sources[n][i])) for n in extra])
    with alpha.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "alpha_source", "alpha_target"])
        for r in result.rows:
            w.writerow([r.k, repr(r.alpha), repr(1.0 - r.alpha)])
    with (out_dir / f"{exp}_gotl.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(GotlLogRow)])
        for r in result.gotl_log:
            w.writerow([r.k] + [repr(float(v)) for v in astuple(r)[1:]])
    return metrics, alpha


# --- MPC study ------------------------------------------------------------------

MPC_KAPPAS = (10.0, 30.0, 100.0, 300.0, 1000.0)


@dataclass(frozen=True)
class MpcStudyConfig:
    """Comfort/heating sweep on a target house, source model from one or more houses."""

    experiment_id: str = "mpc"
    sources: tuple[HouseSpec, ...] = (HouseSpec(),)
    target: HouseSpec = HouseSpec(3.0, "cold-site", "couple", 2)
    source_days: int = 150
    days: int = 60
    noise_std: float = 0.1
    warmup_steps: int = 48
    kappas: tuple[float, ...] = MPC_KAPPAS
    modes: tuple[str, ...] = ("target", "gotl")
    lag: int = 3
    forgetting: float = 0.999
    p0: float = DEFAULT_P0
    ridge: float = DEFAULT_RIDGE
    delta: float = 0.025
    discount: float = 0.995
    initial_alpha: float = 1.0
    ensemble_alpha: float = 0.5
    beta: float = 0.3333
    gamma: float = 527.8
    setpoint: float = 21.0
    band: float = 0.5
    sampling_period_h: float = 0.5
    horizon_steps: int = 12
    reopt_steps: int = 2
    tca_mu: float = 1.0
    tca_grid: tuple[int, ...] = COMPONENT_GRID
    tca_components: int | None = None
    tca_max_points: int = 600

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("at least one source house is required")
        if len(self.kappas) < 2:
            raise ConfigError("the kappa sweep needs at least two values")
        if any(k < 0 for k in self.kappas):
            raise ConfigError("kappa values must be nonnegative")
        bad = [m for m in self.modes if m not in PREDICTOR_MODES]
        if bad:
            raise ConfigError(f"unknown predictor modes {bad}")
        if self.warmup_steps < self.lag:
            raise ConfigError("warmup_steps must be at least lag")
        try:
            self.params(0.0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def params(self, kappa: float) -> MpcParams:
        return MpcParams(kappa, self.beta, self.gamma, self.setpoint, self.horizon_steps,
                         self.reopt_steps, sampling_period_h=self.sampling_period_h,
                         effectiveness=self.target.house().radiant_effectiveness)

    def as_experiment(self) -> ExperimentConfig:
        """The prediction-side settings, reused to fit the source model."""
        return ExperimentConfig(
            "custom", self.sources, self.target, self.source_days, self.days, self.noise_std,
            self.lag, self.forgetting, self.p0, self.ridge, self.delta, self.discount,
            initial_alpha=self.initial_alpha, ensemble_alpha=self.ensemble_alpha,
            sampling_period_h=self.sampling_period_h, horizon_steps=self.horizon_steps,
            setpoint=self.setpoint, band=self.band, tca_mu=self.tca_mu, tca_grid=self.tca_grid,
            tca_components=self.tca_components, tca_max_points=self.tca_max_points)


def mpc_scenario(config: MpcStudyConfig) -> MpcScenario:
    t = config.target
    spd = steps_per_day(config.sampling_period_h)
    # one spare day so the last plans still see a full forecast
    dist = disturbances_for(t.weather, t.occupancy, config.days + 1 + config.horizon_steps // spd,
                            t.seed, config.sampling_period_h)
    return MpcScenario(t.house(), dist, config.days, noise_std=config.noise_std,
                       noise_seed=t.seed + 104729, warmup_steps=config.warmup_steps)


def mpc_source_predictor(config: MpcStudyConfig):
    exp = config.as_experiment()
    sources = [house_dataset(s, config.source_days, exp, f"source{i + 1}")
               for i, s in enumerate(config.sources)]
    return fit_source(exp, sources)


def mpc_assembly(config: MpcStudyConfig, mode: str, f_source) -> PredictorAssembly:
    return PredictorAssembly(mode, f_source if mode != "target" else None, config.lag,
                             config.forgetting, config.p0, config.delta, config.discount,
                             config.initial_alpha, config.ensemble_alpha, config.horizon_steps)


def run_mpc_curves(config: MpcStudyConfig, f_source=None) -> dict[str, list[CurvePoint]]:
    """Comfort/heating curve for every predictor mode in ``config.modes``."""
    if f_source is None and any(m in ("source", "gotl", "ensemble") for m in config.modes):
        f_source = mpc_source_predictor(config)
    scenario = mpc_scenario(config)
    return {mode: comfort_heating_curve(scenario, lambda m=mode: mpc_assembly(config, m, f_source),
                                        config.params(0.0), config.kappas)
            for mode in config.modes}


def write_curves(curves: dict[str, list[CurvePoint]], out_dir, experiment_id: str = "mpc"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for mode, points in curves.items():
        path = out_dir / f"{experiment_id}_{mode}_curve.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "comfort", "heating"])
            for p in points:
                w.writerow([repr(p.kappa), repr(p.comfort), repr(p.heating)])
        paths.append(path)
    return paths


def write_ledger(result: MpcRunResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        names = [f.name for f in fields(LedgerRow)]
        w.writerow(names)
        for row in result.ledger:
            w.writerow([row.t] + [repr(float(getattr(row, n))) for n in names[1:]])
    return path


def mpc_config_from_kv(kv: dict[str, str]) -> MpcStudyConfig:
    kv = dict(kv)
    kv.pop("experiment", None)
    kv.pop("experiment_id", None)
    base = MpcStudyConfig()
    try:
        n_sources = int(kv.pop("sources", len(base.sources)))
        src_defaults = list(base.sources) + [HouseSpec()] * max(0, n_sources - len(base.sources))
        sources = tuple(_house(kv, f"source{i + 1}", src_defaults[i]) for i in range(n_sources))
        target = _house(kv, "target", base.target)
        vals = {}
        for f in fields(MpcStudyConfig):
            if f.name not in kv:
                continue
            raw = kv.pop(f.name)
            items = raw.replace(",", " ").split()
            if f.name == "kappas":
                vals[f.name] = tuple(float(v) for v in items)
            elif f.name == "modes":
                vals[f.name] = tuple(items)
            elif f.name == "tca_grid":
                vals[f.name] = tuple(int(v) for v in items)
            elif f.name == "tca_components":
                vals[f.name] = None if raw.lower() == "auto" else int(raw)
            else:
                vals[f.name] = _coerce(raw, getattr(base, f.name))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kv:
        raise ConfigError(f"unknown config keys: {sorted(kv)}")
    return replace(base, sources=sources, target=target, **vals)


def is_mpc_config(kv: dict[str, str]) -> bool:
    return kv.get("experiment", kv.get("experiment_id", "")) == "mpc"


# --- single scenarios -----------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """One hysteresis-controlled house, as consumed by the ``simulate`` command."""

    house: HouseConfig = HouseConfig()
    weather: str = "mild-site"
    occupancy: str = "family"
    seed: int = 1
    days: int = 150
    sampling_period_h: float = 0.5
    setpoint: float = 21.0
    band: float = 0.5
    noise_std: float = 0.0
    domain_id: str = "target"
    output: str = "dataset.csv"

    def run(self) -> Dataset:
        dist = disturbances_for(self.weather, self.occupancy, self.days, self.seed,
                                self.sampling_period_h)
        ctrl = HysteresisController(self.setpoint, self.band)
        return simulate(self.house, ctrl, dist, self.days, self.sampling_period_h,
                        domain_id=self.domain_id, noise_std=self.noise_std,
                        noise_seed=self.seed + 104729).dataset


def scenario_from_kv(kv: dict[str, str]) -> ScenarioConfig:
    kv = dict(kv)
    base = ScenarioConfig()
    try:
        house_vals = {f.name: _coerce(kv.pop(f.name), getattr(base.house, f.name))
                      for f in fields(HouseConfig) if f.name in kv}
        vals = {f.name: _coerce(kv.pop(f.name), getattr(base, f.name))
                for f in fields(ScenarioConfig) if f.name != "house" and f.name in kv}
        house = replace(base.house, **house_vals)
        cfg = replace(base, house=house, **vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kv:
        raise ConfigError(f"unknown config keys: {sorted(kv)}")
    if cfg.days < 1:
        raise ConfigError("days must be >= 1")
    return cfg
