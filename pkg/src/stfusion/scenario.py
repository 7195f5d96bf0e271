"""Outlier-contaminated target-tracking experiments.

The target follows nearly constant velocity motion in the plane; process and
measurement noise are Gaussian whose standard deviation switches to an
inflated value with the outlier probability, independently per step,
channel and sensor. All filters see identical truths and measurements in a
given run, and the runs of one experiment are processed as a single batch.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .densities import Gaussian, StudentT
from .filtering import MeasurementModel, ProcessModel
from .fusion import AAVariant, DofRule, FusionKind, FusionMethod
from .network import FilterKind, FusionConfig, SensorGraph, SensorNode, initial_belief, run_sequence

log = logging.getLogger(__name__)

POSITION = (0, 2)
VELOCITY = (1, 3)
Q_JITTER = 1e-9
POSITION_H = ((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0))


@dataclass(frozen=True)
class OutlierNoiseSpec:
    nominal_sigma: float
    outlier_sigma: float
    outlier_prob: float = 0.0

    def __post_init__(self) -> None:
        if not (self.nominal_sigma > 0 and self.outlier_sigma > 0):
            raise ValueError("noise sigmas must be positive")
        if self.outlier_sigma < self.nominal_sigma:
            raise ValueError("outlier_sigma must be >= nominal_sigma")
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must lie in [0, 1]")


@dataclass(frozen=True)
class SensorSpec:
    H: tuple[tuple[float, ...], ...]
    noise: OutlierNoiseSpec

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.H, dtype=float)


@dataclass(frozen=True)
class FilterDofs:
    nu0: float = 3.0
    nu_q: float = 3.0
    nu_r: float = 3.0


def _default_sensors() -> tuple[SensorSpec, ...]:
    return (
        SensorSpec(POSITION_H, OutlierNoiseSpec(20.0, 200.0)),
        SensorSpec(POSITION_H, OutlierNoiseSpec(10.0, 100.0)),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Experiment description; defaults reproduce the two-sensor NCV setup.

    ``noise_convention`` selects how the filters' t noise models are built
    from the nominal noise: ``"scale"`` uses the nominal covariance as the t
    scale matrix, ``"covariance"`` uses ``(nu - 2) / nu`` times it so the t
    covariance matches the nominal one.
    """

    initial_mean: tuple[float, ...] = (1000.0, 20.0, 1000.0, 0.0)
    initial_cov: tuple[tuple[float, ...], ...] = tuple(
        tuple(float(v) for v in row) for row in np.diag([500.0, 50.0, 500.0, 50.0])
    )
    delta_t: float = 1.0
    process_noise: OutlierNoiseSpec = OutlierNoiseSpec(5.0, 50.0)
    sensors: tuple[SensorSpec, ...] = field(default_factory=_default_sensors)
    steps: int = 100
    runs: int = 1000
    seed: int = 0
    filter_dofs: FilterDofs = FilterDofs()
    noise_convention: str = "scale"

    def __post_init__(self) -> None:
        if self.steps < 1 or self.runs < 1:
            raise ValueError("steps and runs must be >= 1")
        if self.noise_convention not in ("scale", "covariance"):
            raise ValueError(f"unknown noise_convention {self.noise_convention!r}")
        if not self.sensors:
            raise ValueError("at least one sensor is required")
        n = len(self.initial_mean)
        if np.shape(self.initial_cov) != (n, n):
            raise ValueError("initial_cov does not match initial_mean")
        for s in self.sensors:
            if s.matrix.ndim != 2 or s.matrix.shape[1] != n:
                raise ValueError("sensor H does not match the state dimension")

    def with_outlier_prob(self, p: float) -> "ScenarioConfig":
        """Same scenario with every noise channel switched at probability ``p``."""
        return replace(
            self,
            process_noise=replace(self.process_noise, outlier_prob=p),
            sensors=tuple(replace(s, noise=replace(s.noise, outlier_prob=p)) for s in self.sensors),
        )


@dataclass(frozen=True)
class Method:
    """A named filter configuration; ``sensors`` restricts it to a subset."""

    name: str
    config: FusionConfig
    sensors: tuple[int, ...] | None = None


METHOD_NAMES = (
    "stkf-aa",
    "stkf-aa-uniform",
    "stkf-ci",
    "stkf-am",
    "stkf-single",
    "kf-aa",
    "kf-aa-uniform",
    "kf-ci",
    "kf-am",
    "kf-single",
)


def method_from_name(
    name: str,
    aa_variant: AAVariant | str = AAVariant.V1,
    dof_rule: DofRule | str = DofRule.AVERAGE,
) -> Method:
    if name not in METHOD_NAMES:
        raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHOD_NAMES)}")
    prefix, _, rest = name.partition("-")
    kind = {
        "aa": FusionKind.AA_SUBOPT_V1 if AAVariant(aa_variant) is AAVariant.V1 else FusionKind.AA_SUBOPT_V2,
        "aa-uniform": FusionKind.AA_UNIFORM,
        "ci": FusionKind.CI,
        "am": FusionKind.AM,
        "single": FusionKind.NONE,
    }[rest]
    cfg = FusionConfig(FusionMethod(kind, DofRule(dof_rule)), FilterKind(prefix))
    return Method(name, cfg, (0,) if rest == "single" else None)


def sample_outlier_sigma(spec: OutlierNoiseSpec, rng: np.random.Generator, size=None):
    """Nominal sigma with probability ``1 - p_o``, outlier sigma otherwise."""
    outlier = rng.random(size) < spec.outlier_prob
    return np.where(outlier, spec.outlier_sigma, spec.nominal_sigma)


def ncv_matrices(delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and acceleration-noise gain of the planar NCV model."""
    block = np.array([[1.0, delta], [0.0, 1.0]])
    F = np.kron(np.eye(2), block)
    G = np.kron(np.eye(2), np.array([[0.5 * delta**2], [delta]]))
    return F, G


def _run_streams(cfg: ScenarioConfig, run_index: int) -> list[np.random.SeedSequence]:
    # init, process switch, process noise, measurements
    return np.random.SeedSequence(cfg.seed, spawn_key=(run_index,)).spawn(4)


def generate_truth(cfg: ScenarioConfig, run_index: int, noiseless: bool = False) -> np.ndarray:
    """True states ``x_0 .. x_steps``, shape ``(steps + 1, n)``.

    ``noiseless`` starts at the prior mean and suppresses process noise.
    """
    init, switch, noise, _ = (np.random.default_rng(s) for s in _run_streams(cfg, run_index))
    F, G = ncv_matrices(cfg.delta_t)
    mu0 = np.asarray(cfg.initial_mean, dtype=float)
    x = mu0 if noiseless else init.multivariate_normal(mu0, np.asarray(cfg.initial_cov))
    sigma = sample_outlier_sigma(cfg.process_noise, switch, cfg.steps)
    u = noise.standard_normal((cfg.steps, G.shape[1])) * sigma[:, None]
    if noiseless:
        u[:] = 0.0
    states = np.empty((cfg.steps + 1, mu0.size))
    states[0] = x
    for k in range(cfg.steps):
        x = F @ x + G @ u[k]
        states[k + 1] = x
    return states


@dataclass(frozen=True)
class Measurements:
    """Per-sensor measurements ``z[s]`` of shape ``(steps, m)`` for states
    ``x_1 .. x_steps``, with the per-step outlier indicators."""

    z: tuple[np.ndarray, ...]
    outliers: tuple[np.ndarray, ...]


def generate_measurements(
    truth: np.ndarray,
    sensor_specs: Sequence[SensorSpec],
    rng: np.random.Generator,
    noiseless: bool = False,
) -> Measurements:
    """Linear measurements of ``truth[1:]`` with contaminated Gaussian noise.

    Each sensor draws its outlier switches and noise from its own child
    streams of ``rng``.
    """
    states = np.asarray(truth, dtype=float)[1:]
    streams = rng.spawn(2 * len(sensor_specs))
    zs, flags = [], []
    for s, spec in enumerate(sensor_specs):
        H = spec.matrix
        if H.shape[1] != states.shape[1]:
            raise ValueError(f"sensor {s}: H has {H.shape[1]} columns, state has {states.shape[1]}")
        switch, noise = streams[2 * s], streams[2 * s + 1]
        outlier = switch.random(len(states)) < spec.noise.outlier_prob
        sigma = np.where(outlier, spec.noise.outlier_sigma, spec.noise.nominal_sigma)
        v = noise.standard_normal((len(states), H.shape[0])) * sigma[:, None]
        if noiseless:
            v[:] = 0.0
        zs.append(states @ H.T + v)
        flags.append(outlier)
    return Measurements(tuple(zs), tuple(flags))


def rmse(estimates, truths, component_selector: str | Sequence[int] = "position") -> np.ndarray:
    """Per-time RMSE over runs of the selected sub-vector.

    ``estimates`` and ``truths`` have shape ``(runs, steps, n)``.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    if est.size == 0 or est.shape[0] == 0:
        raise ValueError("no runs to evaluate")
    idx = {"position": POSITION, "velocity": VELOCITY}.get(component_selector, component_selector)
    err = est[..., list(idx)] - tru[..., list(idx)]
    return np.sqrt(np.mean(np.sum(err**2, axis=-1), axis=0))


def filter_models(cfg: ScenarioConfig, filter_kind: FilterKind):
    """Process model and per-sensor measurement models used by the filters."""
    F, G = ncv_matrices(cfg.delta_t)
    n = F.shape[0]
    dofs = cfg.filter_dofs
    q_nominal = cfg.process_noise.nominal_sigma**2 * (G @ G.T) + Q_JITTER * np.eye(n)
    shrink_q = shrink_r = 1.0
    if filter_kind is FilterKind.STKF and cfg.noise_convention == "covariance":
        shrink_q = (dofs.nu_q - 2.0) / dofs.nu_q
        shrink_r = (dofs.nu_r - 2.0) / dofs.nu_r
    pm = ProcessModel.linear(F, shrink_q * q_nominal, dofs.nu_q)
    mms = [
        MeasurementModel.linear(
            s.matrix, shrink_r * s.noise.nominal_sigma**2 * np.eye(s.matrix.shape[0]), dofs.nu_r
        )
        for s in cfg.sensors
    ]
    return pm, mms


@dataclass
class RunReport:
    """Per-method RMSE curves and fusion-weight statistics of one experiment."""

    outlier_prob: float
    methods: list[str]
    position_rmse: dict[str, np.ndarray]
    velocity_rmse: dict[str, np.ndarray]
    mean_weights: dict[str, np.ndarray | None]
    excluded_runs: dict[str, int]
    runs: int

    def avg_position_rmse(self, name: str) -> float:
        return float(np.mean(self.position_rmse[name]))

    def avg_velocity_rmse(self, name: str) -> float:
        return float(np.mean(self.velocity_rmse[name]))

    def mean_weight(self, name: str, sensor: int = 0) -> float:
        w = self.mean_weights[name]
        return float("nan") if w is None else float(np.mean(w[:, sensor]))

    def summary_rows(self) -> list[dict]:
        return [
            {
                "p_o": self.outlier_prob,
                "method": name,
                "avg_position_rmse": self.avg_position_rmse(name),
                "avg_velocity_rmse": self.avg_velocity_rmse(name),
                "mean_weight_sensor_1": self.mean_weight(name, 0),
                "excluded_runs": self.excluded_runs[name],
            }
            for name in self.methods
        ]

    def step_rows(self) -> list[dict]:
        rows = []
        for name in self.methods:
            for k, (p, v) in enumerate(zip(self.position_rmse[name], self.velocity_rmse[name]), 1):
                rows.append(
                    {
                        "p_o": self.outlier_prob,
                        "method": name,
                        "step": k,
                        "position_rmse": float(p),
                        "velocity_rmse": float(v),
                    }
                )
        return rows


def simulate_runs(cfg: ScenarioConfig, run_indices: Sequence[int]):
    """Truths ``(M, steps + 1, n)`` and per-sensor measurements ``(M, steps, m)``."""
    truths, per_sensor = [], [[] for _ in cfg.sensors]
    for r in run_indices:
        truth = generate_truth(cfg, r)
        meas_seed = _run_streams(cfg, r)[3]
        meas = generate_measurements(truth, cfg.sensors, np.random.default_rng(meas_seed))
        truths.append(truth)
        for s, z in enumerate(meas.z):
            per_sensor[s].append(z)
    return np.stack(truths), [np.stack(z) for z in per_sensor]


def _run_method(cfg: ScenarioConfig, method: Method, zs: list[np.ndarray]):
    """Estimates ``(M, steps, n)`` and fusion weights ``(M, steps, S)`` or None."""
    kind = method.config.filter_kind
    sensors = method.sensors if method.sensors is not None else tuple(range(len(cfg.sensors)))
    pm, mms = filter_models(cfg, kind)
    batch = zs[0].shape[0]
    n = len(cfg.initial_mean)
    prior = initial_belief(cfg.initial_mean, cfg.initial_cov, kind, cfg.filter_dofs.nu0)
    prior = _broadcast_belief(prior, batch)
    nodes = [SensorNode(i, prior, mms[s], pm) for i, s in enumerate(sensors)]
    graph = SensorGraph.complete(len(sensors))
    sequence = [[zs[s][:, k] for s in sensors] for k in range(cfg.steps)]
    history = run_sequence(nodes, graph, method.config, sequence)
    estimates = np.stack([h[0].belief.mean for h in history], axis=1).reshape(batch, cfg.steps, n)
    weights = None
    if method.config.method.is_aa and len(sensors) > 1:
        weights = np.stack([h[0].weights for h in history], axis=1)
        if method.sensors is not None:
            full = np.zeros(weights.shape[:-1] + (len(cfg.sensors),))
            full[..., list(sensors)] = weights
            weights = full
    return estimates, weights


def _broadcast_belief(belief, batch: int):
    mean = np.broadcast_to(belief.mean, (batch,) + belief.mean.shape).copy()
    if isinstance(belief, StudentT):
        scale = np.broadcast_to(belief.scale, (batch,) + belief.scale.shape).copy()
        return StudentT.unchecked(mean, scale, np.full(batch, float(belief.dof)))
    cov = np.broadcast_to(belief.cov, (batch,) + belief.cov.shape).copy()
    return Gaussian.unchecked(mean, cov)


def _chunk(cfg: ScenarioConfig, methods: Sequence[Method], run_indices: Sequence[int]):
    """Squared errors per run and time for every method on one block of runs."""
    truths, zs = simulate_runs(cfg, run_indices)
    out = {}
    for method in methods:
        est, weights = _run_method(cfg, method, zs)
        tru = truths[:, 1:]
        finite = np.all(np.isfinite(est), axis=(1, 2))
        pos = np.sum((est[..., list(POSITION)] - tru[..., list(POSITION)]) ** 2, axis=-1)
        vel = np.sum((est[..., list(VELOCITY)] - tru[..., list(VELOCITY)]) ** 2, axis=-1)
        out[method.name] = (pos, vel, weights, finite)
    return out


def _split(runs: int, parts: int) -> list[range]:
    parts = max(1, min(parts, runs))
    edges = np.linspace(0, runs, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:])]


def run_experiment(
    cfg: ScenarioConfig,
    methods: Sequence[Method],
    parallel: int = 1,
    block: int = 500,
) -> RunReport:
    """Monte Carlo comparison of ``methods`` on shared truths and measurements.

    Runs are processed in contiguous blocks of at most ``block`` runs,
    optionally spread over ``parallel`` worker processes. A run whose
    estimate becomes non-finite is excluded from the RMSE and counted.
    """
    names = [m.name for m in methods]
    blocks = [b for part in _split(cfg.runs, parallel) for b in _blocks(part, block)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_chunk, [cfg] * len(blocks), [methods] * len(blocks), blocks))
    else:
        results = [_chunk(cfg, methods, b) for b in blocks]

    pos_rmse, vel_rmse, weights, excluded = {}, {}, {}, {}
    for m in methods:
        pos = np.concatenate([r[m.name][0] for r in results])
        vel = np.concatenate([r[m.name][1] for r in results])
        finite = np.concatenate([r[m.name][3] for r in results])
        excluded[m.name] = int(np.sum(~finite))
        if excluded[m.name]:
            log.warning("%s: excluded %d diverged runs", m.name, excluded[m.name])
        pos_rmse[m.name] = np.sqrt(np.mean(pos[finite], axis=0))
        vel_rmse[m.name] = np.sqrt(np.mean(vel[finite], axis=0))
        w = [r[m.name][2] for r in results]
        weights[m.name] = None if w[0] is None else np.mean(np.concatenate(w)[finite], axis=0)
    p = cfg.process_noise.outlier_prob
    return RunReport(p, names, pos_rmse, vel_rmse, weights, excluded, cfg.runs)


def _blocks(part: range, block: int) -> list[range]:
    return [range(a, min(a + block, part.stop)) for a in range(part.start, part.stop, block)]


def run_sweep(
    cfg: ScenarioConfig,
    methods: Sequence[Method],
    outlier_probs: Sequence[float],
    parallel: int = 1,
) -> list[RunReport]:
    reports = []
    for p in outlier_probs:
        log.info("p_o = %g: %d runs x %d methods", p, cfg.runs, len(methods))
        reports.append(run_experiment(cfg.with_outlier_prob(p), methods, parallel))
    return reports
