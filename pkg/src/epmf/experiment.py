"""Monte-Carlo experiment runner, metrics, and scaling benchmarks.

Every estimator in a run consumes the same simulated trajectories and
measurements.  Per-replication seeds are spawned from the master seed with
``numpy.random.SeedSequence.spawn``, so replications are independent and
the whole run is reproducible; a failed replication is excluded from all
estimators to keep the comparison paired.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .efficient import EpmfConfig, efficient_predict
from .errors import DegenerateWeightsError, EpmfError, MeasurementInconsistentError
from .models import (
    InitialCondition,
    LtiDynamics,
    TerrainMeasurementModel,
    make_coordinated_turn,
    make_random_walk,
    simulate_trajectory,
)
from .particle import init_particles, pf_estimate, pf_step
from .pmf import dense_predict, init_filter, measurement_update
from .redesign import RedesignConfig
from .terrain_io import load_terrain, synthesize_terrain

__all__ = [
    "TerrainSpec",
    "ExperimentConfig",
    "RunMetrics",
    "BenchResult",
    "ModelBundle",
    "build_model",
    "build_terrain",
    "parse_estimator_spec",
    "make_estimator",
    "rmse_astd",
    "run_monte_carlo",
    "bench_scaling",
    "write_metrics_csv",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

MODELS = ("random_walk_2d", "coordinated_turn_4d")


@dataclass(frozen=True)
class TerrainSpec:
    """Terrain source: a raster file or a seeded synthetic map.

    Synthetic maps with ``n_rows``/``n_cols``/``origin`` of None are sized
    automatically so the nominal trajectory plus noise margins stays
    inside the map.
    """

    kind: str = "synthetic"
    path: str = None
    seed: int = 7
    cell_size: float = 30.0
    roughness: float = 0.6
    amplitude: float = 100.0
    n_rows: int = None
    n_cols: int = None
    origin: tuple = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "file"):
            raise ValueError(f"terrain kind must be 'synthetic' or 'file', got {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("terrain kind 'file' needs a path")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "random_walk_2d"
    estimators: tuple = ("epmf_fft", "pf")
    steps: int = 50
    mc: int = 100
    seed: int = 0
    grid_points: tuple = None
    sigma_mult: float = 4.0
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    out_dir: str = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.steps < 1 or self.mc < 1:
            raise ValueError("steps and mc must be >= 1")
        est = tuple(self.estimators)
        if not est:
            raise ValueError("estimator list must not be empty")
        object.__setattr__(self, "estimators", est)
        if self.grid_points is not None:
            object.__setattr__(self, "grid_points", tuple(int(c) for c in self.grid_points))
        if self.sigma_mult <= 0:
            raise ValueError("sigma_mult must be positive")

    @classmethod
    def from_file(cls, path):
        """Load a JSON config file holding the fields of this dataclass."""
        raw = json.loads(Path(path).read_text())
        if "terrain" in raw and raw["terrain"] is not None:
            raw["terrain"] = TerrainSpec(**raw["terrain"])
        return cls(**raw)

    def with_overrides(self, **kwargs):
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return dataclasses.replace(self, **updates)


@dataclass(frozen=True)
class ModelBundle:
    """Everything the runner needs for one scenario."""

    name: str
    dynamics: LtiDynamics
    continuous: LtiDynamics
    init: InitialCondition
    position_dims: tuple
    default_axis_counts: tuple


def build_model(name):
    if name == "random_walk_2d":
        discrete, continuous, init = make_random_walk()
        return ModelBundle(name, discrete, continuous, init, (0, 1), (41, 41))
    if name == "coordinated_turn_4d":
        dynamics, init = make_coordinated_turn()
        return ModelBundle(name, dynamics, None, init, (0, 2), (21, 21, 21, 21))
    raise ValueError(f"unknown model {name!r}; choose from {MODELS}")


def build_terrain(cfg, bundle):
    """Load or synthesize the terrain named by the config.

    Auto-sized synthetic maps cover the noiseless trajectory with a margin
    for process noise spread, initial uncertainty and grid extent.
    """
    spec = cfg.terrain
    if spec.kind == "file":
        return load_terrain(spec.path)
    if spec.n_rows is not None and spec.n_cols is not None and spec.origin is not None:
        return synthesize_terrain(
            spec.seed, spec.n_rows, spec.n_cols, spec.cell_size,
            roughness=spec.roughness, amplitude=spec.amplitude, origin=spec.origin,
        )
    f, u, q_d = bundle.dynamics.discrete_equivalent()
    dims = list(bundle.position_dims)
    x = bundle.init.mean.copy()
    lo = x[dims].copy()
    hi = x[dims].copy()
    for _ in range(cfg.steps + 1):
        x = f @ x + u
        lo = np.minimum(lo, x[dims])
        hi = np.maximum(hi, x[dims])
    q_pos = max(float(q_d[d, d]) for d in dims)
    p_pos = max(float(bundle.init.cov[d, d]) for d in dims)
    pad = 2000.0 + 10.0 * math.sqrt(max(q_pos, 0.0) * (cfg.steps + 1)) + 10.0 * math.sqrt(p_pos)
    lo -= pad
    hi += pad
    n_rows = int(math.ceil((hi[0] - lo[0]) / spec.cell_size)) + 1
    n_cols = int(math.ceil((hi[1] - lo[1]) / spec.cell_size)) + 1
    return synthesize_terrain(
        spec.seed, n_rows, n_cols, spec.cell_size,
        roughness=spec.roughness, amplitude=spec.amplitude, origin=tuple(lo),
    )


# ---------------------------------------------------------------------------
# estimators


class GridFilterEstimator:
    """Point-mass filter wrapper: dense, FFT, or sine-transform updates.

    ``update`` runs one full filter step (measurement update plus the
    predictive phase) and returns the filtering mean/covariance.  A
    vanished likelihood falls back to the prior and is logged.
    """

    def __init__(self, label, mode, dynamics, init, axis_counts, sigma_mult, dt=None):
        self.label = label
        self.mode = mode
        self.dynamics = dynamics
        self.init = init
        self.axis_counts = tuple(axis_counts)
        self.sigma_mult = sigma_mult
        redesign_cfg = RedesignConfig(sigma_mult=sigma_mult)
        method = "fst" if mode == "fst" else "fft"
        self._dense_cfg = redesign_cfg
        self._eff_cfg = EpmfConfig(redesign=redesign_cfg, method=method, dt=dt)
        self.model = None
        self.state = None

    def reset(self, model, rng):
        self.model = model
        self.state = init_filter(self.init, self.sigma_mult, self.axis_counts)

    def update(self, z):
        try:
            st = measurement_update(self.state, z, self.model)
        except MeasurementInconsistentError:
            log.warning("%s: likelihood vanished at k=%d; keeping prior", self.label, self.state.k)
            st = self.state
        mean, cov = st.mean, st.cov
        if self.mode == "dense":
            self.state = dense_predict(st, self.dynamics, self._dense_cfg)
        else:
            self.state = efficient_predict(st, self.dynamics, self._eff_cfg)
        return mean, cov


class ParticleFilterEstimator:
    """Bootstrap particle filter wrapper.

    Degenerate weights reinitialize the cloud from the prior (logged).
    The first update only weighs the prior samples; propagation starts
    from the second update.
    """

    def __init__(self, label, dynamics, init, n_particles):
        self.label = label
        self.dynamics = dynamics
        self.init = init
        self.n_particles = n_particles
        self.model = None
        self.rng = None
        self.ps = None
        self._started = False

    def reset(self, model, rng):
        self.model = model
        self.rng = np.random.default_rng(rng)
        self.ps = init_particles(self.init, self.n_particles, self.rng)
        self._started = False

    def _weigh_only(self, z):
        from .particle import ParticleSet, systematic_resample

        w = self.ps.weights * self.model.likelihood(z, self.ps.particles)
        total = float(w.sum())
        if not np.isfinite(total) or total <= 0.0:
            raise DegenerateWeightsError("all particle weights vanished")
        w /= total
        weighted = ParticleSet(self.ps.particles, w)
        mean, cov = pf_estimate(weighted)
        idx = systematic_resample(w, self.rng)
        n = self.ps.n_particles
        self.ps = ParticleSet(self.ps.particles[idx], np.full(n, 1.0 / n))
        return mean, cov

    def update(self, z):
        try:
            if not self._started:
                self._started = True
                return self._weigh_only(z)
            self.ps = pf_step(self.ps, z, self.dynamics, self.model, self.rng)
            return pf_estimate(self.ps)
        except DegenerateWeightsError:
            log.warning("%s: degenerate weights; reinitializing from the prior", self.label)
            self.ps = init_particles(self.init, self.n_particles, self.rng)
            return self._weigh_only(z)


_SPEC_RE = re.compile(r"^\s*([a-z0-9_]+)\s*(?:\(\s*([^)]*?)\s*\))?\s*$")


def parse_estimator_spec(spec):
    """'name' or 'name(arg)' -> (name, arg-string or None)."""
    m = _SPEC_RE.match(spec)
    if not m:
        raise ValueError(f"malformed estimator spec {spec!r}")
    return m.group(1), m.group(2)


def make_estimator(spec, bundle, cfg):
    name, arg = parse_estimator_spec(spec)
    counts = cfg.grid_points if cfg.grid_points is not None else bundle.default_axis_counts
    if len(counts) == 1:
        counts = counts * bundle.dynamics.dim
    if name == "pmf_dense":
        return GridFilterEstimator("pmf_dense", "dense", bundle.dynamics, bundle.init, counts, cfg.sigma_mult)
    if name == "epmf_fft":
        return GridFilterEstimator("epmf_fft", "fft", bundle.dynamics, bundle.init, counts, cfg.sigma_mult)
    if name == "epmf_fst":
        if bundle.continuous is None:
            raise ValueError(f"model {bundle.name!r} has no continuous twin; epmf_fst unavailable")
        dt = float(arg) if arg else None
        label = f"epmf_fst({arg})" if arg else "epmf_fst"
        return GridFilterEstimator(label, "fst", bundle.continuous, bundle.init, counts, cfg.sigma_mult, dt=dt)
    if name == "pf":
        default_np = 1681 if bundle.dynamics.dim <= 2 else 1_200_000
        n_p = int(arg) if arg else default_np
        label = f"pf({arg})" if arg else "pf"
        return ParticleFilterEstimator(label, bundle.dynamics, bundle.init, n_p)
    raise ValueError(f"unknown estimator {name!r}")


# ---------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    """Per-estimator accuracy, consistency and timing over one MC run."""

    estimator: str
    rmse: np.ndarray
    astd: np.ndarray
    mean_step_time_s: float
    median_step_time_s: float
    consistency: np.ndarray
    n_excluded: int
    n_replications: int
    truth: np.ndarray
    estimates: np.ndarray
    variances: np.ndarray


def rmse_astd(truth, estimates, variances):
    """Per-dimension RMSE and averaged reported standard deviation.

    All inputs have shape (M, K+1, dim); means run over replications and
    time steps including step 0.
    """
    err = np.asarray(truth, dtype=float) - np.asarray(estimates, dtype=float)
    rmse = np.sqrt(np.mean(err**2, axis=(0, 1)))
    astd = np.sqrt(np.mean(np.asarray(variances, dtype=float), axis=(0, 1)))
    return rmse, astd


def _step_time_stats(times):
    # drop the first (warm-up) step of every replication when possible
    trimmed = [t[1:] if len(t) > 1 else t for t in times]
    flat = np.concatenate(trimmed)
    return float(flat.mean()), float(np.median(flat))


def run_monte_carlo(cfg, estimator_factory=make_estimator):
    """Simulate shared data, run every estimator, aggregate metrics.

    Returns an ordered dict label -> :class:`RunMetrics`.  When
    ``cfg.out_dir`` is set, writes ``metrics.csv`` plus one
    ``trace_<estimator>.csv`` per estimator.
    """
    bundle = build_model(cfg.model)
    terrain = build_terrain(cfg, bundle)
    model = TerrainMeasurementModel(
        terrain, _noise_model(), bundle.position_dims, clamp=True
    )
    estimators = [estimator_factory(s, bundle, cfg) for s in cfg.estimators]
    labels = [e.label for e in estimators]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate estimator labels: {labels}")

    collected = {lab: {"truth": [], "est": [], "var": [], "times": []} for lab in labels}
    master = np.random.SeedSequence(cfg.seed)
    rep_seeds = master.spawn(cfg.mc)
    n_excluded = 0
    for rep, rep_seed in enumerate(rep_seeds):
        children = rep_seed.spawn(1 + len(estimators))
        try:
            xs, zs = simulate_trajectory(
                bundle.dynamics, bundle.init, terrain, model.noise,
                cfg.steps, children[0], bundle.position_dims,
            )
        except EpmfError as exc:
            log.warning("replication %d excluded during simulation: %s", rep, exc)
            n_excluded += 1
            continue
        staged = {}
        failed = False
        for est, child in zip(estimators, children[1:]):
            est.reset(model, child)
            means = np.empty((cfg.steps + 1, bundle.dynamics.dim))
            variances = np.empty_like(means)
            times = np.empty(cfg.steps + 1)
            try:
                for k in range(cfg.steps + 1):
                    t0 = time.perf_counter()
                    mean, cov = est.update(zs[k])
                    times[k] = time.perf_counter() - t0
                    means[k] = mean
                    variances[k] = np.diag(cov)
            except EpmfError as exc:
                log.warning("replication %d excluded (%s failed): %s", rep, est.label, exc)
                failed = True
                break
            staged[est.label] = (means, variances, times)
        if failed:
            n_excluded += 1
            continue
        for lab, (means, variances, times) in staged.items():
            collected[lab]["truth"].append(xs)
            collected[lab]["est"].append(means)
            collected[lab]["var"].append(variances)
            collected[lab]["times"].append(times)

    n_ok = cfg.mc - n_excluded
    if n_ok == 0:
        raise RuntimeError(f"all {cfg.mc} replications failed; no metrics to report")
    if n_excluded:
        log.warning("%d of %d replications excluded from all estimators", n_excluded, cfg.mc)

    results = {}
    for lab in labels:
        data = collected[lab]
        truth = np.stack(data["truth"])
        est = np.stack(data["est"])
        var = np.stack(data["var"])
        rmse, astd = rmse_astd(truth, est, var)
        mean_t, median_t = _step_time_stats(data["times"])
        consistency = np.abs(rmse - astd) / np.where(astd > 0, astd, np.inf)
        for j, (r, a) in enumerate(zip(rmse, astd)):
            if r > a:
                log.info("%s dim %d: RMSE %.4f > aSTD %.4f (optimistic estimate)", lab, j + 1, r, a)
        results[lab] = RunMetrics(
            estimator=lab, rmse=rmse, astd=astd,
            mean_step_time_s=mean_t, median_step_time_s=median_t,
            consistency=consistency, n_excluded=n_excluded, n_replications=n_ok,
            truth=truth, estimates=est, variances=var,
        )

    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", results.values())
        for lab, rm in results.items():
            write_trace_csv(out / f"trace_{_safe_name(lab)}.csv", rm)
    return results


def _noise_model():
    from .models import make_altimeter_noise

    return make_altimeter_noise()


def _safe_name(label):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _fmt(x):
    return f"{x:.10g}"


def write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "dim", "rmse", "astd", "mean_step_time_s", "median_step_time_s"])
        for rm in metrics:
            for j in range(rm.rmse.shape[0]):
                writer.writerow([
                    rm.estimator, j + 1, _fmt(rm.rmse[j]), _fmt(rm.astd[j]),
                    _fmt(rm.mean_step_time_s), _fmt(rm.median_step_time_s),
                ])


def write_trace_csv(path, rm):
    n = rm.truth.shape[2]
    header = (
        ["rep", "k"]
        + [f"truth_{j + 1}" for j in range(n)]
        + [f"est_{j + 1}" for j in range(n)]
        + [f"var_{j + 1}" for j in range(n)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rep in range(rm.truth.shape[0]):
            for k in range(rm.truth.shape[1]):
                row = [rep, k]
                row += [_fmt(v) for v in rm.truth[rep, k]]
                row += [_fmt(v) for v in rm.estimates[rep, k]]
                row += [_fmt(v) for v in rm.variances[rep, k]]
                writer.writerow(row)


# ---------------------------------------------------------------------------
# scaling benchmarks


@dataclass
class BenchResult:
    path: str
    axis_points: tuple
    n_points: np.ndarray
    mean_step_time_s: np.ndarray
    slope: float


def bench_scaling(model, sizes, path="dense", steps=2, warmup=1, seed=0):
    """Mean step time of one update path across grid sizes.

    ``sizes`` are per-axis point counts (at least four, so the log-log
    slope fit is meaningful).  Timing covers the filter step only; data
    simulation is excluded.  Returns the fitted slope of log(time) versus
    log(total points).
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 4:
        raise ValueError("need at least four grid sizes for a slope fit")
    if path not in ("dense", "fft", "fst"):
        raise ValueError(f"unknown path {path!r}")
    bundle = build_model(model)
    cfg = ExperimentConfig(model=model, estimators=("epmf_fft",), steps=steps + warmup, mc=1, seed=seed)
    terrain = build_terrain(cfg, bundle)
    model_obj = TerrainMeasurementModel(terrain, _noise_model(), bundle.position_dims, clamp=True)
    xs, zs = simulate_trajectory(
        bundle.dynamics, bundle.init, terrain, model_obj.noise,
        cfg.steps, np.random.SeedSequence(seed), bundle.position_dims,
    )
    dim = bundle.dynamics.dim
    n_points = []
    times = []
    for size in sizes:
        counts = (size,) * dim
        spec = {"dense": "pmf_dense", "fft": "epmf_fft", "fst": "epmf_fst"}[path]
        est = make_estimator(spec, bundle, cfg.with_overrides(grid_points=counts))
        est.reset(model_obj, np.random.SeedSequence(seed + 1))
        per_step = []
        for k in range(warmup + steps):
            t0 = time.perf_counter()
            est.update(zs[k])
            per_step.append(time.perf_counter() - t0)
        n_points.append(size**dim)
        times.append(float(np.mean(per_step[warmup:])))
        log.info("bench %s: %d points, %.4f s/step", path, size**dim, times[-1])
    n_points = np.asarray(n_points, dtype=float)
    times = np.asarray(times)
    slope = float(np.polyfit(np.log(n_points), np.log(times), 1)[0])
    return BenchResult(path, sizes, n_points, times, slope)
