"""Dynamics and measurement models for terrain-referenced tracking.

Two reference setups are provided: a 2D random-walk with known velocity
input (with a continuous-time twin), and a 4D coordinated turn with known
turn rate.  The altimeter measurement is a scalar terrain-map lookup
corrupted by Gaussian-mixture noise (the second mixture component models
unmapped structures such as bridges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_triangular

from .errors import OutOfMapError, SingularDynamicsError

__all__ = [
    "LtiDynamics",
    "InitialCondition",
    "GaussianMixture",
    "TerrainMap",
    "TerrainMeasurementModel",
    "make_random_walk",
    "make_coordinated_turn",
    "make_altimeter_noise",
    "discretize",
    "gm_pdf",
    "mvn_pdf",
    "terrain_lookup",
    "measurement_likelihood",
    "simulate_trajectory",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LtiDynamics:
    """Linear time-invariant dynamics, discrete or continuous.

    ``mat`` is the one-step transition matrix F for the discrete flavor and
    the drift matrix A for the continuous flavor.  ``noise`` is the
    process-noise covariance Q_d (discrete) or the diffusion matrix Q_c
    (continuous).  ``u`` is the known input applied over one sampling
    period ``ts``.
    """

    flavor: str
    mat: np.ndarray
    u: np.ndarray
    noise: np.ndarray
    ts: float = 1.0

    def __post_init__(self):
        if self.flavor not in ("discrete", "continuous"):
            raise ValueError(f"flavor must be 'discrete' or 'continuous', got {self.flavor!r}")
        mat = _frozen(np.atleast_2d(self.mat))
        n = mat.shape[0]
        u = _frozen(np.atleast_1d(self.u))
        q = _frozen(np.atleast_2d(self.noise))
        if mat.shape != (n, n) or u.shape != (n,) or q.shape != (n, n):
            raise ValueError("inconsistent dynamics shapes")
        if not np.allclose(q, q.T, atol=1e-9 * (1.0 + np.abs(q).max())):
            raise ValueError("noise covariance must be symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-9 * (1.0 + np.abs(q).max()):
            raise ValueError("noise covariance must be positive semidefinite")
        if self.ts <= 0:
            raise ValueError("sampling period must be positive")
        if self.flavor == "discrete" and abs(np.linalg.det(mat)) < 1e-12:
            raise SingularDynamicsError("discrete transition matrix must be invertible")
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "noise", q)
        object.__setattr__(self, "ts", float(self.ts))

    @property
    def dim(self):
        return self.mat.shape[0]

    def discrete_equivalent(self):
        """(F, u_step, Q_d) for one sampling period.

        Discrete dynamics are returned as-is.  Continuous dynamics are
        discretized exactly: F = expm(A ts), the input integral via an
        augmented matrix exponential, and Q_d by the Van Loan block method.
        """
        if self.flavor == "discrete":
            return self.mat, self.u, self.noise
        n = self.dim
        f = discretize(self.mat, self.ts)
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = self.mat
        aug[:n, n] = self.u
        u_step = expm(aug * self.ts)[:n, n]
        blk = np.zeros((2 * n, 2 * n))
        blk[:n, :n] = -self.mat
        blk[:n, n:] = self.noise
        blk[n:, n:] = self.mat.T
        e = expm(blk * self.ts)
        q_d = f @ e[:n, n:]
        return f, u_step, 0.5 * (q_d + q_d.T)


@dataclass(frozen=True)
class InitialCondition:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(np.atleast_1d(self.mean))
        cov = _frozen(np.atleast_2d(self.cov))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape does not match mean")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("initial covariance must be positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class GaussianMixture:
    """Scalar Gaussian-mixture noise model."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = _frozen(np.atleast_1d(self.weights))
        m = _frozen(np.atleast_1d(self.means))
        v = _frozen(np.atleast_1d(self.variances))
        if not (w.shape == m.shape == v.shape) or w.ndim != 1:
            raise ValueError("mixture parameter shapes must match")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(v <= 0):
            raise ValueError("mixture variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        z2 = (v[..., None] - self.means) ** 2 / self.variances
        comp = np.exp(-0.5 * z2) / np.sqrt(2.0 * np.pi * self.variances)
        return comp @ self.weights

    def sample(self, rng, size):
        rng = np.random.default_rng(rng)
        idx = rng.choice(self.weights.shape[0], size=size, p=self.weights)
        return self.means[idx] + np.sqrt(self.variances[idx]) * rng.standard_normal(size)


def make_altimeter_noise():
    """Bimodal altimeter noise: half weight at bias 0, half at bias 20 m."""
    return GaussianMixture([0.5, 0.5], [0.0, 20.0], [1.0, 1.0])


def gm_pdf(gm, v):
    return gm.pdf(v)


def mvn_pdf(x, mean, cov):
    """Multivariate normal density, vectorized over rows of ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x) - np.atleast_1d(mean)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    sol = solve_triangular(chol, x2.T, lower=True)
    maha = np.einsum("ij,ij->j", sol, sol)
    log_norm = np.log(np.diag(chol)).sum() + 0.5 * cov.shape[0] * math.log(2.0 * math.pi)
    out = np.exp(-0.5 * maha - log_norm)
    return out[0] if single else out


def make_random_walk():
    """2D position random walk with known velocity input, plus its
    continuous twin (zero drift, diffusion equal to the step noise)."""
    f = np.eye(2)
    u = np.array([50.0, 50.0])
    q_d = np.diag([100.0, 100.0])
    discrete = LtiDynamics("discrete", f, u, q_d, ts=1.0)
    continuous = LtiDynamics("continuous", np.zeros((2, 2)), u, q_d, ts=1.0)
    init = InitialCondition([36569.0, 55581.0], [[160.0, 20.0], [20.0, 90.0]])
    return discrete, continuous, init


def make_coordinated_turn(alpha=math.pi / 6, q_psd=1.0, ts=1.0):
    """4D coordinated turn with known turn rate (state [px, vx, py, vy]).

    ``q_psd`` scales the standard symmetric coordinated-turn process-noise
    covariance.  A zero turn rate is rejected (the closed form divides by
    alpha); use the random-walk model instead.
    """
    if alpha == 0.0:
        raise ValueError("turn rate must be nonzero; use make_random_walk instead")
    s, c = math.sin(alpha * ts), math.cos(alpha * ts)
    f = np.array(
        [
            [1.0, s / alpha, 0.0, (c - 1.0) / alpha],
            [0.0, c, 0.0, -s],
            [0.0, (1.0 - c) / alpha, 1.0, s / alpha],
            [0.0, s, 0.0, c],
        ]
    )
    e1 = 2.0 * (alpha * ts - s) / alpha**3
    e2 = (1.0 - c) / alpha**2
    e3 = (alpha * ts - s) / alpha**2
    q_d = q_psd * np.array(
        [
            [e1, e2, 0.0, e3],
            [e2, ts, -e3, 0.0],
            [0.0, -e3, e1, e2],
            [e3, 0.0, e2, ts],
        ]
    )
    dynamics = LtiDynamics("discrete", f, np.zeros(4), q_d, ts=ts)
    init = InitialCondition([36569.0, 50.0, 55581.0, 50.0], np.diag([90.0, 160.0, 5.0, 5.0]))
    return dynamics, init


def discretize(a_mat, ts):
    """expm(A * ts) via scipy's Pade scaling-and-squaring."""
    return expm(np.atleast_2d(np.asarray(a_mat, dtype=float)) * ts)


@dataclass(frozen=True)
class TerrainMap:
    """Raster altitude table.

    ``altitudes[i, j]`` is the height at
    ``(origin[0] + i * cell_size[0], origin[1] + j * cell_size[1])``.
    """

    origin: np.ndarray
    cell_size: np.ndarray
    altitudes: np.ndarray

    def __post_init__(self):
        origin = _frozen(np.atleast_1d(self.origin))
        cell = _frozen(np.atleast_1d(self.cell_size))
        alt = _frozen(np.atleast_2d(self.altitudes))
        if origin.shape != (2,) or cell.shape != (2,):
            raise ValueError("origin and cell_size must be length-2 vectors")
        if np.any(cell <= 0):
            raise ValueError("cell sizes must be positive")
        if alt.ndim != 2 or alt.shape[0] < 2 or alt.shape[1] < 2:
            raise ValueError("altitude table must be at least 2x2")
        if not np.all(np.isfinite(alt)):
            raise ValueError("altitudes must be finite")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", cell)
        object.__setattr__(self, "altitudes", alt)

    @property
    def extent(self):
        """((x_min, x_max), (y_min, y_max)) covered by the table."""
        shape = np.asarray(self.altitudes.shape, dtype=float) - 1.0
        hi = self.origin + shape * self.cell_size
        return (self.origin[0], hi[0]), (self.origin[1], hi[1])


def terrain_lookup(tmap, pos, clamp=False):
    """Bilinear altitude lookup, vectorized over rows of ``pos``.

    Raises :class:`OutOfMapError` outside the extent unless ``clamp`` is
    set, in which case queries are clamped to the nearest table cell.
    """
    pos = np.asarray(pos, dtype=float)
    single = pos.ndim == 1
    pos = np.atleast_2d(pos)
    alt = tmap.altitudes
    f = (pos - tmap.origin) / tmap.cell_size
    hi = np.asarray(alt.shape, dtype=float) - 1.0
    if clamp:
        f = np.clip(f, 0.0, hi)
    elif np.any(f < -1e-9) or np.any(f > hi + 1e-9):
        raise OutOfMapError("position outside terrain map extent")
    f = np.clip(f, 0.0, hi)
    i0 = np.minimum(f[:, 0].astype(int), alt.shape[0] - 2)
    j0 = np.minimum(f[:, 1].astype(int), alt.shape[1] - 2)
    tx = f[:, 0] - i0
    ty = f[:, 1] - j0
    v = (
        (1 - tx) * (1 - ty) * alt[i0, j0]
        + tx * (1 - ty) * alt[i0 + 1, j0]
        + (1 - tx) * ty * alt[i0, j0 + 1]
        + tx * ty * alt[i0 + 1, j0 + 1]
    )
    return v[0] if single else v


@dataclass(frozen=True)
class TerrainMeasurementModel:
    """Scalar altimeter model: z = h(position) + v, v ~ Gaussian mixture.

    ``position_dims`` selects the horizontal position components of the
    state vector ((0, 1) for the random walk, (0, 2) for the coordinated
    turn).
    """

    terrain: TerrainMap
    noise: GaussianMixture
    position_dims: tuple = (0, 1)
    clamp: bool = False

    def likelihood(self, z, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        pos = states[:, list(self.position_dims)]
        h = terrain_lookup(self.terrain, pos, clamp=self.clamp)
        return self.noise.pdf(z - h)


def measurement_likelihood(tmap, gm, z, states, position_dims=(0, 1), clamp=False):
    """Per-state likelihood p(z | x) for the altimeter model."""
    model = TerrainMeasurementModel(tmap, gm, tuple(position_dims), clamp)
    return model.likelihood(z, states)


def _sample_gauss(rng, cov, size):
    # cholesky when possible, eigh fallback for semidefinite covariances
    n = cov.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        chol = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return rng.standard_normal((size, n)) @ chol.T


def simulate_trajectory(dynamics, init, tmap, gm, n_steps, seed, position_dims=(0, 1)):
    """Roll out a ground-truth trajectory and altimeter measurements.

    Returns ``(states, measurements)`` with shapes (n_steps + 1, dim) and
    (n_steps + 1,).  Deterministic for a fixed seed.  Raises
    :class:`OutOfMapError` if the trajectory leaves the map.
    """
    rng = np.random.default_rng(seed)
    f, u, q_d = dynamics.discrete_equivalent()
    n = f.shape[0]
    dims = list(position_dims)
    xs = np.empty((n_steps + 1, n))
    xs[0] = rng.multivariate_normal(init.mean, init.cov)
    noise = _sample_gauss(rng, q_d, n_steps)
    for k in range(n_steps):
        xs[k + 1] = f @ xs[k] + u + noise[k]
    h = terrain_lookup(tmap, xs[:, dims], clamp=False)
    zs = h + gm.sample(rng, n_steps + 1)
    return xs, zs
