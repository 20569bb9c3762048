"""Bootstrap particle filter baseline with systematic resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeightsError
from .models import _sample_gauss

__all__ = [
    "ParticleSet",
    "init_particles",
    "systematic_resample",
    "pf_step",
    "pf_estimate",
]


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.array(np.atleast_2d(self.particles), dtype=float)
        w = np.array(np.atleast_1d(self.weights), dtype=float)
        if w.shape != (p.shape[0],):
            raise ValueError("one weight per particle required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 * max(1.0, p.shape[0]):
            raise ValueError("weights must be nonnegative and sum to 1")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @property
    def n_particles(self):
        return self.particles.shape[0]


def init_particles(init, n_particles, rng):
    rng = np.random.default_rng(rng)
    p = rng.multivariate_normal(init.mean, init.cov, size=n_particles)
    return ParticleSet(p, np.full(n_particles, 1.0 / n_particles))


def systematic_resample(weights, rng):
    """Inverse-CDF resampling with a single uniform phase (binary search)."""
    rng = np.random.default_rng(rng)
    n = weights.shape[0]
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0  # guard against round-off in the last bin
    return np.searchsorted(cum, positions, side="left")


def pf_step(ps, z, dynamics, model, rng):
    """Propagate, weight by the measurement likelihood, resample."""
    rng = np.random.default_rng(rng)
    f, u, q_d = dynamics.discrete_equivalent()
    prop = ps.particles @ f.T + u + _sample_gauss(rng, q_d, ps.n_particles)
    w = ps.weights * model.likelihood(z, prop)
    total = float(w.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateWeightsError("all particle weights vanished")
    idx = systematic_resample(w / total, rng)
    n = ps.n_particles
    return ParticleSet(prop[idx], np.full(n, 1.0 / n))


def pf_estimate(ps):
    """Weighted mean and covariance of the particle set."""
    mean = ps.weights @ ps.particles
    d = ps.particles - mean
    cov = d.T @ (d * ps.weights[:, None])
    return mean, 0.5 * (cov + cov.T)
