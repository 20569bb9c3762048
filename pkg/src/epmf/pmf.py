"""Classic point-mass filter: Bayes measurement update and the dense
transition-matrix time update.

The dense update evaluates the full N x N transition kernel and costs
O(N^2); it is kept as the correctness reference for the fast updates in
:mod:`epmf.efficient`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MeasurementInconsistentError
from .grid import (
    Grid,
    PointMassDensity,
    build_grid_from_moments,
    move_grid,
    normalize,
    pmd_moments,
)
from .models import mvn_pdf

__all__ = [
    "FilterState",
    "TransitionMatrix",
    "init_filter",
    "measurement_update",
    "build_dense_tpm",
    "dense_time_update",
    "dense_product_blocked",
    "dense_predict",
    "pmf_step",
]


@dataclass(frozen=True)
class FilterState:
    """Normalized density plus step index and cached moments."""

    pmd: PointMassDensity
    k: int
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_pmd(cls, pmd, k):
        mean, cov = pmd_moments(pmd)
        return cls(pmd, k, mean, cov)

    @property
    def grid(self):
        return self.pmd.grid


@dataclass(frozen=True)
class TransitionMatrix:
    """Dense transition kernel; entry (j, i) is the transition density from
    source point i to destination point j."""

    values: np.ndarray
    source: Grid
    dest: Grid


def init_filter(init, sigma_mult, axis_counts):
    """Gaussian initial density sampled on a moment-matched grid."""
    grid = build_grid_from_moments(init.mean, init.cov, sigma_mult, axis_counts)
    w = mvn_pdf(grid.points(), init.mean, init.cov)
    return FilterState.from_pmd(normalize(PointMassDensity(grid, w)), 0)


def measurement_update(state, z, model):
    """Bayes update: weigh by the measurement likelihood and renormalize."""
    like = model.likelihood(z, state.grid.points())
    w = state.pmd.weights * like
    s = state.pmd.delta * float(w.sum())
    if not np.isfinite(s) or s <= 0.0:
        raise MeasurementInconsistentError(
            "measurement likelihood vanished on the whole grid"
        )
    pmd = PointMassDensity(state.grid, w / s)
    return FilterState.from_pmd(pmd, state.k)


def build_dense_tpm(source, dest, dynamics):
    """Gaussian transition densities between all source/destination pairs."""
    f, u, q_d = dynamics.discrete_equivalent()
    mapped = source.points() @ f.T + u
    diff = dest.points()[:, None, :] - mapped[None, :, :]
    n = source.dim
    vals = mvn_pdf(diff.reshape(-1, n), np.zeros(n), q_d)
    return TransitionMatrix(vals.reshape(dest.n_points, source.n_points), source, dest)


def dense_time_update(state, tpm):
    """Predictive weights as delta * (T @ w), renormalized. O(N^2)."""
    if tpm.values.shape[1] != state.grid.n_points:
        raise ValueError("transition matrix does not match the filtering grid")
    w = state.pmd.delta * (tpm.values @ state.pmd.weights)
    return FilterState.from_pmd(normalize(PointMassDensity(tpm.dest, w)), state.k + 1)


def dense_product_blocked(source, dest, dynamics, weights, block_rows=128):
    """delta * (T @ w) computed in destination-row blocks.

    Same arithmetic as materializing the transition matrix, but bounded
    memory; used when N^2 entries would not fit.
    """
    f, u, q_d = dynamics.discrete_equivalent()
    mapped = source.points() @ f.T + u
    dest_pts = dest.points()
    n = source.dim
    zero = np.zeros(n)
    out = np.empty(dest.n_points)
    for lo in range(0, dest.n_points, block_rows):
        hi = min(lo + block_rows, dest.n_points)
        diff = dest_pts[lo:hi, None, :] - mapped[None, :, :]
        vals = mvn_pdf(diff.reshape(-1, n), zero, q_d).reshape(hi - lo, -1)
        out[lo:hi] = vals @ weights
    return source.cell_volume * out


def dense_predict(state, dynamics, cfg=None, max_dense_entries=4_000_000):
    """Predictive phase of the dense filter cycle.

    Grid re-design (skipped at k=0), grid movement through the dynamics,
    then the dense transition product.  The transition matrix is
    materialized only while N^2 stays below ``max_dense_entries``; larger
    grids use the block product with identical arithmetic.
    """
    from .redesign import RedesignConfig, redesign

    cfg = cfg if cfg is not None else RedesignConfig()
    if state.k > 0:
        state = redesign(state, dynamics, cfg)
    f, u, _ = dynamics.discrete_equivalent()
    moved = move_grid(state.grid, f, u)
    if state.grid.n_points * moved.n_points <= max_dense_entries:
        return dense_time_update(state, build_dense_tpm(state.grid, moved, dynamics))
    w = dense_product_blocked(state.grid, moved, dynamics, state.pmd.weights)
    pmd = normalize(PointMassDensity(moved, np.clip(w, 0.0, None)))
    return FilterState.from_pmd(pmd, state.k + 1)


def pmf_step(state, z, dynamics, model, cfg=None):
    """One full filter cycle with the dense time update.

    Measurement update, moment-based grid re-design (skipped at k=0), grid
    movement through the dynamics, then the dense transition product.  The
    grid policy matches the efficient filter so both produce the same grids.
    """
    return dense_predict(measurement_update(state, z, model), dynamics, cfg)
