"""Moment-based grid re-design.

Grid movement alone ignores process noise, so the grid degenerates over
time exactly like an unresampled particle cloud.  Before each movement the
grid is re-built: predict the next-step moments with the linear time
update, span a sigma-multiple box around them, pull the box corners back
through the inverse dynamics, and lay a fresh axis-aligned grid over the
corner bounding box.  The filtering weights are transferred by structured
interpolation in the old grid's pre-image coordinates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import SingularDynamicsError
from .grid import Grid, interpolate
from .pmf import FilterState

__all__ = ["RedesignConfig", "predict_moments", "redesign"]


@dataclass(frozen=True)
class RedesignConfig:
    """sigma_mult scales the predictive box; axis_counts of None keeps the
    current per-axis point counts (constant N across steps)."""

    sigma_mult: float = 4.0
    axis_counts: tuple = None

    def __post_init__(self):
        if self.sigma_mult <= 0:
            raise ValueError("sigma_mult must be positive")


def predict_moments(state, dynamics):
    """Linear (Kalman) time update of the filtering density's moments."""
    f, u, q_d = dynamics.discrete_equivalent()
    mean = f @ state.mean + u
    cov = f @ state.cov @ f.T + q_d
    return mean, 0.5 * (cov + cov.T)


def _box_corners(mean, cov, sigma_mult):
    half = sigma_mult * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=mean.shape[0])))
    return mean + signs * half


def redesign(state, dynamics, cfg=None):
    """Re-grid the filtering density ahead of the next grid movement."""
    cfg = cfg if cfg is not None else RedesignConfig()
    f, u, _ = dynamics.discrete_equivalent()
    mean_p, cov_p = predict_moments(state, dynamics)
    corners_pred = _box_corners(mean_p, cov_p, cfg.sigma_mult)
    try:
        f_inv = np.linalg.inv(f)
    except np.linalg.LinAlgError:
        raise SingularDynamicsError("cannot back-transform corners: singular dynamics") from None
    corners_meas = (corners_pred - u) @ f_inv.T
    lo = corners_meas.min(axis=0)
    hi = corners_meas.max(axis=0)
    counts = cfg.axis_counts if cfg.axis_counts is not None else state.grid.axis_counts
    counts = tuple(int(c) for c in counts)
    steps = (hi - lo) / (np.asarray(counts, dtype=float) - 1.0)
    if np.any(steps <= 0):
        raise ValueError("degenerate predictive box; cannot build a grid")
    new_grid = Grid(counts, steps, np.eye(state.grid.dim), 0.5 * (lo + hi))
    pmd = interpolate(state.pmd, new_grid)
    return FilterState.from_pmd(pmd, state.k)
