"""Implicit rectilinear grids and point-mass densities.

A grid is never stored as an explicit point list.  It is an axis-aligned
lattice in "pre-image" coordinates (per-axis odd counts and positive steps,
centered on zero) pushed through an affine map::

    point = offset + basis @ lattice_point

Filters move a grid by composing the affine map, so the lattice stays
axis-aligned in pre-image coordinates even when the grid is rhomboid in
state space.  Interpolation onto a new grid therefore reduces to structured
multilinear interpolation after mapping target points back through
``basis^-1`` -- no scattered interpolation is ever needed.

Flattening convention: computational (vector) index runs with the FIRST
axis fastest (column-major).  All axis counts are odd, so the lattice has
an exact center at flat index ``(N - 1) // 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DegenerateDensityError, SingularDynamicsError

__all__ = [
    "Grid",
    "PointMassDensity",
    "build_grid_from_moments",
    "move_grid",
    "reshape_to_physical",
    "flatten_from_physical",
    "normalize",
    "pmd_moments",
    "interpolate",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Affine image of a centered, axis-aligned lattice.

    Attributes:
        axis_counts: points per axis, each odd.
        axis_steps: lattice spacing per axis (pre-image units), > 0.
        basis: invertible matrix mapping pre-image to state space.
        offset: state-space position of the lattice center.
    """

    axis_counts: tuple
    axis_steps: np.ndarray
    basis: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.axis_counts))
        if not counts or any(c < 1 or c % 2 == 0 for c in counts):
            raise ValueError(f"axis counts must be positive and odd, got {counts}")
        n = len(counts)
        steps = _frozen(np.atleast_1d(self.axis_steps))
        basis = _frozen(np.atleast_2d(self.basis))
        offset = _frozen(np.atleast_1d(self.offset))
        if steps.shape != (n,) or np.any(steps <= 0) or not np.all(np.isfinite(steps)):
            raise ValueError("axis steps must be positive finite, one per axis")
        if basis.shape != (n, n) or not np.all(np.isfinite(basis)):
            raise ValueError(f"basis must be a finite {n}x{n} matrix")
        if offset.shape != (n,) or not np.all(np.isfinite(offset)):
            raise ValueError("offset must be a finite state-space vector")
        if abs(np.linalg.det(basis)) < 1e-300:
            raise ValueError("grid basis must be invertible")
        object.__setattr__(self, "axis_counts", counts)
        object.__setattr__(self, "axis_steps", steps)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "offset", offset)

    @property
    def dim(self):
        return len(self.axis_counts)

    @cached_property
    def n_points(self):
        return int(np.prod(self.axis_counts))

    @property
    def center_index(self):
        """Flat index of the exact lattice center (odd counts guarantee it)."""
        return (self.n_points - 1) // 2

    @cached_property
    def cell_volume(self):
        """State-space volume of one cell: prod(steps) * |det(basis)|."""
        return float(np.prod(self.axis_steps) * abs(np.linalg.det(self.basis)))

    def axis_coords(self, axis):
        """Centered pre-image coordinates along one axis."""
        n = self.axis_counts[axis]
        return (np.arange(n) - (n - 1) / 2.0) * self.axis_steps[axis]

    def lattice_points(self):
        """All pre-image lattice points, shape (N, dim), first axis fastest."""
        mesh = np.meshgrid(*(self.axis_coords(a) for a in range(self.dim)), indexing="ij")
        return np.stack([m.ravel(order="F") for m in mesh], axis=1)

    def points(self):
        """All state-space grid points, shape (N, dim)."""
        return self.offset + self.lattice_points() @ self.basis.T

    def to_fractional(self, pts):
        """Map state-space points to fractional tensor indices of this grid.

        Returns an array of shape (dim, M) directly usable as coordinates
        for ``scipy.ndimage.map_coordinates`` on the physical-space tensor.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        pre = np.linalg.solve(self.basis, (pts - self.offset).T)
        half = (np.asarray(self.axis_counts, dtype=float) - 1.0) / 2.0
        return pre / self.axis_steps[:, None] + half[:, None]


@dataclass(frozen=True)
class PointMassDensity:
    """Grid plus nonnegative density values at its points.

    ``delta * weights.sum() == 1`` after normalization, so the piecewise
    constant density integrates to one.
    """

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} weights, got {w.shape[0]}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        floor = -1e-12 * max(w.max(initial=0.0), 1e-300)
        if w.min(initial=0.0) < floor:
            raise ValueError("weights must be nonnegative")
        np.clip(w, 0.0, None, out=w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def delta(self):
        return self.grid.cell_volume

    def mass(self):
        return self.delta * float(self.weights.sum())

    def as_tensor(self):
        return reshape_to_physical(self.weights, self.grid)


def build_grid_from_moments(mean, cov, sigma_mult, axis_counts):
    """Axis-aligned grid centered on ``mean`` spanning +-sigma_mult stddevs.

    The center point equals ``mean`` exactly; per-axis half-span is
    ``sigma_mult * sqrt(cov[i, i])``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    counts = tuple(int(c) for c in np.atleast_1d(axis_counts))
    n = mean.shape[0]
    if sigma_mult <= 0:
        raise ValueError("sigma_mult must be positive")
    if cov.shape != (n, n):
        raise ValueError("covariance shape does not match mean")
    if any(c < 3 or c % 2 == 0 for c in counts):
        raise ValueError(f"axis counts must be odd and >= 3, got {counts}")
    _require_spd(cov)
    half = sigma_mult * np.sqrt(np.diag(cov))
    steps = 2.0 * half / (np.asarray(counts, dtype=float) - 1.0)
    return Grid(counts, steps, np.eye(n), mean)


def _require_spd(cov):
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-8 * (1.0 + np.abs(cov).max())):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None


def move_grid(grid, f_mat, u=None):
    """Push every grid point through ``x -> F x + u`` by composing the map."""
    f_mat = np.atleast_2d(np.asarray(f_mat, dtype=float))
    n = grid.dim
    if f_mat.shape != (n, n):
        raise ValueError(f"transition matrix must be {n}x{n}")
    u = np.zeros(n) if u is None else np.atleast_1d(np.asarray(u, dtype=float))
    det = np.linalg.det(f_mat)
    if not np.isfinite(det) or abs(det) < 1e-12 * max(1.0, np.abs(f_mat).max() ** n):
        raise SingularDynamicsError("transition matrix is singular; cannot move grid")
    return Grid(grid.axis_counts, grid.axis_steps, f_mat @ grid.basis, f_mat @ grid.offset + u)


def reshape_to_physical(weights, grid):
    """Computational vector -> physical tensor (first axis fastest)."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (grid.n_points,):
        raise ValueError(f"expected {grid.n_points} weights, got {w.shape[0]}")
    return w.reshape(grid.axis_counts, order="F")


def flatten_from_physical(tensor, grid):
    """Inverse of :func:`reshape_to_physical`; round-trip is exact."""
    t = np.asarray(tensor, dtype=float)
    if t.shape != tuple(grid.axis_counts):
        raise ValueError(f"expected tensor of shape {grid.axis_counts}, got {t.shape}")
    return t.ravel(order="F")


def normalize(pmd):
    """Scale weights so the density integrates to one."""
    s = pmd.mass()
    if not np.isfinite(s) or s <= 0.0:
        raise DegenerateDensityError("cannot normalize an all-zero density")
    return PointMassDensity(pmd.grid, pmd.weights / s)


def pmd_moments(pmd):
    """Mean and covariance of a normalized point-mass density."""
    m = pmd.mass()
    if abs(m - 1.0) > 1e-9:
        raise ValueError(f"density must be normalized (mass={m!r})")
    pts = pmd.grid.points()
    w = pmd.weights * pmd.delta
    mean = w @ pts
    d = pts - mean
    cov = d.T @ (d * w[:, None])
    return mean, 0.5 * (cov + cov.T)


def interpolate(pmd, target, renormalize=True):
    """Transfer a density onto a new grid by multilinear interpolation.

    Target points are mapped into the source grid's pre-image coordinates,
    where the source lattice is axis-aligned, so only structured-grid
    interpolation is needed.  Points outside the source hull get weight 0.
    """
    if target.dim != pmd.grid.dim:
        raise ValueError("source and target grids must share the dimension")
    coords = pmd.grid.to_fractional(target.points())
    vals = map_coordinates(pmd.as_tensor(), coords, order=1, mode="constant", cval=0.0)
    out = PointMassDensity(target, np.clip(vals, 0.0, None))
    return normalize(out) if renormalize else out
