"""Fast time updates for the moved-grid point-mass filter.

Moving the grid through the deterministic part of the dynamics makes the
transition matrix Toeplitz, so the O(N^2) dense product collapses to:

* discrete dynamics -- one kernel row (the transition density evaluated at
  lattice offsets) convolved with the weights via zero-padded FFTs;
* continuous dynamics -- the remaining diffusion solved by an explicit
  finite-difference operator whose eigenvectors are the DST-I basis, so l
  substeps reduce to one forward and one backward fast sine transform with
  an elementwise eigenvalue power in between.

Both routes cost O(N log N) per step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft
from scipy import sparse
from scipy.linalg import solve_triangular

from .errors import (
    BoundaryLeakError,
    BoundaryLeakWarning,
    MisalignedGridsError,
    UnstableStepError,
)
from .grid import PointMassDensity, move_grid, normalize
from .models import LtiDynamics, mvn_pdf
from .pmf import FilterState, measurement_update
from .redesign import RedesignConfig, redesign

__all__ = [
    "FdmOperator",
    "SpectralKernel",
    "EpmfConfig",
    "middle_row_dd",
    "transition_kernel_dd",
    "fft_time_update",
    "fdm_coefficients",
    "stable_dt",
    "eigen_values",
    "lambda_pow",
    "fst_time_update",
    "middle_row_cd",
    "diagonalize_noise",
    "original_moments",
    "assemble_fdm_operator",
    "efficient_predict",
    "epmf_step",
]


# ---------------------------------------------------------------------------
# discrete dynamics: Toeplitz kernel + FFT convolution


def _check_moved_image(source, moved, f, u):
    if moved.axis_counts != source.axis_counts:
        raise MisalignedGridsError("source and moved grids must share axis counts")
    scale = 1.0 + np.abs(moved.basis).max() + np.abs(moved.offset).max()
    if (
        not np.allclose(moved.axis_steps, source.axis_steps, rtol=1e-9, atol=0.0)
        or not np.allclose(moved.basis, f @ source.basis, rtol=0.0, atol=1e-9 * scale)
        or not np.allclose(moved.offset, f @ source.offset + u, rtol=0.0, atol=1e-9 * scale)
    ):
        raise MisalignedGridsError("destination grid is not the moved image of the source")


def _offset_kernel(moved, q_d, counts):
    axes = [
        (np.arange(c) - (c - 1) / 2.0) * moved.axis_steps[a]
        for a, c in enumerate(counts)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    offsets = np.stack([m.ravel(order="F") for m in mesh], axis=1)
    try:
        vals = mvn_pdf(offsets @ moved.basis.T, np.zeros(moved.dim), q_d)
    except ValueError:
        raise ValueError("process noise covariance must be positive definite") from None
    return vals.reshape(counts, order="F")


def middle_row_dd(source, moved, dynamics):
    """Center row of the moved-grid transition matrix as a kernel tensor.

    For ``moved = move_grid(source, F, u)`` the transition density between
    any source/destination pair depends only on the lattice index offset,
    so the whole transition matrix is determined by one row.  The returned
    tensor holds ``N(moved.basis @ (d * steps); 0, Q_d)`` at every signed
    multi-index offset ``d`` reachable from the center and equals the
    center row of the dense transition matrix reshaped.
    """
    f, u, q_d = dynamics.discrete_equivalent()
    _check_moved_image(source, moved, f, u)
    return _offset_kernel(moved, q_d, moved.axis_counts)


def transition_kernel_dd(source, moved, dynamics):
    """Transition kernel over the full offset range (2N-1 per axis).

    The center row only reaches offsets up to half the grid span; the far
    corners of the dense transition matrix lie beyond it.  Evaluating the
    kernel on every offset that occurs between grid points makes the FFT
    convolution reproduce the dense product to floating-point accuracy
    instead of truncating the kernel tail.
    """
    f, u, q_d = dynamics.discrete_equivalent()
    _check_moved_image(source, moved, f, u)
    counts = tuple(2 * c - 1 for c in moved.axis_counts)
    return _offset_kernel(moved, q_d, counts)


def _fft_convolve_same(w, kern):
    """Linear convolution (zero-padded, no circular aliasing), cropped so
    output index j collects kernel offsets j - i around the kernel center."""
    full = [ws + ks - 1 for ws, ks in zip(w.shape, kern.shape)]
    fast = [_fft.next_fast_len(s) for s in full]
    spec = _fft.rfftn(w, fast) * _fft.rfftn(kern, fast)
    out = _fft.irfftn(spec, fast)
    crop = tuple(
        slice((ks - 1) // 2, (ks - 1) // 2 + ws) for ws, ks in zip(w.shape, kern.shape)
    )
    return out[crop]


def fft_time_update(pmd, kernel, dest):
    """Convolve the weights with the moved-grid kernel; renormalize.

    The result lives on ``dest`` (the moved grid).  Accepts the center-row
    kernel (same shape as the weights) or the full-offset kernel (2N-1 per
    axis); with the latter the update equals the dense transition product
    to floating-point accuracy.
    """
    w = pmd.as_tensor()
    kernel = np.asarray(kernel, dtype=float)
    if tuple(dest.axis_counts) != w.shape:
        raise ValueError("weights do not match the destination grid")
    if kernel.ndim != w.ndim or any(
        ks != ws and ks != 2 * ws - 1 for ws, ks in zip(w.shape, kernel.shape)
    ):
        raise ValueError("kernel axes must have N or 2N-1 entries")
    conv = _fft_convolve_same(w, kernel)
    out = pmd.delta * np.clip(conv.ravel(order="F"), 0.0, None)
    return normalize(PointMassDensity(dest, out))


# ---------------------------------------------------------------------------
# continuous dynamics: explicit diffusion step diagonalized by DST-I


@dataclass(frozen=True)
class FdmOperator:
    """Explicit central-difference diffusion step on an axis-aligned grid.

    Off-diagonal coefficient per axis ``a_i = Q_ii dt / (2 h_i^2)`` and
    center coefficient ``b = 1 - sum_i Q_ii dt / h_i^2 - dt trace(A)``;
    ``substeps`` explicit steps of length ``dt`` cover one sampling period.
    ``b > 0`` makes the step a convex combination (stable, positivity
    preserving).
    """

    axis_coeffs: tuple
    center: float
    dt: float
    substeps: int


def _state_steps(grid):
    basis = grid.basis
    diag = np.abs(np.diag(basis))
    off = np.abs(basis - np.diag(np.diag(basis))).max()
    if off > 1e-9 * max(diag.max(), 1e-300):
        raise ValueError("grid must be axis-aligned in state space for the spectral update")
    return grid.axis_steps * diag


def fdm_coefficients(dynamics, grid, dt):
    """Finite-difference coefficients for one explicit diffusion substep."""
    if dynamics.flavor != "continuous":
        raise ValueError("finite-difference coefficients need continuous dynamics")
    q = dynamics.noise
    if np.abs(q - np.diag(np.diag(q))).max() > 1e-12 * max(np.abs(q).max(), 1e-300):
        raise ValueError("diffusion matrix must be diagonal; diagonalize the noise first")
    if dt <= 0:
        raise ValueError("dt must be positive")
    h = _state_steps(grid)
    qd = np.diag(q)
    coeffs = tuple(float(c) for c in qd * dt / (2.0 * h**2))
    tr = float(np.trace(dynamics.mat))
    rate = float((qd / h**2).sum()) + tr
    b = 1.0 - dt * rate
    if b <= 0.0:
        max_dt = 1.0 / rate if rate > 0 else None
        raise UnstableStepError(
            f"explicit step unstable (center coefficient {b:.3g} <= 0); "
            f"largest stable dt is {max_dt!r}",
            max_dt=max_dt,
        )
    substeps = int(round(dynamics.ts / dt))
    if substeps < 1 or abs(substeps * dt - dynamics.ts) > 1e-9 * dynamics.ts:
        raise ValueError("dt must divide the sampling period into an integer substep count")
    return FdmOperator(coeffs, b, float(dt), substeps)


def stable_dt(dynamics, grid, margin=0.1):
    """Largest dt keeping the center coefficient >= margin, with an
    integer substep count."""
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must lie in [0, 1)")
    h = _state_steps(grid)
    rate = float((np.diag(dynamics.noise) / h**2).sum()) + float(np.trace(dynamics.mat))
    if rate <= 0.0:
        return dynamics.ts
    bound = (1.0 - margin) / rate
    substeps = max(1, int(math.ceil(dynamics.ts / bound - 1e-12)))
    return dynamics.ts / substeps


def eigen_values(op, axis_counts):
    """Analytic eigenvalues of the assembled diffusion operator.

    Tensor entry (i_1, ..., i_n) is
    ``b + sum_a 2 a_a cos(i_a pi / (N_a + 1))`` with 1-based indices; the
    eigenvectors are the DST-I basis, independent of the coefficients.
    """
    counts = tuple(int(c) for c in axis_counts)
    lam = np.full(counts, op.center)
    for axis, coeff in enumerate(op.axis_coeffs):
        n = counts[axis]
        c = 2.0 * coeff * np.cos(np.arange(1, n + 1) * np.pi / (n + 1))
        shape = [1] * len(counts)
        shape[axis] = n
        lam = lam + c.reshape(shape)
    return lam


@dataclass(frozen=True)
class SpectralKernel:
    """Accumulated substep eigenvalues in the spectral domain."""

    values: np.ndarray
    variant: str = "dst_diagonal"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.variant not in ("dst_diagonal", "fft_kernel_row"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")


def lambda_pow(eigs, substeps=None):
    """Elementwise product of per-substep eigenvalue tensors.

    Pass a single tensor with a substep count (time-invariant coefficients,
    elementwise power) or an iterable of per-substep tensors.
    """
    if isinstance(eigs, np.ndarray):
        n = 1 if substeps is None else int(substeps)
        if n < 1:
            raise ValueError("substep count must be >= 1")
        return SpectralKernel(eigs**n)
    tensors = [np.asarray(e, dtype=float) for e in eigs]
    if not tensors:
        raise ValueError("need at least one substep eigenvalue tensor")
    out = tensors[0].copy()
    for t in tensors[1:]:
        out *= t
    return SpectralKernel(out)


def _dst1(x, axes=None):
    """Unnormalized DST-I: applies R with entries sin(i j pi/(N+1)) per axis."""
    if axes is None:
        axes = tuple(range(x.ndim))
    return _fft.dstn(x, type=1, axes=axes) / (2.0 ** len(axes))


def _fst_propagate(tensor, lam_pow):
    """R diag(lam_pow) R^-1 applied along every axis (R^-1 = 2/(N+1) R)."""
    y = _dst1(tensor)
    y *= lam_pow
    y = _dst1(y)
    y *= np.prod([2.0 / (n + 1) for n in tensor.shape])
    return y


def _boundary_ratio(tensor):
    peak = float(tensor.max())
    if peak <= 0.0:
        return 0.0
    edge = 0.0
    for axis in range(tensor.ndim):
        edge = max(edge, float(tensor.take(0, axis=axis).max()))
        edge = max(edge, float(tensor.take(-1, axis=axis).max()))
    return edge / peak


def fst_time_update(pmd, kernel, boundary_policy="warn", boundary_tol=1e-8):
    """Spectral diffusion update: two DST-I passes around an elementwise
    eigenvalue product; renormalize.

    The sine basis imposes zero-Dirichlet boundaries, so the density must
    be negligible at the grid boundary; ``boundary_policy`` chooses between
    'warn', 'raise' and 'ignore' when the boundary-to-peak ratio exceeds
    ``boundary_tol``.
    """
    if not isinstance(kernel, SpectralKernel) or kernel.variant != "dst_diagonal":
        raise ValueError("fst_time_update needs a dst_diagonal spectral kernel")
    t = pmd.as_tensor()
    if kernel.values.shape != t.shape:
        raise ValueError("kernel and weight tensor shapes must match")
    if boundary_policy not in ("warn", "raise", "ignore"):
        raise ValueError(f"unknown boundary policy {boundary_policy!r}")
    if boundary_policy != "ignore":
        ratio = _boundary_ratio(t)
        if ratio > boundary_tol:
            msg = f"density at grid boundary is {ratio:.2e} of the peak (> {boundary_tol:.0e})"
            if boundary_policy == "raise":
                raise BoundaryLeakError(msg)
            warnings.warn(msg, BoundaryLeakWarning)
    out = np.clip(_fst_propagate(t, kernel.values).ravel(order="F"), 0.0, None)
    return normalize(PointMassDensity(pmd.grid, out))


def middle_row_cd(op, axis_counts, kernel):
    """Center row of the substepped diffusion operator as a kernel tensor.

    Evaluates ``(R lam_pow R^-1)[m, :]`` with one DST-I of the eigenvalue
    tensor scaled by the center eigenvector entries; feeding the result to
    :func:`fft_time_update` reproduces :func:`fst_time_update` away from
    the boundary.
    """
    counts = tuple(int(c) for c in axis_counts)
    if kernel.values.shape != counts:
        raise ValueError("kernel tensor does not match the axis counts")
    row = kernel.values.copy()
    for axis, n in enumerate(counts):
        center = (n + 1) // 2  # 1-based center index
        vec = np.sin(center * np.arange(1, n + 1) * np.pi / (n + 1))
        shape = [1] * len(counts)
        shape[axis] = n
        row *= vec.reshape(shape)
    return _dst1(row) * np.prod([2.0 / (n + 1) for n in counts])


def diagonalize_noise(dynamics):
    """Rotate/scale the state so the diffusion matrix becomes identity.

    Returns the transformed dynamics and the Cholesky factor G of the full
    diffusion matrix.  Moments map back as ``mean = G mean_bar`` and
    ``cov = G cov_bar G^T``.
    """
    if dynamics.flavor != "continuous":
        raise ValueError("noise diagonalization applies to continuous dynamics")
    try:
        g = np.linalg.cholesky(dynamics.noise)
    except np.linalg.LinAlgError:
        raise ValueError("diffusion matrix must be positive definite") from None
    a_bar = solve_triangular(g, dynamics.mat @ g, lower=True)
    u_bar = solve_triangular(g, dynamics.u, lower=True)
    transformed = LtiDynamics(
        "continuous", a_bar, u_bar, np.eye(dynamics.dim), ts=dynamics.ts
    )
    return transformed, g


def original_moments(g, mean_bar, cov_bar):
    """Map moments of the unit-diffusion state back to the original state."""
    return g @ mean_bar, g @ cov_bar @ g.T


def assemble_fdm_operator(grid, q_full, a_mat, dt):
    """Direct sparse assembly of one explicit diffusion substep.

    Reference formulation for the spectral path: second differences per
    axis plus central cross-difference stencils for off-diagonal diffusion,
    with coefficients taken from the diffusion matrix expressed in the
    grid's lattice coordinates.  Truncation at the grid edge gives the same
    zero-Dirichlet boundary as the sine transform.
    """
    counts = grid.axis_counts
    n = grid.dim
    q_full = np.atleast_2d(np.asarray(q_full, dtype=float))
    m = grid.basis @ np.diag(grid.axis_steps)
    m_inv = np.linalg.inv(m)
    q_idx = m_inv @ q_full @ m_inv.T
    tr = float(np.trace(np.atleast_2d(a_mat)))

    def chain(mats_by_axis):
        factors = [
            mats_by_axis.get(ax, sparse.identity(counts[ax], format="csr"))
            for ax in range(n)
        ]
        out = factors[-1]
        for f in reversed(factors[:-1]):
            out = sparse.kron(out, f, format="csr")
        return out

    op = (1.0 - dt * tr) * sparse.identity(grid.n_points, format="csr")
    for a in range(n):
        second = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(counts[a],) * 2)
        op = op + (dt * q_idx[a, a] / 2.0) * chain({a: second})
        for b in range(a + 1, n):
            ca = sparse.diags([-0.5, 0.5], [-1, 1], shape=(counts[a],) * 2)
            cb = sparse.diags([-0.5, 0.5], [-1, 1], shape=(counts[b],) * 2)
            op = op + (dt * q_idx[a, b]) * chain({a: ca, b: cb})
    return op.tocsr()


# ---------------------------------------------------------------------------
# full filter step


@dataclass(frozen=True)
class EpmfConfig:
    """Step configuration: grid policy, update method and substep control.

    ``method='auto'`` picks the FFT kernel for discrete dynamics and the
    sine-transform diffusion for continuous dynamics; 'fft' forces the
    convolution route (using the spectral center row for continuous
    dynamics); 'fst' requires continuous dynamics.  ``dt=None`` picks the
    largest stable substep.
    """

    redesign: RedesignConfig = field(default_factory=RedesignConfig)
    method: str = "auto"
    dt: float = None
    boundary_policy: str = "warn"

    def __post_init__(self):
        if self.method not in ("auto", "fft", "fst"):
            raise ValueError(f"unknown method {self.method!r}")


def _spectral_kernel_for(dynamics, moved, dt):
    op = fdm_coefficients(dynamics, moved, dt if dt is not None else stable_dt(dynamics, moved))
    lam = eigen_values(op, moved.axis_counts)
    return op, lambda_pow(lam, op.substeps)


def efficient_predict(state, dynamics, cfg=None):
    """Predictive phase of the efficient filter cycle.

    Grid re-design (skipped at k=0), grid movement through the
    deterministic dynamics, then the O(N log N) time update chosen by the
    configuration.
    """
    cfg = cfg if cfg is not None else EpmfConfig()
    if state.k > 0:
        state = redesign(state, dynamics, cfg.redesign)
    f, u, _ = dynamics.discrete_equivalent()
    moved = move_grid(state.grid, f, u)
    method = cfg.method
    if method == "auto":
        method = "fst" if dynamics.flavor == "continuous" else "fft"
    if method == "fst":
        if dynamics.flavor != "continuous":
            raise ValueError("the sine-transform update needs continuous dynamics")
        _, kern = _spectral_kernel_for(dynamics, moved, cfg.dt)
        carried = PointMassDensity(moved, state.pmd.weights)
        pmd = fst_time_update(carried, kern, boundary_policy=cfg.boundary_policy)
    else:
        if dynamics.flavor == "continuous":
            op, kern = _spectral_kernel_for(dynamics, moved, cfg.dt)
            kernel = middle_row_cd(op, moved.axis_counts, kern)
        else:
            kernel = transition_kernel_dd(state.grid, moved, dynamics)
        pmd = fft_time_update(state.pmd, kernel, moved)
    return FilterState.from_pmd(pmd, state.k + 1)


def epmf_step(state, z, dynamics, model, cfg=None):
    """One efficient filter cycle.

    Measurement update, grid re-design (skipped at k=0), grid movement
    through the deterministic dynamics, then the O(N log N) time update.
    """
    return efficient_predict(measurement_update(state, z, model), dynamics, cfg)
