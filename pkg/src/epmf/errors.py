"""Exception types shared across the package."""


class EpmfError(Exception):
    """Base class for filter-specific failures."""


class SingularDynamicsError(EpmfError):
    """Transition matrix is singular; moved grids would collapse."""


class DegenerateDensityError(EpmfError):
    """All density weights are zero; normalization impossible."""


class DegenerateWeightsError(EpmfError):
    """Particle weights sum to zero; resampling impossible."""


class MeasurementInconsistentError(EpmfError):
    """Likelihood vanished on the whole grid (map/trajectory mismatch)."""


class OutOfMapError(EpmfError):
    """Queried position lies outside the terrain raster extent."""


class MisalignedGridsError(EpmfError):
    """Destination grid is not the moved image of the source grid."""


class UnstableStepError(EpmfError):
    """Explicit diffusion step violates the positivity/stability bound.

    Attributes:
        max_dt: largest stable time step for the offending configuration,
            or None if no positive step is stable.
    """

    def __init__(self, message, max_dt=None):
        super().__init__(message)
        self.max_dt = max_dt


class BoundaryLeakError(EpmfError):
    """Non-negligible density mass at the grid boundary before a
    zero-Dirichlet spectral update."""


class BoundaryLeakWarning(UserWarning):
    """Warning flavor of :class:`BoundaryLeakError`."""


class TerrainFormatError(EpmfError):
    """Terrain raster file is malformed.

    Attributes:
        offset: byte offset of the offending field, if known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
