"""Grid-based Bayesian state estimation with fast time updates.

Point-mass filtering on moved/re-designed grids: the dense transition
product serves as the correctness reference, while FFT-convolution
(discrete dynamics) and DST-diagonalized finite differences (continuous
dynamics) provide O(N log N) updates.  A terrain-referenced navigation
harness benchmarks the filters against a bootstrap particle filter.
"""

from .errors import (
    BoundaryLeakError,
    BoundaryLeakWarning,
    DegenerateDensityError,
    DegenerateWeightsError,
    EpmfError,
    MeasurementInconsistentError,
    MisalignedGridsError,
    OutOfMapError,
    SingularDynamicsError,
    TerrainFormatError,
    UnstableStepError,
)
from .grid import (
    Grid,
    PointMassDensity,
    build_grid_from_moments,
    flatten_from_physical,
    interpolate,
    move_grid,
    normalize,
    pmd_moments,
    reshape_to_physical,
)
from .models import (
    GaussianMixture,
    InitialCondition,
    LtiDynamics,
    TerrainMap,
    TerrainMeasurementModel,
    discretize,
    gm_pdf,
    make_altimeter_noise,
    make_coordinated_turn,
    make_random_walk,
    measurement_likelihood,
    mvn_pdf,
    simulate_trajectory,
    terrain_lookup,
)
from .pmf import (
    FilterState,
    TransitionMatrix,
    build_dense_tpm,
    dense_predict,
    dense_product_blocked,
    dense_time_update,
    init_filter,
    measurement_update,
    pmf_step,
)
from .redesign import RedesignConfig, predict_moments, redesign
from .efficient import (
    EpmfConfig,
    FdmOperator,
    SpectralKernel,
    assemble_fdm_operator,
    diagonalize_noise,
    efficient_predict,
    eigen_values,
    epmf_step,
    fdm_coefficients,
    fft_time_update,
    fst_time_update,
    lambda_pow,
    middle_row_cd,
    middle_row_dd,
    transition_kernel_dd,
    original_moments,
    stable_dt,
)
from .particle import (
    ParticleSet,
    init_particles,
    pf_estimate,
    pf_step,
    systematic_resample,
)
from .terrain_io import load_terrain, synthesize_terrain, write_terrain
from .experiment import (
    BenchResult,
    ExperimentConfig,
    ModelBundle,
    RunMetrics,
    TerrainSpec,
    bench_scaling,
    build_model,
    build_terrain,
    make_estimator,
    parse_estimator_spec,
    rmse_astd,
    run_monte_carlo,
)

__version__ = "0.1.0"
