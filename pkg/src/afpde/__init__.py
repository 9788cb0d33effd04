"""Weighted function-space tooling for asymptotically flat elliptic problems.

Layers, bottom up: periodic grids and spectral calculus (``fields``),
dyadic shell and annulus families (``dyadic``), weighted dyadic norms and
hypothesis-checked inequality probes (``norms``, ``probes``), metric
geometry caches (``geometry``), free-space elliptic solvers (``elliptic``),
monotone semilinear continuation (``semilinear``), conformal flattening and
quotient estimates (``yamabe``), and the constraint pipeline with the fluid
variable map (``constraints``).  ``cli`` exposes the whole stack as an
``afpde`` command.
"""

from .errors import (
    AdmissibilityError,
    BarrierError,
    ConfigurationError,
    ContinuationError,
    DegenerateMetricError,
    DomainError,
    FormatError,
    PositivityLossError,
    PreconditionError,
    SolverError,
    SuperluminalDataError,
    ToleranceFailure,
    UnsupportedVersionError,
)
from .fields import (
    GridSpec,
    ScalarField,
    SymTensorField,
    VectorField,
    compensated_sum,
    gradient,
    grid_lp,
    integrate,
    read_aff,
    spectral_derivative,
    weighted_lp,
    write_aff,
)
from .dyadic import (
    FourierDyadic,
    SpatialDyadic,
    apply_annulus,
    build_fourier,
    build_spatial,
    default_fourier_jmax,
    default_spatial_jmax,
    power_family,
)
from .norms import (
    NormReport,
    NormSpec,
    besov_norm,
    dyadic_norm_batch,
    pairing_W,
    weighted_norm_classical,
    weighted_norm_dyadic,
)
from .probes import (
    PROBE_NAMES,
    CorpusField,
    ProbeReport,
    ProbeSession,
    analytic_corpus,
    probe_inequality,
)
from .geometry import (
    GeometryCache,
    MetricData,
    RegionSplit,
    build_cache,
    conformal_transform,
    covariant_divergence,
    flat_metric,
    laplace_beltrami,
    manifold_norm,
    pairing_Mg,
)
from .elliptic import (
    AsyOperator,
    ConstCoeffOp,
    LinearSolveReport,
    SolveOptions,
    apply_asy,
    asy_from_cache,
    const_inverse,
    decay_bootstrap,
    max_principle_check,
    solve_linear,
    tail_slope,
    weak_residual,
)
from .semilinear import (
    ContinuationOptions,
    ContinuationReport,
    ContinuationState,
    RHSTerm,
    SemilinearRHS,
    newton_correct,
    power_term,
    solve_semilinear,
)
from .yamabe import (
    FlattenOptions,
    FlattenReport,
    InfimumEstimate,
    TestFunctionBank,
    YamabeSpec,
    aubin_profile,
    bump_profile,
    conformal_flatten,
    estimate_infimum,
    make_yamabe_bank,
    quotient,
)

__version__ = "0.1.0"
