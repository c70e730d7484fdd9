"""Periodic E-inclusions from obstacle problems, with effective-tensor
formulas and optimal bounds for two-phase composites."""

from .lattice import (
    BravaisLattice,
    MatrixField,
    PeriodicGrid,
    ScalarField,
    hessian,
    laplacian_apply,
    reciprocal_basis,
    wrap_fractional,
)
from .obstacle import (
    ConstantPiece,
    Obstacle,
    QuadraticPiece,
    UnboundedObstacle,
    ZeroMatrix,
    build_laminate,
    build_multi,
    build_single,
    constant_obstacle,
    sample,
)
from .solver import (
    BallProblem,
    InvalidObstacle,
    NonpositiveLoad,
    NotConverged,
    SolveOptions,
    TooLarge,
    VISolution,
    complementarity_report,
    oracle_qp_solve,
    solve_dirichlet_ball,
    solve_periodic,
    tuned_omega,
)
from .einclusion import (
    EInclusionLabeling,
    UnmatchedRegion,
    check_necessary_condition,
    extract_coincident,
    label_components,
    predicted_theta,
    verify_einclusion,
)
from .spectral import (
    CharacteristicFunction,
    DegenerateVolume,
    GradientField,
    IsoTensor4,
    KappaMismatch,
    MembershipViolation,
    SingularAcousticTensor,
    apply_R,
    bitter_crum,
    compute_R,
    r_matrix_Q,
    solve_eshelby,
    solve_poisson,
)
from .homogenize import (
    ConstraintViolated,
    LimitDiverged,
    OrderingViolation,
    RangeViolation,
    SingularShift,
    Tensor4,
    conductivity_tensor,
    effective_form_general,
    effective_form_numeric,
    effective_quadratic_numeric,
    effective_tensor_closed,
    hs_bound,
    q_from_F,
    trace_bounds,
)

__version__ = "0.1.0"
