"""Hybrid time-finite-element / neural-network solvers for evolution PDEs."""

import jax

# PINN residuals and the finite-difference oracles need double precision.
jax.config.update("jax_enable_x64", True)

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateMetric,
    InvalidArgument,
    LinearAlgebraFailure,
    NumericFailure,
    OutOfDomain,
    TrainingDiverged,
)
from .timebasis import (  # noqa: E402
    QuadratureRule,
    TimeBasis,
    TimePartition,
    build_partition,
    eval_basis,
    gauss_rule,
    make_basis,
)
from .projection import (  # noqa: E402
    CollocationGrid,
    GalerkinSystem,
    assemble_galerkin,
    build_collocation,
    ode_solve_direct,
    project_rhs,
)

__version__ = "0.1.0"
