"""Sparse coding solvers, one-step feature encoders, and the patch-based
image classification pipeline built on them."""

from .core import (
    CodeBatch,
    Dictionary,
    DimensionMismatch,
    SignalBatch,
    SolverTrace,
    SparseCodingProblem,
    TraceRecord,
    lipschitz_constant,
    mean_reconstruction_error,
    objective,
    reconstruction_error,
)
from .onestep import (
    OneStepEncoder,
    encode_admm_onestep,
    encode_fista_onestep,
    encode_soft_threshold,
    encode_triangle,
    encode_triangle_squared,
    split_dictionary,
)
from .prox import ProxSpec, nonneg_soft_threshold, prox, soft_threshold
from .solvers import (
    SolverConfig,
    SolverEncoder,
    encode_batch,
    prox_gradient_step,
    solve,
)

__version__ = "0.1.0"
