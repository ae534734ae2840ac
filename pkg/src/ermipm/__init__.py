"""Robustly centered interior-point solver for block-separable ERM duals.

The package follows a short-step central path on instances of the form
min c'x over products of small barrier domains subject to A'x = b, with a
soft-max centrality potential, leverage-score sketching of the projection
Gram, and sublinear per-step maintenance of slacks and primal iterates.
`solve` is the one-call entry point; `dualize` turns a penalized primal
ERM description into that dual form.
"""

from .barrier import (
    BUILTIN_KINDS,
    BarrierDescriptor,
    BlockLayout,
    NotInteriorError,
    anchor_point,
    ball,
    barrier_eval,
    box,
    custom,
    epigraph_square,
    hess_norm,
    nonneg_orthant,
    sample_interior,
    self_concordance_check,
)
from .config import TOL, Tolerances, rng_stream
from .dynsparsifier import (
    DecrementalSparsifier,
    DynamicSparsifier,
    HalvingBatch,
    SparsifierConfig,
    decr_init,
    dyn_delete,
    dyn_insert,
    flush_batch,
    halve,
    overestimates,
)
from .frontend import (
    ErmInstance,
    InstanceFormatError,
    InstanceValidationError,
    LossTerm,
    PrimalErmSpec,
    dualize,
    load_instance,
    load_primal_spec,
    save_instance,
    save_primal_spec,
)
from .ipm import (
    DIAG_FIELDS,
    CentralityError,
    InitializationError,
    IpmConfig,
    IpmError,
    IpmState,
    Schedule,
    SolveContext,
    SolveReport,
    StepRejectedError,
    finalize,
    gamma_block,
    gradient_dir,
    initialize,
    make_context,
    mu_block,
    psi,
    short_step,
    solve,
)
from .levscore import (
    CheckerSketch,
    WeightedSample,
    build_checker,
    estimate_lev,
    sample_gram,
    sample_sparsifier,
)
from .linalg import (
    NotPositiveDefiniteError,
    SpdFactorization,
    exact_leverage,
    gram,
    inv_sqrt,
    loewner_approx,
    logdet,
    spd_factor,
    spd_inverse,
    sqrt_psd,
)
from .maintenance import (
    L2SampleTree,
    PrimalTracker,
    SampleMatrix,
    SlackMaintainer,
    build_valid_R,
    lt_sample_block,
    lt_sample_many,
    primal_tracker_update,
    sm_update_scaling,
    sm_update_slack,
    valid_sample_probs,
)
from .sketch import HhSketch, JlSketch, hh_build, hh_recover, jl_apply, jl_build

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_KINDS",
    "BarrierDescriptor",
    "BlockLayout",
    "CentralityError",
    "CheckerSketch",
    "DIAG_FIELDS",
    "DecrementalSparsifier",
    "DynamicSparsifier",
    "ErmInstance",
    "HalvingBatch",
    "HhSketch",
    "InitializationError",
    "InstanceFormatError",
    "InstanceValidationError",
    "IpmConfig",
    "IpmError",
    "IpmState",
    "JlSketch",
    "L2SampleTree",
    "LossTerm",
    "NotInteriorError",
    "NotPositiveDefiniteError",
    "PrimalErmSpec",
    "PrimalTracker",
    "SampleMatrix",
    "Schedule",
    "SlackMaintainer",
    "SolveContext",
    "SolveReport",
    "SparsifierConfig",
    "SpdFactorization",
    "StepRejectedError",
    "TOL",
    "Tolerances",
    "WeightedSample",
    "anchor_point",
    "ball",
    "barrier_eval",
    "box",
    "build_checker",
    "build_valid_R",
    "custom",
    "decr_init",
    "dualize",
    "dyn_delete",
    "dyn_insert",
    "epigraph_square",
    "estimate_lev",
    "exact_leverage",
    "finalize",
    "flush_batch",
    "gamma_block",
    "gradient_dir",
    "gram",
    "halve",
    "hess_norm",
    "hh_build",
    "hh_recover",
    "initialize",
    "inv_sqrt",
    "jl_apply",
    "jl_build",
    "load_instance",
    "load_primal_spec",
    "loewner_approx",
    "logdet",
    "lt_sample_block",
    "lt_sample_many",
    "make_context",
    "mu_block",
    "nonneg_orthant",
    "overestimates",
    "primal_tracker_update",
    "psi",
    "rng_stream",
    "sample_interior",
    "sample_gram",
    "sample_sparsifier",
    "save_instance",
    "save_primal_spec",
    "self_concordance_check",
    "short_step",
    "sm_update_scaling",
    "sm_update_slack",
    "solve",
    "spd_factor",
    "spd_inverse",
    "sqrt_psd",
    "valid_sample_probs",
]
