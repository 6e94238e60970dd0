"""Lie-group preconditioners for stochastic gradient descent.

Sparse matrix-free preconditioners built from permutation subgroups, a
low-rank family Q = scale (I + U V^T), online fitting of both by descent on
the group, a preconditioned-SGD driver, desk-scale testbeds, and a benchmark
CLI with a verification suite.
"""

from .base import DescentMove, UpdateResult
from .curvature import (
    CurvaturePair,
    PairKind,
    ProbeDistribution,
    ProbeSource,
    make_probe,
    pair_from_deltas,
    pair_from_fd_grad,
    pair_from_hvp,
)
from .fitting import (
    CriterionSample,
    FixedPointSpec,
    FitResult,
    criterion_hat,
    directional_derivative_check,
    fit_preconditioner,
    fixed_point_oracle,
    spectral_spread,
)
from .lra import LraElement, lra_from_record, lra_identity, spectrum_witness
from .mfgroups import (
    GroupElement,
    PermSubgroup,
    build_subgroup,
    butterfly_group,
    dense_group,
    diagonal_group,
    element_from_dense,
    element_from_record,
    identity_element,
    make_group,
    random_element,
    x_shape_group,
)
from .optimizer import (
    CosineDecay,
    ExponentialAnneal,
    OptimizerConfig,
    OptimizerState,
    StageDrops,
    clip_preconditioned,
    lr_schedule,
    momentum_update,
    psgd_step,
)

__version__ = "0.1.0"
