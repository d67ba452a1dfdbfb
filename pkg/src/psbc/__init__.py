"""Phase-separation binary classifier.

A binary classifier whose forward pass is a semi-implicit discretization of
a bistable reaction-diffusion equation coupled with a companion phase ODE,
together with its training pipeline, invariant-region step control,
one-vs-one ensembles, and a standalone simulation mode.
"""

from .core import (
    CANONICAL,
    IDENTITY,
    NEUMANN,
    NON_SUBORDINATE,
    PCA,
    PERIODIC,
    SUBORDINATE,
    BasisMatrix,
    Hyperparameters,
    WeightStack,
    apply_basis,
    basis_grad_pullback,
    canonical_basis,
    expand_shared,
    identity_basis,
    reaction,
    reaction_du,
    reaction_dw,
)
from .data import (
    Dataset,
    NormalizationMap,
    apply_normalization,
    fit_normalization,
    load_idx_images,
    load_idx_labels,
    load_mnist,
    load_model,
    save_model,
    scale_minmax,
    select_pair,
)
from .diffusion import DiffusionOperator, apply_d, build, neighbor_average, solve_l, solve_l_transpose
from .ensemble import Committee, ConfusionMatrix, confusion, hard_vote, metrics, ovo_predict
from .errors import (
    ConfigurationError,
    DimensionError,
    DomainError,
    IdxParseError,
    ModelFormatError,
    PropagationError,
    PsbcError,
)
from .gradient import GradientStack, backward, batch_gradient, finite_difference_gradient
from .pca import PcaBasis, basis_from_pca, irec_diameter_general, pca_basis
from .propagation import (
    InvariantBox,
    PsbcModel,
    Trajectory,
    allen_cahn_simulate,
    check_invariant,
    cost,
    flip_map,
    forward,
    invariant_box,
    irec_dt,
    new_model,
    phase_lift,
    predict,
    predict_batch,
)
from .training import (
    Candidate,
    FitReport,
    TrainConfig,
    assess,
    best_model,
    fit,
    grid_search,
    init_weights,
    kfold_split,
)

__version__ = "0.1.0"
