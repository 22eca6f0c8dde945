"""Functional sparse Tucker compression of gridded and scattered data."""

__version__ = "0.1.0"

from ._accel import get_backend, set_backend, set_threads
from .basis import BasisSpec, design_matrix, eval_basis
from .errors import (
    DataError,
    DecodeError,
    DegenerateInputError,
    DomainError,
    FSTuckerError,
    ModeIndexError,
    ParameterError,
    ShapeError,
)
from .ingestion import (
    PointCloud,
    StructuredGrid,
    SyntheticField,
    interpolate_to_grid,
    read_cloud,
    subsample,
    synth_field,
)
from .lasso import LassoPath, SparseFit, fit_singular_vector, lars_lasso_path, loo_select
from .model import (
    FunctionalSparseTuckerModel,
    StorageCost,
    assemble,
    compression_ratio,
    deserialize,
    serialize,
)
from .randls import SketchConfig, leverage_scores, reestimate_core, self_convergence, sketch
from .sthosvd import TuckerDecomposition, reconstruct, singular_value_decay, sthosvd
from .tensor import mode_product, read_tensor, refold, relative_error, unfold, write_tensor

__all__ = [
    "BasisSpec",
    "DataError",
    "DecodeError",
    "DegenerateInputError",
    "DomainError",
    "FSTuckerError",
    "FunctionalSparseTuckerModel",
    "LassoPath",
    "ModeIndexError",
    "ParameterError",
    "PointCloud",
    "ShapeError",
    "SketchConfig",
    "SparseFit",
    "StorageCost",
    "StructuredGrid",
    "SyntheticField",
    "TuckerDecomposition",
    "assemble",
    "compression_ratio",
    "design_matrix",
    "deserialize",
    "eval_basis",
    "fit_singular_vector",
    "get_backend",
    "interpolate_to_grid",
    "lars_lasso_path",
    "leverage_scores",
    "loo_select",
    "mode_product",
    "read_cloud",
    "read_tensor",
    "reconstruct",
    "reestimate_core",
    "refold",
    "relative_error",
    "self_convergence",
    "serialize",
    "set_backend",
    "set_threads",
    "singular_value_decay",
    "sketch",
    "sthosvd",
    "subsample",
    "synth_field",
    "unfold",
    "write_tensor",
]
