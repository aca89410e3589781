"""Coarse-to-fine alignment of deformable triangle meshes.

Pipeline: cotangent Laplace-Beltrami eigenbasis per mesh, extrinsic
coarse fit driven by an intrinsic neural deformation field, functional-map
rectification of the embeddings, non-linear intrinsic refinement, and a
joint 3D/Laplacian shape transfer back to the source topology.
"""

from .bench import (
    SyntheticPair,
    WarpSpec,
    chamfer_metric,
    correspondence_error,
    grid_mesh,
    icosphere,
    make_cloth_pair,
    normal_cosine,
)
from .distances import chamfer, nearest_neighbors
from .config import PipelineConfig, load_config
from .errors import (
    ConfigError,
    InputError,
    MeshError,
    NumericalError,
    SpectralignError,
)
from .fmap import (
    FunctionalMap,
    apply_fmap,
    fmap_from_p2p,
    linear_icp_refine,
    p2p_nearest,
)
from .mesh import TriMesh, load_mesh, save_mesh
from .nn import AdamState, MlpField, adam_step, mlp_backward, mlp_forward
from .pipeline import AlignResult, align_pair
from .rig import Pose, Rig, lbs, load_pose, load_rig, smooth_template
from .spectral import (
    SpectralBasis,
    cached_eigenbasis,
    cotangent_matrix,
    eigenbasis,
    scale_basis,
)
from .stage1 import CoarseFitResult, coarse_fit, pose_template
from .stage2 import RefineResult, augment_embedding, rectify_target, refine_embeddings
from .transfer import TransferWeights, build_transfer_targets, solve_transfer

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AlignResult",
    "ConfigError",
    "CoarseFitResult",
    "FunctionalMap",
    "InputError",
    "MeshError",
    "MlpField",
    "NumericalError",
    "PipelineConfig",
    "Pose",
    "RefineResult",
    "Rig",
    "SpectralBasis",
    "SpectralignError",
    "SyntheticPair",
    "TransferWeights",
    "TriMesh",
    "WarpSpec",
    "adam_step",
    "align_pair",
    "apply_fmap",
    "augment_embedding",
    "build_transfer_targets",
    "cached_eigenbasis",
    "chamfer",
    "chamfer_metric",
    "coarse_fit",
    "correspondence_error",
    "cotangent_matrix",
    "eigenbasis",
    "fmap_from_p2p",
    "grid_mesh",
    "icosphere",
    "lbs",
    "linear_icp_refine",
    "load_config",
    "load_mesh",
    "load_pose",
    "load_rig",
    "make_cloth_pair",
    "mlp_backward",
    "mlp_forward",
    "nearest_neighbors",
    "normal_cosine",
    "p2p_nearest",
    "pose_template",
    "rectify_target",
    "refine_embeddings",
    "save_mesh",
    "scale_basis",
    "smooth_template",
    "solve_transfer",

]
