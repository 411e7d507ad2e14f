"""Deterministic 3D-guided face manipulation engine.

Bilinear face model fitting from 2-D landmarks, spectral shape corrections, UV-space
conditioning maps, exact adversarial loss arithmetic, and image compositing, plus a
synthetic ground-truth kit, a CLI, and an HTTP facade.
"""

from .compositor import BlendConfig, blend, dilate, margin_band, vertex_distance_plane
from .errors import (
    BadMagicError,
    DegenerateGeometryError,
    FileFormatError,
    MeshTopologyError,
    MorphfitError,
    RegularizationError,
    SizingError,
    TrainingDivergenceError,
    TruncatedFileError,
    UvLayoutError,
    VersionMismatchError,
)
from .fitting import (
    CameraPose,
    DepthCloud,
    FitConfig,
    FitResult,
    JointFitResult,
    estimate_camera,
    fit_image,
    fit_joint,
    landmark_rmse,
    project,
    refine_with_depth,
    refine_with_landmarks,
    solve_expression,
    solve_identity,
)
from .losses import (
    DiscriminatorOutputs,
    LossWeights,
    attention_compose,
    generator_objective,
    l1_loss,
    loss_gan,
    loss_iden,
    loss_pair,
    loss_real,
)
from .model import (
    SEMANTIC_LEGEND,
    BilinearModel,
    Coefficients,
    Shape,
    VertexAttributes,
    contract_bilinear,
    expression_basis,
    identity_basis,
    load_model,
    mesh_edges,
    save_model,
    vertex_attributes,
)
from .raster import (
    ConditioningStack,
    Image,
    RenderResult,
    SemanticMap,
    Texture,
    bilinear_sample,
    conditioning_stack,
    extract_texture,
    rasterize_uv,
    render,
    semantic_map,
    uv_layout,
)
from .shape_branch import (
    MlpParams,
    TrainConfig,
    mlp_forward,
    mlp_gradient,
    mlp_init,
    predict_deformation,
    train_shape_branch,
)
from .spectral import (
    DisplacementField,
    SpectralBasis,
    basis_for_model,
    decode,
    eigenbasis,
    encode,
    graph_laplacian,
    topology_hash,
)
from .synthetic import (
    BenchmarkReport,
    NonlinearDeformer,
    Scene,
    SyntheticSpec,
    benchmark_shape_branch,
    evaluate_rmse,
    make_synthetic_model,
    procedural_texture,
    sample_coefficients,
    sample_scene,
    sample_subject_scenes,
    synthetic_modes,
)

__version__ = "0.1.0"
