"""regkit: rigid point-cloud registration toolkit and benchmark harness."""

__version__ = "0.1.0"

from .errors import (
    DegenerateConfigurationError,
    EmptyCloudError,
    NoCorrespondencesError,
    ParseError,
    RegkitError,
    TooFewCorrespondencesError,
    TrainingDivergedError,
    UnsupportedFormatError,
)
from .geometry import (
    EulerRanges,
    RigidTransform,
    apply,
    compose,
    invert,
    rotation_error,
    rotation_xyz,
    sample_random_transform,
    transform_points,
    translation_error_norm,
    translation_error_sq,
    translation_mse,
)
from .pointcloud import PointCloud, read_pointcloud, write_pointcloud
from .mesh import (
    TriangleMesh,
    load_mesh,
    make_blob,
    make_box,
    make_icosphere,
    sample_surface,
    save_mesh_obj,
)
from .depth import (
    DepthImage,
    PinholeIntrinsics,
    depth_to_pointcloud,
    mask_visibility_ratio,
    read_depth_png,
    read_intrinsics_json,
    render_depth,
    write_depth_png,
    write_intrinsics_json,
)
from .preprocess import (
    NormalizationRecord,
    VoxelParams,
    denormalize_pose,
    enforce_count_ratio,
    make_synthetic_pair,
    normalize_pair,
    normalize_pose,
    partial_crop,
    voxel_downsample,
)
from .descriptors import DescriptorSet, estimate_normals, fpfh, score_map
from .matching import (
    AssignmentPlan,
    CorrespondenceSet,
    select_hard,
    select_weighted,
    sinkhorn,
    softmax_rows,
)
from .solver import (
    RegisterConfig,
    RegistrationResult,
    SvdGradientReport,
    icp,
    procrustes,
    register,
    svd_gradient_probe,
)
from .learning import (
    BatchNormState,
    GroundTruthAssignment,
    ToyEncoder,
    ToyEncoderConfig,
    batchnorm_forward,
    build_gt_assignment,
    load_encoder,
    nll_loss,
    save_encoder,
    train_toy_encoder,
)
from .evaluation import (
    BenchmarkReport,
    Scenario,
    Thresholds,
    add_metric,
    map_at_thresholds,
    model_diameter,
    run_benchmark,
)
