"""posekit: camera-centric 6-DoF pose tokenization, geometry priors, and
oriented-box 3D grounding evaluation."""

__version__ = "0.1.0"

from . import errors
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    EulerAngles,
    Se3Pose,
    base_to_camera,
    camera_to_base,
    compose,
    compute_ray,
    euler_to_quat,
    invert,
    quat_to_euler,
    raymap,
    transform_point,
)
from .quantizer import (
    BinTable,
    QuantizerSet,
    decode_pose,
    decode_size,
    decode_value,
    encode_array,
    encode_pose,
    encode_size,
    encode_value,
    fit_quantile_bins,
    load_quantizers,
    save_quantizers,
    uniform_bins,
)
from .vocab import (
    PoseTuple,
    TokenSequence,
    Trajectory,
    Vocab,
    build_vocab,
    parse_sequence,
    serialize_trajectory,
    serialize_tuple,
    serialize_tuples,
)
from .priors import (
    DepthMap,
    DropFlags,
    MaskPolicy,
    PatchGrid,
    mask_modality,
    patchify,
    sparse_depth_sample,
    stack_depth_mask,
    unpatchify,
)
from .ingest import (
    CameraFrameTrajectory,
    EmitConfig,
    SceneRecord,
    TrajectoryRecord,
    emit_training_stream,
    load_depth_raster,
    project_record,
    read_jsonl,
    resample_horizon,
    validate_record,
    validate_scene,
    validate_trajectory,
)
from .eval3d import (
    Detection,
    EvalReport,
    GroundTruth,
    MatchResult,
    OrientedBox3D,
    average_precision,
    evaluate,
    iou3d,
    match_detections,
    pose_errors,
)
