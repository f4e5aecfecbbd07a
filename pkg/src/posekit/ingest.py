"""Canonical interchange records and the camera-centric training stream.

Records travel as JSON Lines, one record per line, with a top-level
"schema_version" discriminating the two kinds:

Scene record ("posekit-scene/1"):
    {"schema_version": "posekit-scene/1", "id": "...", "image_ref": "...",
     "intrinsics": {"fx", "fy", "cx", "cy", "width", "height"},
     "depth_ref": "depth.npy" (optional), "instruction": "..." (optional),
     "annotations": [{"category": str, "box_center_px": [u, v],
                      "pose": {"translation": [x, y, z],
                               "rotation": [w, x, y, z]},
                      "size": [sx, sy, sz] (optional)}]}

Trajectory record ("posekit-traj/1"):
    {"schema_version": "posekit-traj/1", "id": "...", "instruction": "...",
     "views": [{"view_id": str, "intrinsics": {...},
                "extrinsics": {"pose_of_base_in_camera": pose}}],
     "frames": [{"timestamp": seconds,
                 "arms": {arm_id: {"ee_pose_base": pose,
                                   "gripper": [0, 1]}}}]}

Emission converts each record into one bundle: a token-ID target sequence,
patchified prior fields after modality masking, and a manifest line indexing
both by byte offset. Bundles are pure functions of (record, seed, ordinal),
so a worker pool yields byte-identical output to a serial run.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyTrajectory,
    InvalidHorizon,
    InvariantViolation,
    SchemaError,
    UnknownView,
)
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Se3Pose,
    base_to_camera,
    raymap,
)
from .priors import (
    DepthMap,
    MaskPolicy,
    mask_modality,
    patchify,
    sparse_depth_sample,
    stack_depth_mask,
)
from .quantizer import QuantizerSet
from .vocab import (
    PoseTuple,
    TokenSequence,
    Trajectory,
    Vocab,
    serialize_trajectory,
    serialize_tuples,
)

SCENE_SCHEMA = "posekit-scene/1"
TRAJ_SCHEMA = "posekit-traj/1"

DEFAULT_HORIZON = 16
DEFAULT_DT = 0.1
DEFAULT_PATCH = 14


# --- schema helpers -------------------------------------------------------------


def _get(obj, key, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{path}/{key}", "missing required field")
    return obj[key]


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(value).__name__}")
    v = float(value)
    if not math.isfinite(v):
        raise SchemaError(path, "number must be finite")
    return v


def _integer(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _string(value, path):
    if not isinstance(value, str):
        raise SchemaError(path, f"expected a string, got {type(value).__name__}")
    return value


def _vector(value, n, path):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise SchemaError(path, f"expected a {n}-element array")
    return [_number(v, f"{path}/{i}") for i, v in enumerate(value)]


def _pose(value, path) -> Se3Pose:
    t = _vector(_get(value, "translation", path), 3, f"{path}/translation")
    q = _vector(_get(value, "rotation", path), 4, f"{path}/rotation")
    try:
        return Se3Pose(np.array(t), np.array(q))
    except ValueError as e:
        raise SchemaError(path, str(e)) from None


def _intrinsics(value, path) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            fx=_number(_get(value, "fx", path), f"{path}/fx"),
            fy=_number(_get(value, "fy", path), f"{path}/fy"),
            cx=_number(_get(value, "cx", path), f"{path}/cx"),
            cy=_number(_get(value, "cy", path), f"{path}/cy"),
            width=_integer(_get(value, "width", path), f"{path}/width"),
            height=_integer(_get(value, "height", path), f"{path}/height"),
        )
    except ValueError as e:
        raise SchemaError(path, str(e)) from None


# --- validated record types ------------------------------------------------------


@dataclass(frozen=True)
class SceneAnnotation:
    category: str
    box_center_px: tuple
    box_center_norm: tuple
    pose: Se3Pose
    size: np.ndarray | None


@dataclass(frozen=True)
class SceneRecord:
    record_id: str
    image_ref: str
    intrinsics: CameraIntrinsics
    depth_ref: str | None
    instruction: str
    annotations: tuple


@dataclass(frozen=True)
class TrajectoryView:
    view_id: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass(frozen=True)
class TrajectoryFrame:
    timestamp: float
    arms: dict  # arm_id -> (ee_pose_base, gripper)


@dataclass(frozen=True)
class TrajectoryRecord:
    record_id: str
    instruction: str
    views: tuple
    frames: tuple

    def view(self, view_id: str) -> TrajectoryView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise UnknownView(f"view {view_id!r} not in {[v.view_id for v in self.views]}")

    @property
    def arm_ids(self) -> tuple:
        return tuple(sorted(self.frames[0].arms))


@dataclass(frozen=True)
class CameraFrameTrajectory:
    """A fixed-horizon, camera-frame resampled trajectory for one view."""

    view_id: str
    waypoints: Trajectory
    horizon: int

    def __post_init__(self):
        if len(self.waypoints.waypoints) != self.horizon:
            raise ValueError("waypoint count must equal the horizon")


def validate_scene(raw: dict) -> SceneRecord:
    """Check a raw scene mapping against the schema and its invariants.

    Raises:
        SchemaError: missing or mistyped field, with a JSON-pointer path.
        InvariantViolation: box center outside the image or object behind
            the camera, naming the annotation index.
    """
    version = _string(_get(raw, "schema_version", ""), "/schema_version")
    if version != SCENE_SCHEMA:
        raise SchemaError("/schema_version", f"expected {SCENE_SCHEMA!r}, got {version!r}")
    intr = _intrinsics(_get(raw, "intrinsics", ""), "/intrinsics")
    image_ref = _string(_get(raw, "image_ref", ""), "/image_ref")
    depth_ref = raw.get("depth_ref")
    if depth_ref is not None:
        depth_ref = _string(depth_ref, "/depth_ref")
    instruction = raw.get("instruction", "")
    instruction = _string(instruction, "/instruction")
    raw_anns = _get(raw, "annotations", "")
    if not isinstance(raw_anns, list):
        raise SchemaError("/annotations", "expected an array")
    annotations = []
    for i, ann in enumerate(raw_anns):
        path = f"/annotations/{i}"
        category = _string(_get(ann, "category", path), f"{path}/category")
        px, py = _vector(_get(ann, "box_center_px", path), 2, f"{path}/box_center_px")
        if not (0.0 <= px < intr.width and 0.0 <= py < intr.height):
            raise InvariantViolation(
                f"annotation {i}: box center ({px}, {py}) outside "
                f"[0, {intr.width}) x [0, {intr.height})"
            )
        pose = _pose(_get(ann, "pose", path), f"{path}/pose")
        if pose.translation[2] <= 0.0:
            raise InvariantViolation(
                f"annotation {i}: object z = {pose.translation[2]} is not in front of the camera"
            )
        size = None
        if ann.get("size") is not None:
            size = np.array(_vector(ann["size"], 3, f"{path}/size"))
            if np.any(size <= 0.0):
                raise InvariantViolation(f"annotation {i}: size must be strictly positive")
        annotations.append(
            SceneAnnotation(
                category=category,
                box_center_px=(px, py),
                box_center_norm=(px / intr.width, py / intr.height),
                pose=pose,
                size=size,
            )
        )
    return SceneRecord(
        record_id=str(raw.get("id", image_ref)),
        image_ref=image_ref,
        intrinsics=intr,
        depth_ref=depth_ref,
        instruction=instruction,
        annotations=tuple(annotations),
    )


def validate_trajectory(raw: dict) -> TrajectoryRecord:
    """Check a raw trajectory mapping against the schema and its invariants."""
    version = _string(_get(raw, "schema_version", ""), "/schema_version")
    if version != TRAJ_SCHEMA:
        raise SchemaError("/schema_version", f"expected {TRAJ_SCHEMA!r}, got {version!r}")
    instruction = _string(_get(raw, "instruction", ""), "/instruction")
    raw_views = _get(raw, "views", "")
    if not isinstance(raw_views, list) or not raw_views:
        raise SchemaError("/views", "expected a non-empty array")
    views = []
    seen = set()
    for i, view in enumerate(raw_views):
        path = f"/views/{i}"
        view_id = _string(_get(view, "view_id", path), f"{path}/view_id")
        if view_id in seen:
            raise InvariantViolation(f"duplicate view_id {view_id!r}")
        seen.add(view_id)
        views.append(
            TrajectoryView(
                view_id=view_id,
                intrinsics=_intrinsics(_get(view, "intrinsics", path), f"{path}/intrinsics"),
                extrinsics=CameraExtrinsics(
                    _pose(
                        _get(_get(view, "extrinsics", path), "pose_of_base_in_camera", f"{path}/extrinsics"),
                        f"{path}/extrinsics/pose_of_base_in_camera",
                    )
                ),
            )
        )
    raw_frames = _get(raw, "frames", "")
    if not isinstance(raw_frames, list) or len(raw_frames) < 2:
        raise SchemaError("/frames", "expected an array of at least 2 frames")
    frames = []
    arm_ids = None
    for i, frame in enumerate(raw_frames):
        path = f"/frames/{i}"
        ts = _number(_get(frame, "timestamp", path), f"{path}/timestamp")
        raw_arms = _get(frame, "arms", path)
        if not isinstance(raw_arms, dict) or not raw_arms:
            raise SchemaError(f"{path}/arms", "expected a non-empty object")
        arms = {}
        for arm_id, arm in raw_arms.items():
            arm_path = f"{path}/arms/{arm_id}"
            pose = _pose(_get(arm, "ee_pose_base", arm_path), f"{arm_path}/ee_pose_base")
            gripper = _number(_get(arm, "gripper", arm_path), f"{arm_path}/gripper")
            if not (0.0 <= gripper <= 1.0):
                raise InvariantViolation(f"frame {i}, arm {arm_id!r}: gripper {gripper} outside [0, 1]")
            arms[arm_id] = (pose, gripper)
        if arm_ids is None:
            arm_ids = set(arms)
        elif set(arms) != arm_ids:
            raise InvariantViolation(f"frame {i}: arm set differs from frame 0")
        if frames and ts <= frames[-1].timestamp:
            raise InvariantViolation(f"frame {i}: timestamps must be strictly increasing")
        frames.append(TrajectoryFrame(timestamp=ts, arms=arms))
    return TrajectoryRecord(
        record_id=str(raw.get("id", "")),
        instruction=instruction,
        views=tuple(views),
        frames=tuple(frames),
    )


def validate_record(raw: dict):
    """Dispatch on schema_version to the matching validator."""
    version = raw.get("schema_version")
    if version == SCENE_SCHEMA:
        return validate_scene(raw)
    if version == TRAJ_SCHEMA:
        return validate_trajectory(raw)
    raise SchemaError("/schema_version", f"unrecognized schema {version!r}")


def project_record(r: TrajectoryRecord, view_id: str) -> dict:
    """Camera-frame end-effector poses for one view: arm_id -> list of poses."""
    ext = r.view(view_id).extrinsics
    out = {}
    for arm_id in r.arm_ids:
        out[arm_id] = [base_to_camera(f.arms[arm_id][0], ext) for f in r.frames]
    return out


def _slerp(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation of unit quaternions."""
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(1.0, dot)
    if dot > 1.0 - 1e-12:
        q = (1.0 - alpha) * q0 + alpha * q1
    else:
        theta = math.acos(dot)
        q = (math.sin((1.0 - alpha) * theta) * q0 + math.sin(alpha * theta) * q1) / math.sin(theta)
    return q / np.linalg.norm(q)


def resample_horizon(
    timestamps,
    poses,
    t0: float,
    horizon: int,
    dt: float,
    gripper=None,
    view_id: str = "",
) -> CameraFrameTrajectory:
    """Sample a pose track at t0 + k * dt for k = 0..horizon-1.

    Translation interpolates linearly and rotation along the shortest arc
    between the two bracketing frames; a query landing exactly on a frame
    timestamp returns that frame's pose unchanged. Queries beyond the last
    timestamp clamp to the final pose.

    Raises:
        EmptyTrajectory: no input poses.
        InvalidHorizon: horizon < 1 or dt <= 0.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    poses = list(poses)
    if ts.size == 0 or not poses:
        raise EmptyTrajectory("no poses to resample")
    if len(poses) != ts.size:
        raise ValueError("timestamps and poses must have equal length")
    if horizon < 1:
        raise InvalidHorizon(f"horizon must be >= 1, got {horizon}")
    if not (dt > 0.0):
        raise InvalidHorizon(f"dt must be positive, got {dt}")
    if np.any(np.diff(ts) <= 0.0):
        raise ValueError("timestamps must be strictly increasing")
    if not (ts[0] <= t0 <= ts[-1]):
        raise ValueError(f"t0 = {t0} outside [{ts[0]}, {ts[-1]}]")
    waypoints = []
    grip_out = [] if gripper is not None else None
    for k in range(horizon):
        t = t0 + k * dt
        if t >= ts[-1]:
            waypoints.append(poses[-1])
            if grip_out is not None:
                grip_out.append(float(gripper[-1]))
            continue
        j = int(np.searchsorted(ts, t, side="right")) - 1
        j = max(j, 0)
        if ts[j] == t:
            waypoints.append(poses[j])
            if grip_out is not None:
                grip_out.append(float(gripper[j]))
            continue
        alpha = (t - ts[j]) / (ts[j + 1] - ts[j])
        a, b = poses[j], poses[j + 1]
        translation = (1.0 - alpha) * a.translation + alpha * b.translation
        rotation = _slerp(a.rotation, b.rotation, alpha)
        waypoints.append(Se3Pose(translation, rotation))
        if grip_out is not None:
            grip_out.append((1.0 - alpha) * float(gripper[j]) + alpha * float(gripper[j + 1]))
    return CameraFrameTrajectory(
        view_id=view_id,
        waypoints=Trajectory(
            waypoints=tuple(waypoints),
            gripper=tuple(grip_out) if grip_out is not None else None,
        ),
        horizon=horizon,
    )


# --- depth raster loading ---------------------------------------------------------


def load_depth_raster(path) -> DepthMap:
    """Read a depth raster: 16-bit millimeter PNG, or .npy float meters.

    Without an explicit mask channel, validity is inferred as value > 0.
    An .npz with "values" and "mask" arrays supplies an explicit mask.
    """
    path = os.fspath(path)
    if path.endswith(".npy"):
        values = np.load(path).astype(np.float64)
        return DepthMap(values, values > 0)
    if path.endswith(".npz"):
        archive = np.load(path)
        return DepthMap(archive["values"].astype(np.float64), archive["mask"])
    from PIL import Image

    with Image.open(path) as img:
        arr = np.array(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel depth raster")
    if np.issubdtype(arr.dtype, np.integer):
        values = arr.astype(np.float64) / 1000.0  # millimeters to meters
    else:
        values = arr.astype(np.float64)
    return DepthMap(values, values > 0)


# --- training stream emission -------------------------------------------------------


@dataclass(frozen=True)
class EmitConfig:
    """Knobs for emit_training_stream; defaults follow the library constants."""

    view_id: str | None = None   # trajectory records: None = first view
    arm_id: str | None = None    # trajectory records: None = first arm id
    horizon: int = DEFAULT_HORIZON
    dt: float = DEFAULT_DT
    patch_size: int = DEFAULT_PATCH
    include_priors: bool = True
    skip_on_error: bool = False
    jobs: int = 1
    base_dir: str = "."          # depth_ref paths resolve against this
    token_format: str = "binary"  # "binary" (u32 LE) or "text" (decimal per line)


def _scene_tokens(record: SceneRecord, vocab: Vocab, quantizers: QuantizerSet):
    tuples = [
        PoseTuple(
            category=a.category,
            box_center=a.box_center_norm,
            pose=a.pose,
            size=a.size,
        )
        for a in record.annotations
    ]
    return serialize_tuples(tuples, vocab, quantizers)


def _trajectory_tokens(
    record: TrajectoryRecord,
    vocab: Vocab,
    quantizers: QuantizerSet,
    config: EmitConfig,
):
    view_id = config.view_id or record.views[0].view_id
    arm_id = config.arm_id or record.arm_ids[0]
    if arm_id not in record.arm_ids:
        raise InvariantViolation(f"arm {arm_id!r} not present in record")
    per_arm = project_record(record, view_id)
    ts = [f.timestamp for f in record.frames]
    gripper = [f.arms[arm_id][1] for f in record.frames]
    resampled = resample_horizon(
        ts,
        per_arm[arm_id],
        t0=ts[0],
        horizon=config.horizon,
        dt=config.dt,
        gripper=gripper,
        view_id=view_id,
    )
    return serialize_trajectory(resampled.waypoints, vocab, quantizers), view_id


def _record_intrinsics(record) -> CameraIntrinsics:
    if isinstance(record, SceneRecord):
        return record.intrinsics
    return record.views[0].intrinsics


def _build_bundle(
    ordinal: int,
    raw: dict,
    vocab: Vocab,
    quantizers: QuantizerSet,
    policy: MaskPolicy,
    config: EmitConfig,
) -> dict:
    """Pure per-record worker; randomness is keyed by (policy.seed, ordinal)."""
    record = validate_record(raw)
    if isinstance(record, SceneRecord):
        tokens = _scene_tokens(record, vocab, quantizers)
        kind, view_id = "scene", None
        instruction = record.instruction
        depth_ref = record.depth_ref
        intr = record.intrinsics
    else:
        tokens, view_id = _trajectory_tokens(record, vocab, quantizers, config)
        kind = "trajectory"
        instruction = record.instruction
        depth_ref = None
        intr = record.view(view_id).intrinsics
    bundle = {
        "record_id": record.record_id or str(ordinal),
        "ordinal": ordinal,
        "kind": kind,
        "view_id": view_id,
        "instruction": instruction,
        "token_ids": tokens.ids,
    }
    if config.include_priors:
        ray = raymap(intr)
        if depth_ref is not None:
            depth = load_depth_raster(os.path.join(config.base_dir, depth_ref))
        else:
            depth = DepthMap.all_invalid(intr.height, intr.width)
        if policy.sparse_keep_fraction < 1.0:
            depth = sparse_depth_sample(
                depth, policy.sparse_keep_fraction, policy.seed, ordinal
            )
        ray, depth, flags = mask_modality(ray, depth, policy, ordinal)
        ray_grid = patchify(ray, config.patch_size)
        depth_grid = patchify(stack_depth_mask(depth), config.patch_size)
        bundle["priors"] = (
            ray_grid.patches.astype("<f4").tobytes()
            + depth_grid.patches.astype("<f4").tobytes()
        )
        bundle["prior_meta"] = {
            "patch_size": config.patch_size,
            "grid_shape": list(ray_grid.grid_shape),
            "ray_channels": ray_grid.channels,
            "depth_channels": depth_grid.channels,
            "dropped_ray": flags.ray_dropped,
            "dropped_depth": flags.depth_dropped,
        }
    return bundle


def emit_training_stream(
    records,
    vocab: Vocab,
    quantizers: QuantizerSet,
    policy: MaskPolicy,
    out_dir,
    config: EmitConfig | None = None,
) -> int:
    """Write one bundle per record into out_dir; returns the emitted count.

    Produces a tokens file (tokens.bin with concatenated 32-bit LE ID arrays,
    or tokens.txt with newline-delimited decimal IDs in text mode), priors.bin
    (float32 raster stacks, when priors are enabled), and manifest.jsonl
    indexing each bundle by byte/line offset. Output is deterministic for a
    fixed seed and identical for any worker count.

    In skip_on_error mode failing records are counted and logged to the
    manifest sidecar list instead of aborting; otherwise the first error
    propagates, tagged with the failing record's ordinal and id.
    """
    config = config or EmitConfig()
    os.makedirs(out_dir, exist_ok=True)
    records = list(records)

    def work(item):
        ordinal, raw = item
        try:
            return _build_bundle(ordinal, raw, vocab, quantizers, policy, config)
        except Exception as e:
            setattr(e, "record_ordinal", ordinal)
            setattr(e, "record_id", raw.get("id") if isinstance(raw, dict) else None)
            if config.skip_on_error:
                return {"ordinal": ordinal, "error": f"{type(e).__name__}: {e}"}
            raise

    items = list(enumerate(records))
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            bundles = list(pool.map(work, items))
    else:
        bundles = [work(item) for item in items]

    if config.token_format not in ("binary", "text"):
        raise ValueError(f"unknown token format {config.token_format!r}")
    text_mode = config.token_format == "text"
    emitted = 0
    lines_written = 0
    tokens_path = os.path.join(out_dir, "tokens.txt" if text_mode else "tokens.bin")
    priors_path = os.path.join(out_dir, "priors.bin")
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(tokens_path, "wb") as tokens_f, open(priors_path, "wb") as priors_f, open(
        manifest_path, "w", encoding="utf-8"
    ) as manifest_f:
        for bundle in bundles:
            if "error" in bundle:
                manifest_f.write(
                    json.dumps({"ordinal": bundle["ordinal"], "skipped": bundle["error"]}) + "\n"
                )
                continue
            ids = bundle["token_ids"]
            entry = {
                "record_id": bundle["record_id"],
                "ordinal": bundle["ordinal"],
                "kind": bundle["kind"],
                "view_id": bundle["view_id"],
                "instruction": bundle["instruction"],
                # Text mode indexes by line, binary mode by byte.
                "tokens_offset": lines_written if text_mode else tokens_f.tell(),
                "tokens_count": len(ids),
                "token_format": config.token_format,
            }
            if text_mode:
                tokens_f.write("".join(f"{i}\n" for i in ids).encode("ascii"))
                lines_written += len(ids)
            else:
                tokens_f.write(TokenSequence(ids).to_bytes())
            if "priors" in bundle:
                entry["priors_offset"] = priors_f.tell()
                entry["priors_bytes"] = len(bundle["priors"])
                entry.update(bundle["prior_meta"])
                priors_f.write(bundle["priors"])
            manifest_f.write(json.dumps(entry) + "\n")
            emitted += 1
    if not config.include_priors and os.path.getsize(priors_path) == 0:
        os.remove(priors_path)
    return emitted


def read_jsonl(path):
    """Yield (line_number, parsed object) for each non-empty line."""
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"line {line_no}", f"invalid JSON: {e}") from None
