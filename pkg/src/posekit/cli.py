"""Command-line front end for the full pipeline.

Subcommands: fit-bins, encode, decode, project, priors, evaluate. Human
summaries go to stderr; machine-readable JSON goes to stdout when --json is
given. Every subcommand is deterministic under fixed flags and --seed,
independent of --jobs.

Exit codes: 0 success, 2 schema/record errors, 3 fitting errors, 4 malformed
token streams, 5 unknown view, 6 non-divisible shapes, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import (
    InvalidRange,
    InvariantViolation,
    NonDivisibleShape,
    NonFiniteSample,
    PosekitError,
    SchemaError,
    TokenStreamError,
    TooFewSamples,
    Truncated,
    UnknownView,
)
from .eval3d import DEFAULT_IOU_THRESHOLD, Detection, GroundTruth, OrientedBox3D, evaluate
from .ingest import (
    DEFAULT_DT,
    DEFAULT_HORIZON,
    DEFAULT_PATCH,
    EmitConfig,
    SceneRecord,
    emit_training_stream,
    load_depth_raster,
    project_record,
    read_jsonl,
    resample_horizon,
    validate_record,
    validate_scene,
    validate_trajectory,
)
from .priors import DepthMap, MaskPolicy, mask_modality, patchify, sparse_depth_sample, stack_depth_mask
from .quantizer import (
    DEFAULT_N_BINS,
    QuantizerSet,
    encode_array,
    load_quantizers,
    save_quantizers,
)
from .vocab import TokenSequence, Trajectory, build_vocab, parse_sequence
from .geometry import CameraIntrinsics, raymap

QUANTIZERS_ENV = "POSEKIT_QUANTIZERS"

EXIT_SCHEMA = 2
EXIT_FITTING = 3
EXIT_TOKENS = 4
EXIT_VIEW = 5
EXIT_SHAPE = 6


def _eprint(*args) -> None:
    print(*args, file=sys.stderr)


def _load_tables(args) -> QuantizerSet:
    path = args.quantizers or os.environ.get(QUANTIZERS_ENV)
    if not path:
        raise SchemaError("/quantizers", "no --quantizers given and POSEKIT_QUANTIZERS unset")
    return load_quantizers(path)


def _pose_json(pose) -> dict:
    return {
        "translation": [float(v) for v in pose.translation],
        "rotation": [float(v) for v in pose.rotation],
    }


# --- fit-bins -----------------------------------------------------------------


def _collect_samples(path):
    """Pool translation/size samples from a record file, any schema mix."""
    xy, z, size = [], [], []
    for line_no, raw in read_jsonl(path):
        try:
            record = validate_record(raw)
        except (SchemaError, InvariantViolation) as e:
            raise SchemaError(f"line {line_no}", str(e)) from None
        if isinstance(record, SceneRecord):
            for ann in record.annotations:
                xy.extend([float(ann.pose.translation[0]), float(ann.pose.translation[1])])
                z.append(float(ann.pose.translation[2]))
                if ann.size is not None:
                    size.extend(float(s) for s in ann.size)
        else:
            for view in record.views:
                per_arm = project_record(record, view.view_id)
                for poses in per_arm.values():
                    for pose in poses:
                        xy.extend([float(pose.translation[0]), float(pose.translation[1])])
                        z.append(float(pose.translation[2]))
    return xy, z, size


def _occupancy_summary(table, samples) -> dict:
    counts = np.bincount(encode_array(table, np.asarray(samples)), minlength=table.n_bins)
    probs = counts[counts > 0] / counts.sum()
    entropy = float(-(probs * np.log2(probs)).sum())
    return {
        "n_samples": int(counts.sum()),
        "occupancy_min": int(counts.min()),
        "occupancy_max": int(counts.max()),
        "occupancy_mean": float(counts.mean()),
        "entropy_bits": entropy,
        "max_entropy_bits": math.log2(table.n_bins),
    }


def cmd_fit_bins(args) -> int:
    xy, z, size = _collect_samples(args.input)
    if not size:
        # Trajectory-only corpora carry no object extents; fall back to a
        # default support so the table set stays complete.
        size = np.linspace(0.01, 1.0, max(args.bins, 2)).tolist()
    tables = QuantizerSet.fit(xy, z, size, n_bins=args.bins)
    save_quantizers(tables, args.out)
    summary = {
        "out": args.out,
        "n_bins": args.bins,
        "families": {
            "trans_xy": _occupancy_summary(tables.trans_xy, xy),
            "trans_z": _occupancy_summary(tables.trans_z, z),
            "size": _occupancy_summary(tables.size, size),
        },
    }
    if args.json:
        print(json.dumps(summary))
    for fam, s in summary["families"].items():
        _eprint(
            f"{fam}: {s['n_samples']} samples, occupancy "
            f"[{s['occupancy_min']}, {s['occupancy_max']}] around {s['occupancy_mean']:.1f}, "
            f"entropy {s['entropy_bits']:.3f}/{s['max_entropy_bits']:.1f} bits"
        )
    _eprint(f"wrote {args.out}")
    return 0


# --- encode / decode ------------------------------------------------------------


def cmd_encode(args) -> int:
    tables = _load_tables(args)
    vocab = build_vocab()
    records = [raw for _, raw in read_jsonl(args.input)]
    config = EmitConfig(
        view_id=args.view,
        horizon=args.horizon,
        dt=args.dt,
        include_priors=False,
        skip_on_error=args.skip_on_error,
        jobs=args.jobs,
        base_dir=os.path.dirname(os.path.abspath(args.input)),
        token_format=args.format,
    )
    policy = MaskPolicy(seed=args.seed)
    count = emit_training_stream(records, vocab, tables, policy, args.out, config)
    if args.json:
        print(json.dumps({"emitted": count, "out": args.out}))
    _eprint(f"emitted {count} of {len(records)} records to {args.out}")
    return 0


def _decoded_json(item) -> dict:
    if isinstance(item, Trajectory):
        return {
            "kind": "trajectory",
            "waypoints": [_pose_json(p) for p in item.waypoints],
            "gripper": list(item.gripper) if item.gripper is not None else None,
        }
    out = {
        "kind": "tuple",
        "category": item.category,
        "box_center": [float(v) for v in item.box_center],
        "pose": _pose_json(item.pose),
    }
    if item.size is not None:
        out["size"] = [float(v) for v in item.size]
    return out


def _bundle_sequences(bundle_dir):
    """Yield (record_id, TokenSequence) from a bundle in either wire format."""
    manifest_path = os.path.join(bundle_dir, "manifest.jsonl")
    text_path = os.path.join(bundle_dir, "tokens.txt")
    if os.path.exists(text_path):
        with open(text_path, "r", encoding="ascii") as f:
            all_ids = TokenSequence.from_text(f.read()).ids
        for _, entry in read_jsonl(manifest_path):
            if "skipped" in entry:
                continue
            start = entry["tokens_offset"]
            end = start + entry["tokens_count"]
            if end > len(all_ids):
                raise Truncated("tokens.txt shorter than manifest claims", position=len(all_ids))
            yield entry["record_id"], TokenSequence(all_ids[start:end])
        return
    with open(os.path.join(bundle_dir, "tokens.bin"), "rb") as f:
        blob = f.read()
    for _, entry in read_jsonl(manifest_path):
        if "skipped" in entry:
            continue
        start = entry["tokens_offset"]
        end = start + 4 * entry["tokens_count"]
        if end > len(blob):
            raise Truncated("tokens.bin shorter than manifest claims", position=len(blob) // 4)
        yield entry["record_id"], TokenSequence.from_bytes(blob[start:end])


def cmd_decode(args) -> int:
    tables = _load_tables(args)
    vocab = build_vocab()
    n_out = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for record_id, seq in _bundle_sequences(args.input):
            items = parse_sequence(seq, vocab, tables)
            out.write(
                json.dumps(
                    {
                        "record_id": record_id,
                        "items": [_decoded_json(i) for i in items],
                    }
                )
                + "\n"
            )
            n_out += 1
    if args.json:
        print(json.dumps({"decoded": n_out, "out": args.out}))
    _eprint(f"decoded {n_out} records to {args.out}")
    return 0


# --- project -------------------------------------------------------------------


def cmd_project(args) -> int:
    n_out = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for line_no, raw in read_jsonl(args.input):
            try:
                record = validate_trajectory(raw)
            except (SchemaError, InvariantViolation) as e:
                raise SchemaError(f"line {line_no}", str(e)) from None
            view_ids = [args.view] if args.view else [v.view_id for v in record.views]
            ts = [f.timestamp for f in record.frames]
            for view_id in view_ids:
                per_arm = project_record(record, view_id)
                for arm_id in record.arm_ids:
                    gripper = [f.arms[arm_id][1] for f in record.frames]
                    resampled = resample_horizon(
                        ts,
                        per_arm[arm_id],
                        t0=ts[0],
                        horizon=args.horizon,
                        dt=args.dt,
                        gripper=gripper,
                        view_id=view_id,
                    )
                    waypoints = [
                        {**_pose_json(p), "gripper": resampled.waypoints.gripper[i]}
                        for i, p in enumerate(resampled.waypoints.waypoints)
                    ]
                    out.write(
                        json.dumps(
                            {
                                "record_id": record.record_id,
                                "view_id": view_id,
                                "arm_id": arm_id,
                                "horizon": args.horizon,
                                "dt": args.dt,
                                "waypoints": waypoints,
                            }
                        )
                        + "\n"
                    )
                    n_out += 1
    if args.json:
        print(json.dumps({"streams": n_out, "out": args.out}))
    _eprint(f"wrote {n_out} camera-frame streams to {args.out}")
    return 0


# --- priors --------------------------------------------------------------------


def _parse_mask_policy(spec: str | None, seed: int) -> MaskPolicy:
    kwargs = {"seed": seed}
    if spec:
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise SchemaError("/mask-policy", f"expected key=value, got {part!r}")
            key, value = part.split("=", 1)
            key = key.strip()
            names = {
                "p_ray": "p_drop_ray",
                "p_depth": "p_drop_depth",
                "keep": "sparse_keep_fraction",
            }
            if key not in names:
                raise SchemaError("/mask-policy", f"unknown key {key!r} (p_ray, p_depth, keep)")
            try:
                kwargs[names[key]] = float(value)
            except ValueError:
                raise SchemaError("/mask-policy", f"bad value for {key!r}: {value!r}") from None
    try:
        return MaskPolicy(**kwargs)
    except ValueError as e:
        raise SchemaError("/mask-policy", str(e)) from None


def cmd_priors(args) -> int:
    with open(args.intrinsics, "r", encoding="utf-8") as f:
        raw = json.load(f)
    try:
        intr = CameraIntrinsics(
            fx=float(raw["fx"]),
            fy=float(raw["fy"]),
            cx=float(raw["cx"]),
            cy=float(raw["cy"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError("/intrinsics", str(e)) from None
    ray = raymap(intr)
    if args.depth:
        depth = load_depth_raster(args.depth)
        if depth.values.shape != (intr.height, intr.width):
            raise SchemaError("/depth", "depth raster shape differs from intrinsics")
    else:
        depth = DepthMap.all_invalid(intr.height, intr.width)
    policy = _parse_mask_policy(args.mask_policy, args.seed)
    if policy.sparse_keep_fraction < 1.0:
        depth = sparse_depth_sample(depth, policy.sparse_keep_fraction, policy.seed, args.stream_index)
    ray, depth, flags = mask_modality(ray, depth, policy, args.stream_index)
    ray_grid = patchify(ray, args.patch)
    depth_grid = patchify(stack_depth_mask(depth), args.patch)
    np.savez(
        args.out,
        ray_patches=ray_grid.patches.astype("<f4"),
        depth_patches=depth_grid.patches.astype("<f4"),
        patch_size=np.int64(args.patch),
        grid_shape=np.asarray(ray_grid.grid_shape, dtype=np.int64),
        dropped_ray=np.bool_(flags.ray_dropped),
        dropped_depth=np.bool_(flags.depth_dropped),
    )
    summary = {
        "out": args.out,
        "patches": int(ray_grid.patches.shape[0]),
        "dropped_ray": flags.ray_dropped,
        "dropped_depth": flags.depth_dropped,
    }
    if args.json:
        print(json.dumps(summary))
    _eprint(f"{summary['patches']} patches per field -> {args.out}")
    return 0


# --- evaluate ------------------------------------------------------------------


def _boxes_from_records(path):
    """(category, OrientedBox3D) pairs from SceneRecord-style JSON Lines."""
    out = []
    for line_no, raw in read_jsonl(path):
        try:
            record = validate_scene(raw)
        except (SchemaError, InvariantViolation) as e:
            raise SchemaError(f"line {line_no}", str(e)) from None
        for i, ann in enumerate(record.annotations):
            if ann.size is None:
                raise SchemaError(
                    f"line {line_no}/annotations/{i}/size",
                    "evaluation records need a size for every annotation",
                )
            out.append(
                (
                    ann.category,
                    OrientedBox3D(ann.pose.translation, ann.size, ann.pose.rotation),
                )
            )
    return out


def cmd_evaluate(args) -> int:
    preds = [Detection(category=c, box=b) for c, b in _boxes_from_records(args.pred)]
    gts = [GroundTruth(category=c, box=b) for c, b in _boxes_from_records(args.gt)]
    report = evaluate(preds, gts, threshold=args.iou)
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    if args.json:
        print(json.dumps(payload))
    _eprint(f"mAP@{args.iou:g} = {report.map_at_threshold:.4f}")
    return 0


# --- parser / dispatch ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posekit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="pipeline seed (default 0)")
    common.add_argument("--quantizers", default=None, help=f"table file (default ${QUANTIZERS_ENV})")
    common.add_argument("--jobs", type=int, default=1, help="worker count; output is order-stable")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument(
        "--skip-on-error",
        action="store_true",
        help="count and log failing records instead of aborting",
    )

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-bins", parents=[common], help="fit quantile tables from records")
    p.add_argument("--input", required=True, help="scene/trajectory records (JSON Lines)")
    p.add_argument("--bins", type=int, default=DEFAULT_N_BINS)
    p.add_argument("--out", required=True, help="output .pkb table file")
    p.set_defaults(func=cmd_fit_bins)

    p = sub.add_parser("encode", parents=[common], help="records to token files + manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--view", default=None, help="view for trajectory records (default: first)")
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--format", choices=("binary", "text"), default="binary",
                   help="u32 LE arrays or newline-delimited decimal IDs")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="token files back to records")
    p.add_argument("--input", required=True, help="bundle directory from encode")
    p.add_argument("--out", required=True, help="decoded JSON Lines")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("project", parents=[common], help="camera-frame resampled trajectories")
    p.add_argument("--input", required=True)
    p.add_argument("--view", default=None, help="restrict to one view (default: all views)")
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("priors", parents=[common], help="patchified raymap and depth stacks")
    p.add_argument("--intrinsics", required=True, help="JSON file with fx, fy, cx, cy, width, height")
    p.add_argument("--depth", default=None, help="depth raster (.png mm, .npy m, .npz)")
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH)
    p.add_argument("--mask-policy", default=None, help='e.g. "p_ray=0.1,p_depth=0.5,keep=0.3"')
    p.add_argument("--stream-index", type=int, default=0, help="randomness stream index")
    p.add_argument("--out", required=True, help="output .npz")
    p.set_defaults(func=cmd_priors)

    p = sub.add_parser("evaluate", parents=[common], help="oriented-box AP at a fixed IoU")
    p.add_argument("--pred", required=True, help="predictions (SceneRecord JSON Lines)")
    p.add_argument("--gt", required=True, help="ground truth (SceneRecord JSON Lines)")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU_THRESHOLD)
    p.add_argument("--out", default=None, help="write the full report JSON here")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, InvariantViolation) as e:
        _eprint(f"error: {e}")
        return EXIT_SCHEMA
    except (TooFewSamples, NonFiniteSample, InvalidRange) as e:
        _eprint(f"error: {e}")
        return EXIT_FITTING
    except TokenStreamError as e:
        _eprint(f"error: {e} (byte offset {4 * e.position})")
        return EXIT_TOKENS
    except UnknownView as e:
        _eprint(f"error: {e}")
        return EXIT_VIEW
    except NonDivisibleShape as e:
        _eprint(f"error: {e}")
        return EXIT_SHAPE
    except (json.JSONDecodeError, ValueError) as e:
        _eprint(f"error: {e}")
        return EXIT_SCHEMA
    except PosekitError as e:
        _eprint(f"error: {e}")
        return 1
    except OSError as e:
        _eprint(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
