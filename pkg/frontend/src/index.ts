/**
 * Node binding for the posekit codec and evaluator.
 *
 * Thin delegation only: every operation drives the posekit CLI through its
 * documented external interfaces (JSON Lines records in; token u32-LE
 * arrays, npz prior rasters, and report JSON out), so binding output is
 * byte-for-byte identical to direct CLI use. No codec logic lives here.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync, existsSync, mkdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import {
  PosekitError,
  SessionClosedError,
  VersionMismatchError,
  errorFromExit,
} from "./errors.js";
import { asBool, asFloat32, asInt64Values, readNpz } from "./npz.js";

export * from "./errors.js";

/** Must equal the core library's version string (checked at openSession). */
export const BINDING_VERSION = "0.1.0";

export interface SessionOptions {
  /** Path to a fitted quantizer table file (.pkb). */
  quantizers: string;
  /** Command used to launch the core CLI. */
  python?: string[];
}

export interface EncodeOptions {
  view?: string;
  horizon?: number;
  dt?: number;
}

export interface PriorsPolicy {
  pDropRay?: number;
  pDropDepth?: number;
  sparseKeep?: number;
}

export interface PriorsResult {
  rayPatches: Float32Array;
  depthPatches: Float32Array;
  patchSize: number;
  gridShape: [number, number];
  droppedRay: boolean;
  droppedDepth: boolean;
}

export interface EvalReport {
  threshold: number;
  map: number;
  per_category_ap: Record<string, number>;
  counts: Record<string, { tp: number; fp: number; fn: number }>;
}

interface RunResult {
  stdout: string;
}

export class Session {
  readonly version: string;
  readonly quantizers: string;
  private readonly command: string[];
  private closed = false;

  constructor(options: SessionOptions) {
    this.command = options.python ?? ["python3", "-m", "posekit.cli"];
    this.quantizers = options.quantizers;
    if (!existsSync(this.quantizers)) {
      throw new PosekitError(`quantizer file not found: ${this.quantizers}`);
    }
    this.version = this.run(["--version"]).stdout.trim();
    if (this.version !== BINDING_VERSION) {
      throw new VersionMismatchError(BINDING_VERSION, this.version);
    }
  }

  close(): void {
    this.closed = true;
  }

  get isClosed(): boolean {
    return this.closed;
  }

  ensureOpen(): void {
    if (this.closed) {
      throw new SessionClosedError();
    }
  }

  run(args: string[]): RunResult {
    const [exe, ...prefix] = this.command;
    const proc = spawnSync(exe, [...prefix, ...args], {
      encoding: "utf-8",
      maxBuffer: 256 * 1024 * 1024,
    });
    if (proc.error) {
      throw new PosekitError(`failed to launch ${exe}: ${proc.error.message}`);
    }
    if (proc.status !== 0) {
      throw errorFromExit(proc.status ?? -1, proc.stderr ?? "");
    }
    return { stdout: proc.stdout ?? "" };
  }
}

export function openSession(options: SessionOptions): Session {
  return new Session(options);
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "posekit-node-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

function writeJsonl(path: string, records: unknown[]): void {
  writeFileSync(path, records.map((r) => JSON.stringify(r)).join("\n") + (records.length ? "\n" : ""));
}

interface ManifestEntry {
  record_id: string;
  tokens_offset: number;
  tokens_count: number;
  skipped?: string;
}

function readTokenSlices(outDir: string): Uint32Array[] {
  const blob = readFileSync(join(outDir, "tokens.bin"));
  const lines = readFileSync(join(outDir, "manifest.jsonl"), "utf-8")
    .split("\n")
    .filter((l) => l.trim().length > 0);
  const slices: Uint32Array[] = [];
  for (const line of lines) {
    const entry = JSON.parse(line) as ManifestEntry;
    if (entry.skipped !== undefined) {
      throw new PosekitError(`record skipped: ${entry.skipped}`);
    }
    const start = entry.tokens_offset;
    const byteLength = 4 * entry.tokens_count;
    const view = blob.subarray(start, start + byteLength);
    slices.push(new Uint32Array(view.buffer.slice(view.byteOffset, view.byteOffset + byteLength)));
  }
  return slices;
}

/** Encode a batch of records in one CLI call; one ID array per record. */
export function encodeRecords(
  session: Session,
  records: unknown[],
  options: EncodeOptions = {},
): Uint32Array[] {
  session.ensureOpen();
  return withTempDir((dir) => {
    const input = join(dir, "records.jsonl");
    const outDir = join(dir, "bundle");
    writeJsonl(input, records);
    const args = [
      "encode", "--input", input, "--quantizers", session.quantizers, "--out", outDir,
    ];
    if (options.view !== undefined) args.push("--view", options.view);
    if (options.horizon !== undefined) args.push("--horizon", String(options.horizon));
    if (options.dt !== undefined) args.push("--dt", String(options.dt));
    session.run(args);
    const slices = readTokenSlices(outDir);
    if (slices.length !== records.length) {
      throw new PosekitError(`expected ${records.length} token arrays, got ${slices.length}`);
    }
    return slices;
  });
}

/** Token IDs for one scene record; byte-identical to the core encode path. */
export function encodeScene(session: Session, record: unknown): Uint32Array {
  return encodeRecords(session, [record])[0];
}

/** Token IDs for one trajectory record projected into a camera view. */
export function encodeTrajectory(
  session: Session,
  record: unknown,
  options: EncodeOptions = {},
): Uint32Array {
  return encodeRecords(session, [record], options)[0];
}

export interface DecodedPose {
  translation: number[];
  rotation: number[];
}

export interface DecodedItem {
  kind: "tuple" | "trajectory";
  category?: string;
  box_center?: number[];
  pose?: DecodedPose;
  size?: number[];
  waypoints?: DecodedPose[];
  gripper?: number[] | null;
}

/** Parse a token ID array back into tuples/trajectories. */
export function decode(session: Session, ids: Uint32Array): DecodedItem[] {
  session.ensureOpen();
  return withTempDir((dir) => {
    const bundle = join(dir, "bundle");
    mkdirSync(bundle);
    writeFileSync(join(bundle, "tokens.bin"), Buffer.from(ids.buffer, ids.byteOffset, ids.byteLength));
    const manifest = {
      record_id: "binding",
      ordinal: 0,
      kind: "scene",
      view_id: null,
      instruction: "",
      tokens_offset: 0,
      tokens_count: ids.length,
    };
    writeFileSync(join(bundle, "manifest.jsonl"), JSON.stringify(manifest) + "\n");
    const out = join(dir, "decoded.jsonl");
    session.run([
      "decode", "--input", bundle, "--quantizers", session.quantizers, "--out", out,
    ]);
    const line = readFileSync(out, "utf-8").split("\n").find((l) => l.trim().length > 0);
    if (!line) {
      throw new PosekitError("decode produced no output");
    }
    return (JSON.parse(line) as { items: DecodedItem[] }).items;
  });
}

export interface IntrinsicsSpec {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

/** Patchified raymap and depth/mask stacks, after modality masking. */
export function makePriors(
  session: Session,
  intrinsics: IntrinsicsSpec,
  options: {
    depthPath?: string;
    patch?: number;
    policy?: PriorsPolicy;
    seed?: number;
    streamIndex?: number;
  } = {},
): PriorsResult {
  session.ensureOpen();
  return withTempDir((dir) => {
    const intrPath = join(dir, "intrinsics.json");
    writeFileSync(intrPath, JSON.stringify(intrinsics));
    const outPath = join(dir, "priors.npz");
    const args = ["priors", "--intrinsics", intrPath, "--out", outPath];
    if (options.depthPath) args.push("--depth", options.depthPath);
    if (options.patch !== undefined) args.push("--patch", String(options.patch));
    if (options.seed !== undefined) args.push("--seed", String(options.seed));
    if (options.streamIndex !== undefined) args.push("--stream-index", String(options.streamIndex));
    const policy = options.policy;
    if (policy) {
      const parts: string[] = [];
      if (policy.pDropRay !== undefined) parts.push(`p_ray=${policy.pDropRay}`);
      if (policy.pDropDepth !== undefined) parts.push(`p_depth=${policy.pDropDepth}`);
      if (policy.sparseKeep !== undefined) parts.push(`keep=${policy.sparseKeep}`);
      if (parts.length) args.push("--mask-policy", parts.join(","));
    }
    session.run(args);
    const arrays = readNpz(readFileSync(outPath));
    const grid = asInt64Values(arrays.get("grid_shape")!);
    return {
      rayPatches: asFloat32(arrays.get("ray_patches")!),
      depthPatches: asFloat32(arrays.get("depth_patches")!),
      patchSize: asInt64Values(arrays.get("patch_size")!)[0],
      gridShape: [grid[0], grid[1]],
      droppedRay: asBool(arrays.get("dropped_ray")!),
      droppedDepth: asBool(arrays.get("dropped_depth")!),
    };
  });
}

/** Oriented-box AP at a fixed IoU threshold; numerically identical to core. */
export function evaluate(
  session: Session,
  preds: unknown[],
  gts: unknown[],
  threshold = 0.15,
): EvalReport {
  session.ensureOpen();
  return withTempDir((dir) => {
    const predPath = join(dir, "pred.jsonl");
    const gtPath = join(dir, "gt.jsonl");
    writeJsonl(predPath, preds);
    writeJsonl(gtPath, gts);
    const { stdout } = session.run([
      "evaluate", "--pred", predPath, "--gt", gtPath, "--iou", String(threshold), "--json",
    ]);
    return JSON.parse(stdout) as EvalReport;
  });
}
