import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, test } from "vitest";

import {
  BINDING_VERSION,
  Session,
  SessionClosedError,
  decode,
  encodeRecords,
  encodeScene,
  encodeTrajectory,
  evaluate,
  makePriors,
  openSession,
} from "../src/index.js";
import { fixtureCorpus, sceneRecord, lcg } from "./fixtures.js";

const PYTHON = ["python3", "-m", "posekit.cli"];

function runCli(args: string[]): string {
  const proc = spawnSync(PYTHON[0], [...PYTHON.slice(1), ...args], {
    encoding: "utf-8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (proc.status !== 0) {
    throw new Error(`cli failed (${proc.status}): ${proc.stderr}`);
  }
  return proc.stdout ?? "";
}

function writeJsonl(path: string, records: unknown[]): void {
  writeFileSync(path, records.map((r) => JSON.stringify(r)).join("\n") + "\n");
}

let workDir: string;
let tablesPath: string;
let session: Session;
const corpus = fixtureCorpus();

beforeAll(() => {
  workDir = mkdtempSync(join(tmpdir(), "posekit-parity-"));
  const corpusPath = join(workDir, "corpus.jsonl");
  writeJsonl(corpusPath, corpus);
  tablesPath = join(workDir, "tables.pkb");
  runCli(["fit-bins", "--input", corpusPath, "--bins", "128", "--out", tablesPath]);
  session = openSession({ quantizers: tablesPath });
}, 120_000);

afterAll(() => {
  rmSync(workDir, { recursive: true, force: true });
});

describe("session", () => {
  test("version mirrors the core library", () => {
    expect(session.version).toBe(BINDING_VERSION);
    expect(runCli(["--version"]).trim()).toBe(session.version);
  });

  test("operations on a closed session raise a structured error", () => {
    const closed = openSession({ quantizers: tablesPath });
    closed.close();
    expect(() => encodeScene(closed, corpus[0])).toThrow(SessionClosedError);
    expect(() => evaluate(closed, [], [])).toThrow(SessionClosedError);
  });
});

describe("encode parity", () => {
  test("100-record corpus: binding IDs == CLI encode output, byte for byte", () => {
    const bindingIds = encodeRecords(session, corpus);

    const outDir = join(workDir, "cli-bundle");
    runCli([
      "encode", "--input", join(workDir, "corpus.jsonl"),
      "--quantizers", tablesPath, "--out", outDir,
    ]);
    const blob = readFileSync(join(outDir, "tokens.bin"));
    const manifest = readFileSync(join(outDir, "manifest.jsonl"), "utf-8")
      .split("\n")
      .filter((l) => l.trim().length > 0)
      .map((l) => JSON.parse(l) as { tokens_offset: number; tokens_count: number });

    expect(bindingIds.length).toBe(100);
    expect(manifest.length).toBe(100);
    for (let i = 0; i < manifest.length; i++) {
      const { tokens_offset, tokens_count } = manifest[i];
      const direct = blob.subarray(tokens_offset, tokens_offset + 4 * tokens_count);
      const viaBinding = Buffer.from(bindingIds[i].buffer, bindingIds[i].byteOffset, bindingIds[i].byteLength);
      expect(viaBinding.equals(direct)).toBe(true);
    }
  }, 120_000);

  test("single scene and trajectory records round through the same path", () => {
    const sceneIds = encodeScene(session, corpus[0]);
    const trajIds = encodeTrajectory(session, corpus[3], { horizon: 8, dt: 0.1 });
    expect(sceneIds.length).toBeGreaterThan(0);
    // <traj> + 8 * (<wp> + 6 pose + 1 gripper) + <eos> = 2 + 8 * 8.
    expect(trajIds.length).toBe(2 + 8 * 8);
  }, 60_000);

  test("empty annotation list encodes to an empty structured region", () => {
    const rand = lcg(1);
    const empty = { ...sceneRecord(0, rand), annotations: [] };
    expect(encodeScene(session, empty).length).toBe(0);
  }, 60_000);
});

describe("decode", () => {
  test("binding decode inverts binding encode", () => {
    const record = corpus[0] as { annotations: { category: string }[] };
    const ids = encodeScene(session, record);
    const items = decode(session, ids);
    expect(items.length).toBe(record.annotations.length);
    expect(items.map((i) => i.category)).toEqual(record.annotations.map((a) => a.category));
    expect(items[0].kind).toBe("tuple");
  }, 60_000);
});

describe("priors parity", () => {
  const intrinsics = { fx: 35, fy: 35, cx: 14, cy: 14, width: 28, height: 28 };

  test("rasters are byte-identical to a direct CLI run", () => {
    const viaBinding = makePriors(session, intrinsics, { patch: 14, seed: 5 });

    const intrPath = join(workDir, "intr.json");
    writeFileSync(intrPath, JSON.stringify(intrinsics));
    const npzPath = join(workDir, "direct.npz");
    runCli(["priors", "--intrinsics", intrPath, "--patch", "14", "--seed", "5", "--out", npzPath]);
    // Compare against the CLI's own npz through an independent numpy dump.
    const probe = spawnSync("python3", ["-c", [
      "import numpy as np, sys",
      `a = np.load(${JSON.stringify(npzPath)})`,
      "sys.stdout.buffer.write(a['ray_patches'].tobytes())",
      "sys.stdout.buffer.write(a['depth_patches'].tobytes())",
    ].join("\n")], { maxBuffer: 256 * 1024 * 1024 });
    expect(probe.status).toBe(0);
    const direct = probe.stdout as Buffer;
    const bindingBytes = Buffer.concat([
      Buffer.from(viaBinding.rayPatches.buffer, viaBinding.rayPatches.byteOffset, viaBinding.rayPatches.byteLength),
      Buffer.from(viaBinding.depthPatches.buffer, viaBinding.depthPatches.byteOffset, viaBinding.depthPatches.byteLength),
    ]);
    expect(bindingBytes.equals(direct)).toBe(true);
    expect(viaBinding.patchSize).toBe(14);
    expect(viaBinding.gridShape).toEqual([2, 2]);
    expect(viaBinding.rayPatches.length).toBe(4 * 14 * 14 * 3);
  }, 60_000);

  test("drop-everything policy zeroes the depth stack", () => {
    const out = makePriors(session, intrinsics, {
      patch: 14,
      policy: { pDropDepth: 1 },
    });
    expect(out.droppedDepth).toBe(true);
    expect(out.depthPatches.every((v) => v === 0)).toBe(true);
  }, 60_000);
});

describe("evaluate parity", () => {
  const evalRecord = (id: string, categories: string[]) => ({
    schema_version: "posekit-scene/1",
    id,
    image_ref: `${id}.png`,
    intrinsics: { fx: 35, fy: 35, cx: 14, cy: 14, width: 28, height: 28 },
    annotations: categories.map((category, j) => ({
      category,
      box_center_px: [10 + j, 10 + j],
      pose: { translation: [0.1 * j, 0.0, 0.9], rotation: [1, 0, 0, 0] },
      size: [0.2, 0.2, 0.2],
    })),
  });

  test("pred == gt gives mAP 1.0 and the default threshold is 0.15", () => {
    const records = [evalRecord("e0", ["cup", "plate"])];
    const report = evaluate(session, records, records);
    expect(report.map).toBe(1.0);
    expect(report.threshold).toBe(0.15);
    expect(report.per_category_ap.cup).toBe(1.0);
  }, 60_000);

  test("report equals a direct CLI run exactly", () => {
    const preds = [evalRecord("p0", ["cup", "bowl", "cup"])];
    const gts = [evalRecord("g0", ["cup", "plate"])];
    const viaBinding = evaluate(session, preds, gts, 0.15);

    const predPath = join(workDir, "pred.jsonl");
    const gtPath = join(workDir, "gt.jsonl");
    writeJsonl(predPath, preds);
    writeJsonl(gtPath, gts);
    const direct = JSON.parse(
      runCli(["evaluate", "--pred", predPath, "--gt", gtPath, "--iou", "0.15", "--json"]),
    );
    expect(viaBinding).toEqual(direct);
  }, 60_000);
});
