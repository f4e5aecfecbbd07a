/** Deterministic fixture records shared by the parity tests. */

export interface PoseJson {
  translation: number[];
  rotation: number[];
}

const pose = (t: number[], q: number[] = [1, 0, 0, 0]): PoseJson => ({
  translation: t,
  rotation: q,
});

/** Small deterministic LCG so fixtures need no RNG dependency. */
export function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

export function sceneRecord(i: number, rand: () => number) {
  const categories = ["mug", "bottle", "laptop", "drawer"];
  const nAnn = 1 + (i % 3);
  return {
    schema_version: "posekit-scene/1",
    id: `scene-${i}`,
    image_ref: `img-${i}.png`,
    intrinsics: { fx: 35.0, fy: 35.0, cx: 14.0, cy: 14.0, width: 28, height: 28 },
    annotations: Array.from({ length: nAnn }, (_, j) => ({
      category: categories[(i + j) % categories.length],
      box_center_px: [rand() * 27.9, rand() * 27.9],
      pose: pose([rand() * 2 - 1, rand() * 2 - 1, 0.3 + rand() * 1.5]),
      size: [0.05 + rand() * 0.4, 0.05 + rand() * 0.4, 0.05 + rand() * 0.4],
    })),
  };
}

export function trajRecord(i: number, rand: () => number) {
  const nFrames = 3 + (i % 4);
  return {
    schema_version: "posekit-traj/1",
    id: `traj-${i}`,
    instruction: "pick up the mug",
    views: [
      {
        view_id: "head",
        intrinsics: { fx: 35.0, fy: 35.0, cx: 14.0, cy: 14.0, width: 28, height: 28 },
        extrinsics: { pose_of_base_in_camera: pose([0, 0, 1]) },
      },
    ],
    frames: Array.from({ length: nFrames }, (_, k) => ({
      timestamp: 0.1 * k,
      arms: {
        right: {
          ee_pose_base: pose([0.2 + 0.01 * k, rand() * 0.2, 0.3]),
          gripper: Math.min(1, rand()),
        },
      },
    })),
  };
}

/** 100 mixed records, deterministic for a given seed. */
export function fixtureCorpus(seed = 7): unknown[] {
  const rand = lcg(seed);
  const records: unknown[] = [];
  for (let i = 0; i < 100; i++) {
    records.push(i % 4 === 3 ? trajRecord(i, rand) : sceneRecord(i, rand));
  }
  return records;
}
