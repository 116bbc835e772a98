/**
 * Deterministically generate fixtures/mannequin.json: a static mannequin
 * seen by a 640x480 depth camera for 3 seconds at exactly 32 FPS, with
 * the pose model reporting 17 COCO-ordered keypoints.  Three frames get
 * injected depth holes so the drop path has something to chew on.
 *
 * Run with: npm run make-fixture
 */

import { writeFileSync } from "fs";
import { dirname, join } from "path";
import { fileURLToPath } from "url";

const CAMERA = { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };

const COCO_NAMES = [
  "nose",
  "left_eye",
  "right_eye",
  "left_ear",
  "right_ear",
  "left_shoulder",
  "right_shoulder",
  "left_elbow",
  "right_elbow",
  "left_wrist",
  "right_wrist",
  "left_hip",
  "right_hip",
  "left_knee",
  "right_knee",
  "left_ankle",
  "right_ankle",
];

// Camera-frame metres (x right, y down, z forward); a seated mannequin.
const POINTS: [number, number, number][] = [
  [0.012, -0.052, 0.702], // nose
  [0.044, -0.072, 0.712], // left eye
  [-0.02, -0.072, 0.71], // right eye
  [0.086, -0.04, 0.76], // left ear
  [-0.062, -0.04, 0.758], // right ear
  [0.18, 0.12, 0.8],
  [-0.18, 0.12, 0.8],
  [0.22, 0.24, 0.82],
  [-0.22, 0.24, 0.82],
  [0.2, 0.28, 0.78],
  [-0.2, 0.28, 0.78],
  [0.1, 0.3, 0.83],
  [-0.1, 0.3, 0.83],
  [0.11, 0.32, 0.86],
  [-0.11, 0.32, 0.86],
  [0.12, 0.33, 0.88],
  [-0.12, 0.33, 0.88],
];

const N_FRAMES = 96;
const FRAME_US = 31250; // exactly 32 FPS

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const rand = mulberry32(0x5eed);
const gauss = () => {
  // Box-Muller; one value per call is plenty here.
  const u = Math.max(rand(), 1e-12);
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * rand());
};

const round = (x: number, places: number) => {
  const f = 10 ** places;
  return Math.round(x * f) / f;
};

// frame index -> native keypoint index whose patch gets holes
const HOLES: Record<number, { kp: number; zeros: number }> = {
  20: { kp: 3, zeros: 7 }, // left ear: 2 valid pixels left
  57: { kp: 3, zeros: 7 },
  80: { kp: 0, zeros: 5 }, // nose: 4 valid, still below the majority
};

const frames = [];
for (let i = 0; i < N_FRAMES; i++) {
  const keypoints: [number, number, number][] = [];
  const depth_patches: number[][] = [];
  for (let k = 0; k < POINTS.length; k++) {
    const [x, y, z] = POINTS[k];
    const u = CAMERA.cx + (x / z) * CAMERA.fx + 0.3 * gauss();
    const v = CAMERA.cy + (y / z) * CAMERA.fy + 0.3 * gauss();
    const faceBonus = k < 5 ? 0.06 : 0.0;
    const conf = Math.min(0.99, Math.max(0.5, 0.88 + faceBonus + 0.05 * gauss()));
    keypoints.push([round(u, 2), round(v, 2), round(conf, 3)]);

    const patch: number[] = [];
    for (let p = 0; p < 9; p++) {
      patch.push(round(z * 1000 + 1.5 * gauss(), 1));
    }
    const hole = HOLES[i];
    if (hole && hole.kp === k) {
      for (let p = 0; p < hole.zeros; p++) patch[p] = 0;
    }
    depth_patches.push(patch);
  }
  frames.push({ t_us: i * FRAME_US, subject: 0, keypoints, depth_patches });
}

const fixture = {
  camera: CAMERA,
  model: { id: "mannequin-coco17", keypoint_names: COCO_NAMES },
  frames,
};

const out = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures", "mannequin.json");
writeFileSync(out, JSON.stringify(fixture) + "\n");
console.log(`wrote ${out}: ${frames.length} frames, ${COCO_NAMES.length} native keypoints`);
