import { readFileSync } from "fs";

import {
  DepthLookup,
  Intrinsics,
  NativeKeypoint,
  PoseModel,
  SourceFrame,
  SourceUnavailable,
} from "./types.js";

interface FixtureFrame {
  t_us: number;
  subject: number;
  /** [u, v, confidence] per keypoint, model-native order. */
  keypoints: [number, number, number][];
  /** Row-major 3x3 depth patch (millimetres, 0 = hole) per keypoint. */
  depth_patches: number[][];
}

interface Fixture {
  camera: Intrinsics;
  model: { id: string; keypoint_names: string[] };
  frames: FixtureFrame[];
}

/**
 * A recorded clip: per frame, the pose model's native keypoints plus the
 * depth pixels around them.  Recording only the 3x3 neighbourhood of
 * each keypoint keeps fixtures small while feeding the same depth
 * sampler a live source would.
 */
export class RecordedSource {
  readonly camera: Intrinsics;
  readonly modelId: string;
  readonly keypointNames: readonly string[];
  private readonly fixture: Fixture;

  constructor(path: string) {
    let raw: string;
    try {
      raw = readFileSync(path, "utf-8");
    } catch (err) {
      throw new SourceUnavailable(`cannot read ${path}: ${(err as Error).message}`);
    }
    let fixture: Fixture;
    try {
      fixture = JSON.parse(raw) as Fixture;
    } catch (err) {
      throw new SourceUnavailable(`${path} is not valid JSON: ${(err as Error).message}`);
    }
    if (!fixture.camera || !fixture.model || !Array.isArray(fixture.frames)) {
      throw new SourceUnavailable(`${path} is missing camera, model, or frames`);
    }
    this.fixture = fixture;
    this.camera = fixture.camera;
    this.modelId = fixture.model.id;
    this.keypointNames = fixture.model.keypoint_names;
  }

  *frames(): IterableIterator<SourceFrame> {
    for (const f of this.fixture.frames) {
      yield {
        tUs: f.t_us,
        subject: f.subject,
        native: f.keypoints.map(([u, v, confidence]) => ({ u, v, confidence })),
        depth: patchLookup(f),
      };
    }
  }
}

function patchLookup(frame: FixtureFrame): DepthLookup {
  const grid = new Map<string, number>();
  frame.keypoints.forEach(([u, v], i) => {
    const cx = Math.round(u);
    const cy = Math.round(v);
    const patch = frame.depth_patches[i];
    for (let dy = -1; dy <= 1; dy++) {
      for (let dx = -1; dx <= 1; dx++) {
        grid.set(`${cx + dx},${cy + dy}`, patch[(dy + 1) * 3 + (dx + 1)]);
      }
    }
  });
  return (x, y) => grid.get(`${x},${y}`);
}

/** Replays the model output stored alongside the recording. */
export class RecordedModel implements PoseModel {
  constructor(
    readonly id: string,
    readonly keypointNames: readonly string[],
  ) {}

  estimate(frame: SourceFrame): NativeKeypoint[] {
    if (!frame.native) {
      throw new SourceUnavailable("frame carries no recorded keypoints");
    }
    return frame.native;
  }
}
