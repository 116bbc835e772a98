import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "fs";
import { createServer, type AddressInfo, type Server } from "net";
import { tmpdir } from "os";
import { join } from "path";
import { fileURLToPath } from "url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { runAdapter } from "../src/adapter.js";
import { deproject } from "../src/deproject.js";
import { indexMapFromNames, validateIndexMap } from "../src/indexmap.js";
import {
  KEYPOINT_NAMES,
  ModelLoadFailure,
  SourceUnavailable,
  type IndexMap,
} from "../src/types.js";

const FIXTURE = fileURLToPath(new URL("../fixtures/mannequin.json", import.meta.url));

const COCO_FACE = ["nose", "left_eye", "right_eye", "left_ear", "right_ear"];

let dir: string;

beforeAll(() => {
  dir = mkdtempSync(join(tmpdir(), "adapter-test-"));
});

afterAll(() => {
  rmSync(dir, { recursive: true, force: true });
});

describe("index maps", () => {
  it("derives the map from native keypoint names", () => {
    const names = [...COCO_FACE, "left_shoulder", "right_shoulder"];
    expect(indexMapFromNames(names)).toEqual({
      nose: 0,
      left_ear: 3,
      right_ear: 4,
      left_eye: 1,
      right_eye: 2,
    });
  });

  it("rejects models missing a canonical keypoint", () => {
    expect(() => indexMapFromNames(["nose", "left_ear", "right_ear"])).toThrow(
      ModelLoadFailure,
    );
  });

  it("rejects duplicate native indices", () => {
    const map: IndexMap = {
      nose: 0,
      left_ear: 1,
      right_ear: 1,
      left_eye: 3,
      right_eye: 4,
    };
    expect(() => validateIndexMap(map, 5)).toThrow(ModelLoadFailure);
  });

  it("rejects out-of-range and non-integer indices", () => {
    const base: IndexMap = {
      nose: 0,
      left_ear: 1,
      right_ear: 2,
      left_eye: 3,
      right_eye: 4,
    };
    expect(() => validateIndexMap({ ...base, nose: 5 }, 5)).toThrow(ModelLoadFailure);
    expect(() => validateIndexMap({ ...base, nose: -1 }, 5)).toThrow(ModelLoadFailure);
    expect(() => validateIndexMap({ ...base, nose: 1.5 }, 5)).toThrow(ModelLoadFailure);
  });

  it("rejects unknown keypoint names", () => {
    const map = {
      nose: 0,
      left_ear: 1,
      right_ear: 2,
      left_eye: 3,
      right_eye: 4,
      left_elbow: 5,
    } as unknown as IndexMap;
    expect(() => validateIndexMap(map, 6)).toThrow(ModelLoadFailure);
  });
});

describe("deproject", () => {
  const cam = { fx: 600, fy: 600, cx: 320, cy: 240, width: 640, height: 480 };

  it("maps the principal point onto the optical axis", () => {
    expect(deproject(320, 240, 0.7, cam)).toEqual([0, 0, 0.7]);
  });

  it("inverts the pinhole projection", () => {
    const [x, y, z] = [0.05, -0.03, 0.8];
    const u = cam.cx + (x / z) * cam.fx;
    const v = cam.cy + (y / z) * cam.fy;
    const back = deproject(u, v, z, cam);
    expect(back[0]).toBeCloseTo(x, 12);
    expect(back[1]).toBeCloseTo(y, 12);
    expect(back[2]).toBe(z);
  });
});

describe("runAdapter on the recorded fixture", () => {
  it("emits every frame except the injected depth holes", async () => {
    const out = join(dir, "stats.jsonl");
    const stats = await runAdapter({
      model: "recorded",
      source: FIXTURE,
      endpoint: out,
    });
    expect(stats.framesIn).toBe(96);
    expect(stats.framesEmitted).toBe(93);
    expect(stats.framesDroppedDepth).toBe(3);
    expect(stats.clipFps).toBeCloseTo(32, 9);
  });

  it("writes one well-formed line per emitted frame", async () => {
    const out = join(dir, "lines.jsonl");
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: out });
    const lines = readFileSync(out, "utf-8").trim().split("\n");
    expect(lines).toHaveLength(93);

    let prevT = -1;
    for (const line of lines) {
      const frame = JSON.parse(line);
      expect(Number.isInteger(frame.t_us)).toBe(true);
      expect(frame.t_us).toBeGreaterThan(prevT);
      prevT = frame.t_us;
      expect(frame.subject).toBe(0);
      expect(frame.kp).toHaveLength(5);
      for (const point of frame.kp) {
        expect(point).toHaveLength(4);
        for (const value of point) {
          expect(Number.isFinite(value)).toBe(true);
        }
        expect(point[3]).toBeGreaterThanOrEqual(0);
        expect(point[3]).toBeLessThanOrEqual(1);
        expect(point[2]).toBeGreaterThan(0.5);
        expect(point[2]).toBeLessThan(1.0);
      }
    }
  });

  it("recovers the recorded head geometry after de-projection", async () => {
    const out = join(dir, "geometry.jsonl");
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: out });
    const lines = readFileSync(out, "utf-8").trim().split("\n");

    const mean = [0, 1, 2, 3, 4].map(() => [0, 0, 0]);
    for (const line of lines) {
      const { kp } = JSON.parse(line);
      kp.forEach((p: number[], i: number) => {
        mean[i][0] += p[0] / lines.length;
        mean[i][1] += p[1] / lines.length;
        mean[i][2] += p[2] / lines.length;
      });
    }
    // Camera-frame positions the clip was recorded against, in metres;
    // the mean over 93 frames averages the pixel and depth jitter away.
    const truth = [
      [0.012, -0.052, 0.702], // nose
      [0.086, -0.04, 0.76], // left ear
      [-0.062, -0.04, 0.758], // right ear
      [0.044, -0.072, 0.712], // left eye
      [-0.02, -0.072, 0.71], // right eye
    ];
    truth.forEach((p, i) => {
      expect(Math.abs(mean[i][0] - p[0])).toBeLessThan(0.002);
      expect(Math.abs(mean[i][1] - p[1])).toBeLessThan(0.002);
      expect(Math.abs(mean[i][2] - p[2])).toBeLessThan(0.002);
    });
    // Left ear sits at positive camera x, right ear at negative.
    expect(mean[1][0]).toBeGreaterThan(0.05);
    expect(mean[2][0]).toBeLessThan(-0.05);
  });

  it("is byte-deterministic across runs", async () => {
    const a = join(dir, "det-a.jsonl");
    const b = join(dir, "det-b.jsonl");
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: a });
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: b });
    expect(readFileSync(a, "utf-8")).toBe(readFileSync(b, "utf-8"));
  });

  it("streams identical lines to a socket endpoint", async () => {
    const file = join(dir, "sock-ref.jsonl");
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: file });

    const received: Buffer[] = [];
    const server: Server = createServer((sock) => {
      sock.on("data", (chunk) => received.push(chunk));
    });
    await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
    const port = (server.address() as AddressInfo).port;

    const stats = await runAdapter({
      model: "recorded",
      source: FIXTURE,
      endpoint: `127.0.0.1:${port}`,
    });
    expect(stats.framesEmitted).toBe(93);
    // Wait for the server side to drain before comparing.
    await new Promise((resolve) => setTimeout(resolve, 100));
    await new Promise<void>((resolve) => server.close(() => resolve()));
    expect(Buffer.concat(received).toString("utf-8")).toBe(
      readFileSync(file, "utf-8"),
    );
  });
});

describe("shuffled native keypoint order", () => {
  /** The fixture with its native keypoint list permuted, plus the map back. */
  function shuffledFixture(): { path: string; map: IndexMap } {
    const fixture = JSON.parse(readFileSync(FIXTURE, "utf-8"));
    const n = fixture.model.keypoint_names.length;
    // Fixed permutation that moves every face keypoint off its native slot.
    const perm = [7, 16, 3, 11, 0, 9, 14, 1, 12, 5, 15, 4, 10, 6, 13, 8, 2];
    expect([...perm].sort((a, b) => a - b)).toEqual(
      Array.from({ length: n }, (_, i) => i),
    );

    const names = perm.map((i) => fixture.model.keypoint_names[i]);
    COCO_FACE.forEach((name, native) => {
      expect(names.indexOf(name)).not.toBe(native);
    });
    const shuffled = {
      ...fixture,
      model: { ...fixture.model, keypoint_names: names },
      frames: fixture.frames.map((f: any) => ({
        ...f,
        keypoints: perm.map((i) => f.keypoints[i]),
        depth_patches: perm.map((i) => f.depth_patches[i]),
      })),
    };
    const path = join(dir, "shuffled.json");
    writeFileSync(path, JSON.stringify(shuffled));

    const map = {} as IndexMap;
    for (const name of KEYPOINT_NAMES) {
      map[name] = names.indexOf(name);
    }
    return { path, map };
  }

  it("emits identical output once the derived map reorders keypoints", async () => {
    const { path } = shuffledFixture();
    const ref = join(dir, "order-ref.jsonl");
    const out = join(dir, "order-shuffled.jsonl");
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: ref });
    await runAdapter({ model: "recorded", source: path, endpoint: out });
    expect(readFileSync(out, "utf-8")).toBe(readFileSync(ref, "utf-8"));
  });

  it("accepts the same permutation as an explicit index map", async () => {
    const { path, map } = shuffledFixture();
    const ref = join(dir, "map-ref.jsonl");
    const out = join(dir, "map-explicit.jsonl");
    await runAdapter({ model: "recorded", source: FIXTURE, endpoint: ref });
    await runAdapter({ model: "recorded", source: path, endpoint: out, indexMap: map });
    expect(readFileSync(out, "utf-8")).toBe(readFileSync(ref, "utf-8"));
  });
});

describe("failure modes", () => {
  it("raises ModelLoadFailure for an unknown model id", async () => {
    await expect(
      runAdapter({ model: "hrnet-w48", source: FIXTURE, endpoint: "-" }),
    ).rejects.toBeInstanceOf(ModelLoadFailure);
  });

  it("raises SourceUnavailable for a missing clip", async () => {
    await expect(
      runAdapter({ model: "recorded", source: join(dir, "nope.json"), endpoint: "-" }),
    ).rejects.toBeInstanceOf(SourceUnavailable);
  });

  it("raises SourceUnavailable for a malformed clip", async () => {
    const path = join(dir, "garbage.json");
    writeFileSync(path, "{not json");
    await expect(
      runAdapter({ model: "recorded", source: path, endpoint: "-" }),
    ).rejects.toBeInstanceOf(SourceUnavailable);
  });
});
