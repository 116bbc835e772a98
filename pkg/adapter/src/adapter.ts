import { createWriteStream } from "fs";
import { createConnection } from "net";

import { medianPatchDepthMm } from "./depth.js";
import { deproject } from "./deproject.js";
import { indexMapFromNames, validateIndexMap } from "./indexmap.js";
import { RecordedModel, RecordedSource } from "./recorded.js";
import {
  AdapterConfig,
  AdapterStats,
  DepthHole,
  KEYPOINT_NAMES,
  ModelLoadFailure,
  PoseModel,
} from "./types.js";

function loadModel(id: string, source: RecordedSource): PoseModel {
  if (id === "recorded") {
    return new RecordedModel(source.modelId, source.keypointNames);
  }
  // Live inference backends would be registered here.
  throw new ModelLoadFailure(`unknown model "${id}"`);
}

interface LineSink {
  write(line: string): void;
  close(): Promise<void>;
}

function openEndpoint(endpoint: string): LineSink {
  if (endpoint === "-") {
    return {
      write: (line) => process.stdout.write(line),
      close: () => Promise.resolve(),
    };
  }
  const m = /^([^/:]+):(\d+)$/.exec(endpoint);
  if (m) {
    const sock = createConnection(Number(m[2]), m[1]);
    return {
      write: (line) => sock.write(line),
      close: () =>
        new Promise((resolve, reject) => {
          sock.once("error", reject);
          sock.end(() => resolve());
        }),
    };
  }
  const file = createWriteStream(endpoint, { encoding: "utf-8" });
  return {
    write: (line) => file.write(line),
    close: () =>
      new Promise((resolve, reject) => {
        file.once("error", reject);
        file.end(() => resolve());
      }),
  };
}

/**
 * Replay a recorded source through the model and emit one JSON line per
 * frame: `{"t_us":...,"subject":...,"kp":[[x,y,z,conf]x5]}`, keypoints
 * ordered nose, left ear, right ear, left eye, right eye.  Frames whose
 * depth is missing at any keypoint are skipped and counted, never
 * emitted half-filled.
 */
export async function runAdapter(cfg: AdapterConfig): Promise<AdapterStats> {
  const source = new RecordedSource(cfg.source);
  const model = loadModel(cfg.model, source);
  const map = cfg.indexMap ?? indexMapFromNames(model.keypointNames);
  validateIndexMap(map, model.keypointNames.length);

  const sink = openEndpoint(cfg.endpoint);
  let framesIn = 0;
  let emitted = 0;
  let dropped = 0;
  let tFirst: number | null = null;
  let tLast = 0;

  for (const frame of source.frames()) {
    framesIn += 1;
    tFirst = tFirst ?? frame.tUs;
    tLast = frame.tUs;
    const native = model.estimate(frame);

    const kp: [number, number, number, number][] = [];
    try {
      for (const name of KEYPOINT_NAMES) {
        const nk = native[map[name]];
        const zMm = medianPatchDepthMm(frame.depth, nk.u, nk.v);
        const [x, y, z] = deproject(nk.u, nk.v, zMm / 1000.0, source.camera);
        kp.push([x, y, z, Math.min(1, Math.max(0, nk.confidence))]);
      }
    } catch (err) {
      if (err instanceof DepthHole) {
        dropped += 1;
        continue;
      }
      throw err;
    }
    sink.write(
      JSON.stringify({ t_us: frame.tUs, subject: frame.subject, kp }) + "\n",
    );
    emitted += 1;
  }
  await sink.close();

  const spanUs = tFirst === null ? 0 : tLast - tFirst;
  return {
    framesIn,
    framesEmitted: emitted,
    framesDroppedDepth: dropped,
    clipFps: spanUs > 0 ? ((framesIn - 1) * 1e6) / spanUs : 0,
  };
}
