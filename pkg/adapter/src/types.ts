/**
 * Core contracts of the keypoint adapter.
 *
 * The adapter's one job: take a pose model's native keypoints for each
 * frame of a color+depth source, look up metric depth at each keypoint
 * pixel, and emit the five canonical keypoints as one JSON line per
 * frame.  It never second-guesses the geometry — occluded-ear recovery
 * belongs to the consumer of the stream, not to this bridge.
 */

/** Canonical emission order; kp[0]..kp[4] on the wire. */
export const KEYPOINT_NAMES = [
  "nose",
  "left_ear",
  "right_ear",
  "left_eye",
  "right_eye",
] as const;

export type KeypointName = (typeof KEYPOINT_NAMES)[number];

/** Pinhole intrinsics of the depth-aligned color stream. */
export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

/** One keypoint as the model reports it: pixel position + confidence. */
export interface NativeKeypoint {
  u: number;
  v: number;
  confidence: number;
}

/**
 * Depth lookup in millimetres at integer pixel coordinates.
 * `undefined` or a non-positive value marks a sensor hole.
 */
export type DepthLookup = (x: number, y: number) => number | undefined;

/** One frame from a source: timestamp, subject, image payload, depth. */
export interface SourceFrame {
  tUs: number;
  subject: number;
  /** Opaque image handle for live models; unused during replay. */
  image?: unknown;
  /** Recorded model output, if the source is a recording. */
  native?: NativeKeypoint[];
  depth: DepthLookup;
}

/** A pose-estimation model with a fixed native keypoint ordering. */
export interface PoseModel {
  readonly id: string;
  /** Names in the model's own output order, e.g. the 17 COCO names. */
  readonly keypointNames: readonly string[];
  /** Native-order keypoints for one frame. */
  estimate(frame: SourceFrame): NativeKeypoint[];
}

/** Native index of each canonical keypoint in the model's output. */
export type IndexMap = Record<KeypointName, number>;

export interface AdapterConfig {
  /** Model identifier; "recorded" replays the source's stored output. */
  model: string;
  /** Recorded fixture path (live capture devices are out of scope). */
  source: string;
  /** "-" for stdout, host:port for a socket, anything else a file path. */
  endpoint: string;
  /** Defaults to looking the canonical names up in the model's list. */
  indexMap?: IndexMap;
}

export interface AdapterStats {
  framesIn: number;
  framesEmitted: number;
  /** Frames skipped because depth was missing at some keypoint. */
  framesDroppedDepth: number;
  /** Rate of the input clip, from its own timestamps. */
  clipFps: number;
}

export class SourceUnavailable extends Error {}

export class ModelLoadFailure extends Error {}

/** Raised per frame when a keypoint's depth patch is mostly holes. */
export class DepthHole extends Error {}
