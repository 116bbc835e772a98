export { runAdapter } from "./adapter.js";
export { medianPatchDepthMm } from "./depth.js";
export { deproject } from "./deproject.js";
export { indexMapFromNames, validateIndexMap } from "./indexmap.js";
export { RecordedModel, RecordedSource } from "./recorded.js";
export {
  AdapterConfig,
  AdapterStats,
  DepthHole,
  IndexMap,
  Intrinsics,
  KEYPOINT_NAMES,
  KeypointName,
  ModelLoadFailure,
  NativeKeypoint,
  PoseModel,
  SourceFrame,
  SourceUnavailable,
} from "./types.js";
