import { IndexMap, KEYPOINT_NAMES, ModelLoadFailure } from "./types.js";

/**
 * Check that a map covers exactly the five canonical keypoints with
 * distinct, in-range native indices.
 */
export function validateIndexMap(map: IndexMap, nativeCount: number): void {
  const seen = new Set<number>();
  for (const name of KEYPOINT_NAMES) {
    const idx = map[name];
    if (!Number.isInteger(idx) || idx < 0 || idx >= nativeCount) {
      throw new ModelLoadFailure(
        `index map: ${name} -> ${idx} outside the model's ${nativeCount} keypoints`,
      );
    }
    if (seen.has(idx)) {
      throw new ModelLoadFailure(`index map: native index ${idx} used twice`);
    }
    seen.add(idx);
  }
  const extra = Object.keys(map).filter(
    (k) => !(KEYPOINT_NAMES as readonly string[]).includes(k),
  );
  if (extra.length > 0) {
    throw new ModelLoadFailure(`index map: unknown keypoints ${extra.join(", ")}`);
  }
}

/** Derive the map by finding the canonical names in the model's list. */
export function indexMapFromNames(nativeNames: readonly string[]): IndexMap {
  const map = {} as IndexMap;
  for (const name of KEYPOINT_NAMES) {
    const idx = nativeNames.indexOf(name);
    if (idx < 0) {
      throw new ModelLoadFailure(`model does not report a "${name}" keypoint`);
    }
    map[name] = idx;
  }
  validateIndexMap(map, nativeNames.length);
  return map;
}
