#!/usr/bin/env node
/**
 * keypoint-adapter --source clip.json [--endpoint -|out.jsonl|host:port]
 *                  [--model recorded] [--map '{"nose":0,...}']
 *
 * Replays a recorded clip as the live stream a controller would consume;
 * stats go to stderr so the stream on stdout stays clean.
 */

import { runAdapter } from "./adapter.js";
import { AdapterConfig, IndexMap } from "./types.js";

function parseArgs(argv: string[]): AdapterConfig {
  const cfg: AdapterConfig = { model: "recorded", source: "", endpoint: "-" };
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new Error(`missing value for ${key}`);
    }
    switch (key) {
      case "--source":
        cfg.source = value;
        break;
      case "--endpoint":
        cfg.endpoint = value;
        break;
      case "--model":
        cfg.model = value;
        break;
      case "--map":
        cfg.indexMap = JSON.parse(value) as IndexMap;
        break;
      default:
        throw new Error(`unknown option ${key}`);
    }
  }
  if (!cfg.source) {
    throw new Error("--source is required");
  }
  return cfg;
}

async function main(): Promise<number> {
  let cfg: AdapterConfig;
  try {
    cfg = parseArgs(process.argv.slice(2));
    const stats = await runAdapter(cfg);
    process.stderr.write(JSON.stringify(stats) + "\n");
    return 0;
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
}

main().then((code) => process.exit(code));
