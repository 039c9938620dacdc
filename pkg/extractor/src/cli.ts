/**
 * Command-line front end. Flags mirror the extraction job fields.
 *
 *   protoadapt-extract instances --root DIR --annotations FILE --backbone ID --out FILE
 *                                [--bg-per-image N] [--seed N] [--dataset-id S]
 *   protoadapt-extract class-texts --classes a,b,c | --classes-file FILE
 *                                  --encoder ID --out FILE [--dataset-id S]
 *   protoadapt-extract backbones
 *
 * Exit codes: 0 success, 1 runtime or data error, 2 usage error.
 */

import { readFileSync } from "node:fs";
import { pathToFileURL } from "node:url";

import { EnvironmentError, FormatError, ValidationError } from "./errors.js";
import { extractClassTexts, extractInstances, type ExtractionJob } from "./extract.js";
import { OFFLINE_IMAGE_FEATURIZERS, OFFLINE_TEXT_ENCODERS } from "./featurize.js";

const VERSION = "protoadapt-extractor 0.1.0";

const USAGE = `usage: protoadapt-extract <command> [options]

commands:
  instances     embed annotated boxes and background crops into a feature pack
  class-texts   embed class names into a text feature pack
  backbones     list models that run in this environment

instances options:
  --root DIR            image directory (required)
  --annotations FILE    COCO-style annotation JSON (required)
  --backbone ID         image featurizer id (required)
  --out FILE            output feature pack (required)
  --bg-per-image N      background crops per image (default 2)
  --seed N              background sampling seed (default 0)
  --dataset-id S        pack dataset id (default: annotation file name)

class-texts options:
  --classes a,b,c       comma-separated class names
  --classes-file FILE   newline-separated class names (alternative)
  --encoder ID          text encoder id (required)
  --out FILE            output feature pack (required)
  --dataset-id S        pack dataset id (default: class-texts)
`;

class UsageError extends Error {}

function parseFlags(argv: string[], known: Set<string>): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    if (!flag.startsWith("--") || !known.has(flag)) throw new UsageError(`unknown option ${flag}`);
    if (i + 1 >= argv.length) throw new UsageError(`${flag} needs a value`);
    flags.set(flag, argv[i + 1]);
  }
  return flags;
}

function required(flags: Map<string, string>, flag: string): string {
  const value = flags.get(flag);
  if (value === undefined) throw new UsageError(`${flag} is required`);
  return value;
}

function intFlag(flags: Map<string, string>, flag: string, fallback: number): number {
  const raw = flags.get(flag);
  if (raw === undefined) return fallback;
  const value = Number(raw);
  if (!Number.isInteger(value)) throw new UsageError(`${flag} must be an integer, got ${raw}`);
  return value;
}

async function cmdInstances(argv: string[], out: (line: string) => void, err: (line: string) => void): Promise<number> {
  const flags = parseFlags(
    argv,
    new Set(["--root", "--annotations", "--backbone", "--out", "--bg-per-image", "--seed", "--dataset-id"]),
  );
  const job: ExtractionJob = {
    datasetRoot: required(flags, "--root"),
    annotationFile: required(flags, "--annotations"),
    backbone: required(flags, "--backbone"),
    outputPath: required(flags, "--out"),
    backgroundPerImage: intFlag(flags, "--bg-per-image", 2),
    seed: intFlag(flags, "--seed", 0),
    datasetId: flags.get("--dataset-id"),
  };
  const result = await extractInstances(job);
  for (const w of result.warnings) err(`warning: ${w}`);
  out(`dataset_id: ${result.datasetId}`);
  out(`records: ${result.recordCount} (${result.objectCount} object, ${result.backgroundCount} background)`);
  if (result.skipped.length > 0) out(`skipped images: ${result.skipped.length}`);
  out(`wrote ${result.outputPath}`);
  out(`wrote ${result.manifestPath}`);
  return 0;
}

function readClassNames(flags: Map<string, string>): string[] {
  const inline = flags.get("--classes");
  const file = flags.get("--classes-file");
  if ((inline === undefined) === (file === undefined)) {
    throw new UsageError("give exactly one of --classes or --classes-file");
  }
  const raw = inline !== undefined ? inline.split(",") : readFileSync(file as string, "utf-8").split("\n");
  return raw.map((s) => s.trim()).filter((s) => s.length > 0);
}

async function cmdClassTexts(argv: string[], out: (line: string) => void, err: (line: string) => void): Promise<number> {
  const flags = parseFlags(argv, new Set(["--classes", "--classes-file", "--encoder", "--out", "--dataset-id"]));
  const result = extractClassTexts({
    classNames: readClassNames(flags),
    encoder: required(flags, "--encoder"),
    outputPath: required(flags, "--out"),
    datasetId: flags.get("--dataset-id"),
  });
  for (const w of result.warnings) err(`warning: ${w}`);
  out(`dataset_id: ${result.datasetId}`);
  out(`records: ${result.recordCount} (dim ${result.dim})`);
  if (result.singleClass) out("flag: single-class, ICV not applicable");
  out(`wrote ${result.outputPath}`);
  out(`wrote ${result.manifestPath}`);
  return 0;
}

export async function main(
  argv: string[],
  out: (line: string) => void = console.log,
  err: (line: string) => void = console.error,
): Promise<number> {
  try {
    const [command, ...rest] = argv;
    if (command === undefined || command === "--help" || command === "-h") {
      out(USAGE);
      return command === undefined ? 2 : 0;
    }
    if (command === "--version") {
      out(VERSION);
      return 0;
    }
    if (command === "instances") return await cmdInstances(rest, out, err);
    if (command === "class-texts") return await cmdClassTexts(rest, out, err);
    if (command === "backbones") {
      out(`image featurizers: ${OFFLINE_IMAGE_FEATURIZERS.join(", ")}`);
      out(`text encoders: ${OFFLINE_TEXT_ENCODERS.join(", ")}`);
      return 0;
    }
    throw new UsageError(`unknown command ${JSON.stringify(command)}`);
  } catch (e) {
    if (e instanceof UsageError) {
      err(`usage error: ${e.message}`);
      return 2;
    }
    if (e instanceof ValidationError || e instanceof EnvironmentError || e instanceof FormatError) {
      err(`error: ${e.message}`);
      return 1;
    }
    if (e instanceof Error && "code" in e) {
      err(`error: ${e.message}`);
      return 1;
    }
    throw e;
  }
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
