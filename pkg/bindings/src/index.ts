/**
 * Array-in/array-out bridge to the stainkit toolkit.
 *
 * Every call shells out to the stainkit CLI over its documented file
 * interfaces (PNG images, JSON configs and profiles) inside a private
 * temp directory, so results are byte-identical to what the CLI
 * produces for the same seed and config. The Python package must be
 * installed in the interpreter named by `python` (default `python3`).
 */

import { execFileSync } from "node:child_process";
import { mkdirSync, mkdtempSync, readFileSync, readdirSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ImageArray, decodePng, encodePng, validateImage } from "./png.js";

export { ImageArray, decodePng, encodePng } from "./png.js";

export interface SamplePair {
  image: ImageArray;
  mask: ImageArray;
}

export interface SessionOptions {
  /** Interpreter with the stainkit package installed. */
  python?: string;
  /** Keep temp directories for debugging instead of deleting them. */
  keepWorkdirs?: boolean;
}

export interface StainProfileDocument {
  i0: number;
  stains: { name: string; od: [number, number, number] }[];
  robust_max: number[];
  absent_stains?: boolean[];
}

export type TransformMode = "greyscale" | "haematoxylin" | "channel-swap" | "colour-transfer";

export interface TransformOptions {
  matrix?: string;
  perm?: [number, number, number];
  seed?: number;
  sourceProfile?: StainProfileDocument;
  targetProfile?: StainProfileDocument;
}

/** CLI failure with the toolkit error name preserved. */
export class StainkitCliError extends Error {
  readonly errorName: string;

  constructor(errorName: string, message: string) {
    super(`${errorName}: ${message}`);
    this.errorName = errorName;
  }
}

function indexName(i: number): string {
  return `${String(i).padStart(6, "0")}.png`;
}

export class StainkitSession {
  private readonly python: string;
  private readonly keepWorkdirs: boolean;

  constructor(options: SessionOptions = {}) {
    this.python = options.python ?? "python3";
    this.keepWorkdirs = options.keepWorkdirs ?? false;
  }

  private run(args: string[]): string {
    try {
      return execFileSync(this.python, ["-m", "stainkit", ...args], {
        encoding: "utf-8",
        maxBuffer: 64 * 1024 * 1024,
      });
    } catch (error) {
      const stderr = String((error as { stderr?: unknown }).stderr ?? "");
      const match = stderr.match(/error: (\w+): ([\s\S]*)/);
      if (match) {
        throw new StainkitCliError(match[1], match[2].trim());
      }
      throw new Error(`stainkit CLI failed: ${stderr || String(error)}`);
    }
  }

  private withWorkdir<T>(body: (dir: string) => T): T {
    const dir = mkdtempSync(join(tmpdir(), "stainkit-bindings-"));
    try {
      return body(dir);
    } finally {
      if (!this.keepWorkdirs) {
        rmSync(dir, { recursive: true, force: true });
      }
    }
  }

  /**
   * Augment a batch of (image, mask) pairs.
   *
   * Element i is produced with the substream (seed, startIndex + i),
   * byte-for-byte identical to the CLI `augment` subcommand, so batch
   * partitioning never changes the output.
   */
  augmentBatch(
    batch: SamplePair[],
    config: object | string,
    seed: number,
    startIndex = 0
  ): SamplePair[] {
    if (batch.length === 0) {
      return [];
    }
    batch.forEach((pair, i) => {
      validateImage(pair.image, `image ${i}`);
      validateImage(pair.mask, `mask ${i}`);
      if (pair.mask.channels !== 1) {
        throw new Error(`ShapeError: mask ${i} must be single-channel`);
      }
      if (pair.mask.width !== pair.image.width || pair.mask.height !== pair.image.height) {
        throw new Error(
          `ShapeError: mask ${i} is ${pair.mask.width}x${pair.mask.height}, ` +
            `image is ${pair.image.width}x${pair.image.height}`
        );
      }
    });
    return this.withWorkdir((dir) => {
      const imagesDir = join(dir, "images");
      const masksDir = join(dir, "masks");
      const outDir = join(dir, "out");
      mkdirSync(imagesDir);
      mkdirSync(masksDir);
      batch.forEach((pair, i) => {
        writeFileSync(join(imagesDir, indexName(i)), encodePng(pair.image));
        writeFileSync(join(masksDir, indexName(i)), encodePng(pair.mask));
      });
      const configPath =
        typeof config === "string" ? config : join(dir, "config.json");
      if (typeof config !== "string") {
        writeFileSync(configPath, JSON.stringify(config));
      }
      this.run([
        "augment",
        "--config", configPath,
        "--images", imagesDir,
        "--masks", masksDir,
        "--output", outDir,
        "--seed", String(seed),
        "--start-index", String(startIndex),
      ]);
      return batch.map((_, i) => ({
        image: decodePng(readFileSync(join(outDir, "images", indexName(i)))),
        mask: decodePng(readFileSync(join(outDir, "masks", indexName(i)))),
      }));
    });
  }

  /** One stain-strategy transform on a single image. */
  transformImage(image: ImageArray, mode: TransformMode, options: TransformOptions = {}): ImageArray {
    validateImage(image);
    return this.withWorkdir((dir) => {
      const input = join(dir, "in.png");
      const output = join(dir, "out.png");
      writeFileSync(input, encodePng(image));
      const args = ["transform", "--mode", mode, "--input", input, "--output", output];
      if (options.matrix) {
        args.push("--matrix", options.matrix);
      }
      if (options.perm) {
        args.push("--perm", options.perm.join(","));
      }
      if (options.seed !== undefined) {
        args.push("--seed", String(options.seed));
      }
      if (options.sourceProfile) {
        const path = join(dir, "source-profile.json");
        writeFileSync(path, JSON.stringify(options.sourceProfile));
        args.push("--source-profile", path);
      }
      if (options.targetProfile) {
        const path = join(dir, "target-profile.json");
        writeFileSync(path, JSON.stringify(options.targetProfile));
        args.push("--target-profile", path);
      }
      this.run(args);
      return decodePng(readFileSync(output));
    });
  }

  /** Macenko-style stain profile of one image. */
  estimateStainProfile(
    image: ImageArray,
    params: { odThreshold?: number; anglePercentile?: number; concentrationPercentile?: number; minTissuePixels?: number } = {}
  ): StainProfileDocument {
    validateImage(image);
    return this.withWorkdir((dir) => {
      const input = join(dir, "in.png");
      const output = join(dir, "profile.json");
      writeFileSync(input, encodePng(image));
      const args = ["estimate-stains", "--input", input, "--output", output];
      if (params.odThreshold !== undefined) {
        args.push("--od-threshold", String(params.odThreshold));
      }
      if (params.anglePercentile !== undefined) {
        args.push("--angle-percentile", String(params.anglePercentile));
      }
      if (params.concentrationPercentile !== undefined) {
        args.push("--concentration-percentile", String(params.concentrationPercentile));
      }
      if (params.minTissuePixels !== undefined) {
        args.push("--min-tissue-pixels", String(params.minTissuePixels));
      }
      this.run(args);
      return JSON.parse(readFileSync(output, "utf-8")) as StainProfileDocument;
    });
  }

  /** Per-sample throughput of the augmentation pipeline (CLI `bench`). */
  bench(seed: number, n = 20, size = 508): { samplesPerSec: number; p50Ms: number; p99Ms: number } {
    const stdout = this.run([
      "bench", "--seed", String(seed), "--n", String(n), "--size", String(size),
    ]);
    const report = JSON.parse(stdout);
    return {
      samplesPerSec: report.samples_per_sec,
      p50Ms: report.p50_ms,
      p99Ms: report.p99_ms,
    };
  }
}

/**
 * Standardise 8-bit images to (v / 255 - mean) / std per channel.
 *
 * Mirrors the toolkit's formula exactly (IEEE doubles, same operation
 * order); kept local because the result is real-valued and feeds
 * straight into a tensor.
 */
export function standardizeBatch(
  images: ImageArray[],
  mean: number[],
  std: number[]
): Float64Array[] {
  if (std.some((s) => !(s > 0) || !Number.isFinite(s))) {
    throw new Error("ConfigError: std must be positive per channel");
  }
  return images.map((image) => {
    validateImage(image);
    if (mean.length !== image.channels || std.length !== image.channels) {
      throw new Error(
        `ShapeError: mean/std need ${image.channels} entries, got ${mean.length}/${std.length}`
      );
    }
    const out = new Float64Array(image.data.length);
    for (let i = 0; i < image.data.length; i++) {
      const c = i % image.channels;
      out[i] = (image.data[i] / 255.0 - mean[c]) / std[c];
    }
    return out;
  });
}

/** Uniform list of (image, mask) pairs from parallel arrays. */
export function zipPairs(images: ImageArray[], masks: ImageArray[]): SamplePair[] {
  if (images.length !== masks.length) {
    throw new Error(`ShapeError: ${images.length} images but ${masks.length} masks`);
  }
  return images.map((image, i) => ({ image, mask: masks[i] }));
}

/** Directory listing helper for parity harnesses. */
export function readPngDir(dir: string): { name: string; image: ImageArray }[] {
  return readdirSync(dir)
    .filter((name) => name.endsWith(".png"))
    .sort()
    .map((name) => ({ name, image: decodePng(readFileSync(join(dir, name))) }));
}
