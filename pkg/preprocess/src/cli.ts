#!/usr/bin/env node
/** Standalone preprocessing script; flags mirror the job fields. */

import { runJob, manifestPath } from "./job.js";
import type { PreprocessJob } from "./types.js";

const USAGE = `usage: genselect-preprocess --images DIR --questions FILE \\
  --contexts-out PATH --embeddings-out PATH [--model ID] [--batch-size N] [--no-tags]

Reads PNG images (named <image_id>.png) and a VQA questions JSON, writes
the contexts and embeddings JSONL files consumed by the genselect loader,
plus a sidecar manifest listing any skipped images.`;

export function parseArgs(argv: string[]): PreprocessJob {
  const job: Partial<PreprocessJob> = {
    model: "color-space-v1",
    batchSize: 64,
    tags: true,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      i++;
      if (i >= argv.length) throw new Error(`${flag} needs a value`);
      return argv[i];
    };
    switch (flag) {
      case "--images":
        job.imagesDir = next();
        break;
      case "--questions":
        job.questionsFile = next();
        break;
      case "--contexts-out":
        job.contextsOut = next();
        break;
      case "--embeddings-out":
        job.embeddingsOut = next();
        break;
      case "--model":
        job.model = next();
        break;
      case "--batch-size": {
        const value = Number.parseInt(next(), 10);
        if (!Number.isInteger(value) || value < 1) throw new Error("--batch-size must be a positive integer");
        job.batchSize = value;
        break;
      }
      case "--no-tags":
        job.tags = false;
        break;
      case "--help":
      case "-h":
        console.log(USAGE);
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  for (const key of ["imagesDir", "questionsFile", "contextsOut", "embeddingsOut"] as const) {
    if (!job[key]) {
      throw new Error(`missing required flag for ${key} (see --help)`);
    }
  }
  return job as PreprocessJob;
}

export function main(argv: string[]): number {
  let job: PreprocessJob;
  try {
    job = parseArgs(argv);
  } catch (error) {
    console.error(`usage error: ${error instanceof Error ? error.message : error}`);
    console.error(USAGE);
    return 2;
  }
  try {
    const manifest = runJob(job);
    console.log(
      `processed ${manifest.images_processed} images, ${manifest.questions_processed} questions ` +
        `(${manifest.skipped.length} skipped) with ${manifest.model}`,
    );
    console.log(`contexts:   ${job.contextsOut}`);
    console.log(`embeddings: ${job.embeddingsOut}`);
    console.log(`manifest:   ${manifestPath(job)}`);
    return 0;
  } catch (error) {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
