/** Job orchestration: images + questions in, contexts + embeddings out. */

import fs from "node:fs";
import path from "node:path";

import { StatsCaptioner, ColorTagger, NoTagger } from "./caption.js";
import { makeEncoder } from "./encoder.js";
import { extractFeatures } from "./features.js";
import { decodePng, listImageFiles } from "./png.js";
import { writeJsonAtomic, writeJsonlAtomic } from "./jsonl.js";
import type {
  ContextRow,
  EmbeddingRow,
} from "./jsonl.js";
import type {
  ImageFeatures,
  JobManifest,
  PreprocessJob,
  QuestionRecord,
  SkippedImage,
} from "./types.js";

export function manifestPath(job: PreprocessJob): string {
  return job.contextsOut + ".manifest.json";
}

export function loadQuestions(questionsFile: string): QuestionRecord[] {
  const doc = JSON.parse(fs.readFileSync(questionsFile, "utf-8"));
  if (!doc || !Array.isArray(doc.questions)) {
    throw new Error(`${questionsFile}: expected an object with a "questions" array`);
  }
  const records: QuestionRecord[] = doc.questions.map((q: any, i: number) => {
    if (
      typeof q.question_id !== "number" ||
      typeof q.image_id !== "number" ||
      typeof q.question !== "string" ||
      q.question.trim() === ""
    ) {
      throw new Error(`${questionsFile}: questions[${i}] is malformed`);
    }
    return { question_id: q.question_id, image_id: q.image_id, question: q.question };
  });
  return records.sort((a, b) => a.question_id - b.question_id);
}

interface LoadedImage {
  imageId: number;
  features: ImageFeatures;
}

function loadImages(job: PreprocessJob, skipped: SkippedImage[]): LoadedImage[] {
  const loaded: LoadedImage[] = [];
  const seen = new Set<number>();
  const files = listImageFiles(job.imagesDir);
  for (let start = 0; start < files.length; start += job.batchSize) {
    for (const file of files.slice(start, start + job.batchSize)) {
      try {
        const image = decodePng(file);
        if (seen.has(image.imageId)) {
          throw new Error(`duplicate image_id ${image.imageId}`);
        }
        seen.add(image.imageId);
        loaded.push({ imageId: image.imageId, features: extractFeatures(image) });
      } catch (error) {
        const reason = error instanceof Error ? error.message : String(error);
        console.error(`skipping ${path.basename(file)}: ${reason}`);
        skipped.push({ file: path.basename(file), reason });
      }
    }
  }
  return loaded.sort((a, b) => a.imageId - b.imageId);
}

export function runJob(job: PreprocessJob): JobManifest {
  const encoder = makeEncoder(job.model);
  const captioner = new StatsCaptioner();
  const tagger = job.tags ? new ColorTagger() : new NoTagger();

  const skipped: SkippedImage[] = [];
  const images = loadImages(job, skipped);
  const questions = loadQuestions(job.questionsFile);

  const contexts: ContextRow[] = images.map(({ imageId, features }) => ({
    image_id: imageId,
    caption: captioner.caption(features),
    tags: tagger.tags(features),
  }));

  const embeddings: EmbeddingRow[] = [
    ...images.map(({ imageId, features }): EmbeddingRow => ({
      owner_id: imageId,
      kind: "image",
      vector: encoder.encodeImage(features),
    })),
    ...questions.map((q): EmbeddingRow => ({
      owner_id: q.question_id,
      kind: "question",
      vector: encoder.encodeText(q.question),
    })),
  ];

  writeJsonlAtomic(job.contextsOut, contexts);
  writeJsonlAtomic(job.embeddingsOut, embeddings);

  const manifest: JobManifest = {
    model: encoder.id,
    encoder_dim: encoder.dim,
    images_processed: images.length,
    questions_processed: questions.length,
    skipped,
  };
  writeJsonAtomic(manifestPath(job), manifest);
  return manifest;
}
