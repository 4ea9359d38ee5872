/** Shared test fixtures: solid-color PNGs and a tiny VQA question set. */

import fs from "node:fs";
import os from "node:os";
import path from "node:path";

import { encodePng } from "../src/png.js";

export function tempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix));
}

export function writeSolidPng(
  dir: string,
  name: string,
  rgb: [number, number, number],
  size = 16,
): string {
  const rgba = new Uint8Array(size * size * 4);
  for (let i = 0; i < size * size; i++) {
    rgba[i * 4] = rgb[0];
    rgba[i * 4 + 1] = rgb[1];
    rgba[i * 4 + 2] = rgb[2];
    rgba[i * 4 + 3] = 255;
  }
  const filePath = path.join(dir, name);
  fs.writeFileSync(filePath, encodePng(size, size, rgba));
  return filePath;
}

export const SAMPLE_QUESTIONS = [
  { question_id: 901, image_id: 11, question: "Which fruit is usually red like this image?" },
  { question_id: 902, image_id: 12, question: "What vegetable is green like this image?" },
  { question_id: 903, image_id: 13, question: "What part of nature is blue like this image?" },
];

/** Three solid-color images + matching questions; returns all paths. */
export function sampleDataset(root: string) {
  const imagesDir = path.join(root, "images");
  fs.mkdirSync(imagesDir, { recursive: true });
  writeSolidPng(imagesDir, "11.png", [220, 30, 30]);
  writeSolidPng(imagesDir, "12.png", [30, 200, 40]);
  writeSolidPng(imagesDir, "13.png", [20, 20, 235]);

  const questionsFile = path.join(root, "questions_test.json");
  fs.writeFileSync(
    questionsFile,
    JSON.stringify({ data_subtype: "test", questions: SAMPLE_QUESTIONS }),
  );

  const annotationsFile = path.join(root, "annotations_test.json");
  const golds: Record<number, string> = { 901: "apple", 902: "broccoli", 903: "sky" };
  fs.writeFileSync(
    annotationsFile,
    JSON.stringify({
      data_subtype: "test",
      annotations: SAMPLE_QUESTIONS.map((q) => ({
        question_id: q.question_id,
        image_id: q.image_id,
        answers: Array.from({ length: 10 }, () => ({ answer: golds[q.question_id] })),
      })),
    }),
  );

  return {
    imagesDir,
    questionsFile,
    annotationsFile,
    contextsOut: path.join(root, "contexts.jsonl"),
    embeddingsOut: path.join(root, "embeddings.jsonl"),
  };
}

export function readJsonl(filePath: string): any[] {
  return fs
    .readFileSync(filePath, "utf-8")
    .split("\n")
    .filter((line) => line.trim() !== "")
    .map((line) => JSON.parse(line));
}

export function cosine(u: number[], v: number[]): number {
  let dot = 0;
  let nu = 0;
  let nv = 0;
  for (let i = 0; i < u.length; i++) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  return dot / Math.sqrt(nu * nv);
}
