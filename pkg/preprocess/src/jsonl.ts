/** JSONL output in the genselect dataset formats; atomic temp+rename writes. */

import fs from "node:fs";
import path from "node:path";

export interface ContextRow {
  image_id: number;
  caption: string;
  tags: string[];
}

export interface EmbeddingRow {
  owner_id: number;
  kind: "image" | "question";
  vector: number[];
}

export function writeJsonlAtomic(filePath: string, rows: object[]): void {
  const dir = path.dirname(filePath);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.${path.basename(filePath)}.tmp`);
  const body = rows.map((row) => JSON.stringify(row)).join("\n");
  fs.writeFileSync(tmp, rows.length ? body + "\n" : "");
  fs.renameSync(tmp, filePath);
}

export function writeJsonAtomic(filePath: string, value: object): void {
  const dir = path.dirname(filePath);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.${path.basename(filePath)}.tmp`);
  fs.writeFileSync(tmp, JSON.stringify(value, null, 2) + "\n");
  fs.renameSync(tmp, filePath);
}
