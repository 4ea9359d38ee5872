/** PNG loading: image ids come from trailing digits in the file name. */

import fs from "node:fs";
import path from "node:path";
import pngjs from "pngjs";

import type { DecodedImage } from "./types.js";

const { PNG } = pngjs;

const TRAILING_ID = /(\d+)\.png$/i;

export function imageIdFromName(fileName: string): number | null {
  const match = TRAILING_ID.exec(path.basename(fileName));
  if (!match) return null;
  return Number.parseInt(match[1], 10);
}

export function listImageFiles(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((name) => name.toLowerCase().endsWith(".png"))
    .sort()
    .map((name) => path.join(dir, name));
}

export function decodePng(filePath: string): DecodedImage {
  const imageId = imageIdFromName(filePath);
  if (imageId === null) {
    throw new Error(`cannot derive an image_id from ${path.basename(filePath)}`);
  }
  const png = PNG.sync.read(fs.readFileSync(filePath));
  return {
    imageId,
    width: png.width,
    height: png.height,
    pixels: new Uint8Array(png.data.buffer, png.data.byteOffset, png.data.length),
  };
}

export function encodePng(width: number, height: number, rgba: Uint8Array): Buffer {
  const png = new PNG({ width, height });
  Buffer.from(rgba).copy(png.data);
  return PNG.sync.write(png);
}
