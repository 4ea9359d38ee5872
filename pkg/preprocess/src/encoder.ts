/** Deterministic offline encoder mapping images and text into one space.
 *
 * Layout (dim 12): six hue-bucket masses, brightness, saturation, four
 * hashed-word slots. Images fill the color dims from pixel statistics and
 * leave the hashed slots at zero; text fills the color dims from color
 * words and spreads all words over the hashed slots with a small weight,
 * so color-matched image/question pairs score the highest cosine while
 * distinct questions still get distinct vectors. Real CLIP-style encoders
 * plug in behind the same interface.
 */

import { HUE_BUCKET_NAMES, HUE_BUCKETS } from "./features.js";
import type { Encoder, ImageFeatures } from "./types.js";

const DIM = HUE_BUCKETS + 2 + 4;
const HASH_BASE = HUE_BUCKETS + 2;
const HASH_WEIGHT = 0.1;

const COLOR_WORDS: Record<string, number> = {
  red: 0,
  crimson: 0,
  orange: 1,
  yellow: 1,
  gold: 1,
  green: 2,
  lime: 2,
  cyan: 3,
  teal: 3,
  turquoise: 3,
  blue: 4,
  navy: 4,
  purple: 5,
  magenta: 5,
  violet: 5,
  pink: 5,
};

const BRIGHT_WORDS = new Set(["bright", "light", "white", "sunny"]);
const DARK_WORDS = new Set(["dark", "black", "night", "dim"]);

export function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

function tokenize(text: string): string[] {
  return text
    .toLowerCase()
    .split(/[^a-z0-9]+/)
    .filter((word) => word.length > 0);
}

export class ColorSpaceEncoder implements Encoder {
  readonly id = "color-space-v1";
  readonly dim = DIM;

  encodeImage(features: ImageFeatures): number[] {
    const vector = new Array(DIM).fill(0);
    for (let i = 0; i < HUE_BUCKETS; i++) vector[i] = features.hueBuckets[i];
    // small floor keeps fully black images away from the zero vector
    vector[HUE_BUCKETS] = Math.max(features.brightness, 1 / 512);
    vector[HUE_BUCKETS + 1] = features.saturation;
    return vector;
  }

  encodeText(text: string): number[] {
    const vector = new Array(DIM).fill(0);
    const words = tokenize(text);
    let brightness = 0.5;
    for (const word of words) {
      const bucket = COLOR_WORDS[word];
      if (bucket !== undefined) vector[bucket] += 1;
      if (BRIGHT_WORDS.has(word)) brightness = 0.9;
      if (DARK_WORDS.has(word)) brightness = 0.1;
      const hash = fnv1a(word);
      const slot = HASH_BASE + (hash % 4);
      vector[slot] += ((hash >>> 2) % 2 === 0 ? 1 : -1) * HASH_WEIGHT;
    }
    vector[HUE_BUCKETS] = brightness;
    vector[HUE_BUCKETS + 1] = 0.5;
    return vector;
  }
}

export function makeEncoder(model: string): Encoder {
  if (model === "color-space-v1") return new ColorSpaceEncoder();
  throw new Error(`unknown embedding model '${model}' (available: color-space-v1)`);
}
