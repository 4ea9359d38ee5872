/** Pixel-statistics extraction shared by the default encoder and captioner. */

import type { DecodedImage, ImageFeatures } from "./types.js";

export const HUE_BUCKETS = 6;
export const HUE_BUCKET_NAMES = ["red", "yellow", "green", "cyan", "blue", "purple"];

/** RGB in [0,255] to (hue degrees, saturation, value), all deterministic. */
export function rgbToHsv(r: number, g: number, b: number): [number, number, number] {
  const rn = r / 255;
  const gn = g / 255;
  const bn = b / 255;
  const max = Math.max(rn, gn, bn);
  const min = Math.min(rn, gn, bn);
  const delta = max - min;
  let hue = 0;
  if (delta > 0) {
    if (max === rn) hue = 60 * (((gn - bn) / delta) % 6);
    else if (max === gn) hue = 60 * ((bn - rn) / delta + 2);
    else hue = 60 * ((rn - gn) / delta + 4);
  }
  if (hue < 0) hue += 360;
  const saturation = max === 0 ? 0 : delta / max;
  return [hue, saturation, max];
}

export function extractFeatures(image: DecodedImage): ImageFeatures {
  const buckets = new Array(HUE_BUCKETS).fill(0);
  let brightnessSum = 0;
  let saturationSum = 0;
  const n = image.width * image.height;
  for (let i = 0; i < n; i++) {
    const offset = i * 4;
    const [hue, saturation, value] = rgbToHsv(
      image.pixels[offset],
      image.pixels[offset + 1],
      image.pixels[offset + 2],
    );
    const bucket = Math.min(Math.floor(hue / 60), HUE_BUCKETS - 1);
    buckets[bucket] += saturation * value;
    brightnessSum += value;
    saturationSum += saturation;
  }
  return {
    width: image.width,
    height: image.height,
    hueBuckets: buckets.map((mass) => mass / n),
    brightness: brightnessSum / n,
    saturation: saturationSum / n,
  };
}

/** Index of the heaviest hue bucket, or -1 for (near-)monochrome images. */
export function dominantBucket(features: ImageFeatures): number {
  if (features.saturation < 0.08) return -1;
  let best = 0;
  for (let i = 1; i < features.hueBuckets.length; i++) {
    if (features.hueBuckets[i] > features.hueBuckets[best]) best = i;
  }
  return best;
}
