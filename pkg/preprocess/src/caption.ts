/** Default captioner/tagger: deterministic descriptions from pixel stats. */

import { HUE_BUCKET_NAMES, dominantBucket } from "./features.js";
import type { Captioner, ImageFeatures, Tagger } from "./types.js";

function toneWord(features: ImageFeatures): string {
  if (features.brightness > 0.66) return "light";
  if (features.brightness < 0.33) return "dark";
  return "gray";
}

export class StatsCaptioner implements Captioner {
  readonly id = "stats-v1";

  caption(features: ImageFeatures): string {
    const bucket = dominantBucket(features);
    const color = bucket >= 0 ? HUE_BUCKET_NAMES[bucket] : toneWord(features);
    return `a mostly ${color} image of ${features.width} by ${features.height} pixels`;
  }
}

export class ColorTagger implements Tagger {
  readonly id = "color-tags-v1";

  tags(features: ImageFeatures): string[] {
    const out: string[] = [];
    const bucket = dominantBucket(features);
    if (bucket >= 0) out.push(HUE_BUCKET_NAMES[bucket]);
    else out.push(toneWord(features));
    if (features.brightness > 0.66) out.push("bright");
    if (features.brightness < 0.33) out.push("dark");
    return out;
  }
}

export class NoTagger implements Tagger {
  readonly id = "none";

  tags(): string[] {
    return [];
  }
}
