/** Shared types for the preprocessing job and its pluggable models. */

export interface PreprocessJob {
  /** Directory of PNG images named `<image_id>.png` (trailing digits win). */
  imagesDir: string;
  /** VQA-style questions JSON: {"questions": [{question_id, image_id, question}]}. */
  questionsFile: string;
  contextsOut: string;
  embeddingsOut: string;
  /** Embedding model identifier; recorded in the sidecar manifest. */
  model: string;
  batchSize: number;
  /** When false, contexts are written with empty tag lists. */
  tags: boolean;
}

export interface DecodedImage {
  imageId: number;
  width: number;
  height: number;
  /** RGBA, 8 bit per channel. */
  pixels: Uint8Array;
}

/** Aggregate pixel statistics every default model is derived from. */
export interface ImageFeatures {
  width: number;
  height: number;
  /** Mass per 60-degree hue bucket, saturation-and-value weighted, sums to <= 1. */
  hueBuckets: number[];
  /** Mean value channel in [0, 1]. */
  brightness: number;
  /** Mean saturation in [0, 1]. */
  saturation: number;
}

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  encodeImage(features: ImageFeatures): number[];
  encodeText(text: string): number[];
}

export interface Captioner {
  readonly id: string;
  caption(features: ImageFeatures): string;
}

export interface Tagger {
  readonly id: string;
  tags(features: ImageFeatures): string[];
}

export interface QuestionRecord {
  question_id: number;
  image_id: number;
  question: string;
}

export interface SkippedImage {
  file: string;
  reason: string;
}

/** Sidecar manifest written next to the outputs. */
export interface JobManifest {
  model: string;
  encoder_dim: number;
  images_processed: number;
  questions_processed: number;
  skipped: SkippedImage[];
}
