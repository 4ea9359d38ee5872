export { runJob, loadQuestions, manifestPath } from "./job.js";
export { parseArgs, main } from "./cli.js";
export { ColorSpaceEncoder, makeEncoder, fnv1a } from "./encoder.js";
export { StatsCaptioner, ColorTagger, NoTagger } from "./caption.js";
export { extractFeatures, dominantBucket, rgbToHsv, HUE_BUCKET_NAMES } from "./features.js";
export { decodePng, encodePng, imageIdFromName, listImageFiles } from "./png.js";
export { writeJsonlAtomic, writeJsonAtomic } from "./jsonl.js";
export type {
  Captioner,
  DecodedImage,
  Encoder,
  ImageFeatures,
  JobManifest,
  PreprocessJob,
  QuestionRecord,
  Tagger,
} from "./types.js";
