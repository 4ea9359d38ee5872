import fs from "node:fs";
import path from "node:path";

import { describe, expect, it } from "vitest";

import { StatsCaptioner, ColorTagger, NoTagger } from "../src/caption.js";
import { ColorSpaceEncoder, makeEncoder } from "../src/encoder.js";
import { dominantBucket, extractFeatures, rgbToHsv } from "../src/features.js";
import { decodePng, imageIdFromName } from "../src/png.js";
import { parseArgs } from "../src/cli.js";
import { tempDir, writeSolidPng } from "./fixtures.js";

describe("image ids", () => {
  it("takes trailing digits before the extension", () => {
    expect(imageIdFromName("11.png")).toBe(11);
    expect(imageIdFromName("COCO_val2014_000000123456.png")).toBe(123456);
    expect(imageIdFromName("scene.png")).toBeNull();
  });
});

describe("pixel features", () => {
  it("converts primary colors to the expected hue buckets", () => {
    expect(rgbToHsv(255, 0, 0)[0]).toBe(0);
    expect(rgbToHsv(0, 255, 0)[0]).toBe(120);
    expect(rgbToHsv(0, 0, 255)[0]).toBe(240);
  });

  it("finds the dominant bucket of a solid image", () => {
    const dir = tempDir("feat-");
    const file = writeSolidPng(dir, "5.png", [20, 20, 235]);
    const features = extractFeatures(decodePng(file));
    expect(dominantBucket(features)).toBe(4); // blue
    expect(features.saturation).toBeGreaterThan(0.8);
  });

  it("treats gray images as monochrome", () => {
    const dir = tempDir("feat-");
    const file = writeSolidPng(dir, "6.png", [128, 128, 128]);
    const features = extractFeatures(decodePng(file));
    expect(dominantBucket(features)).toBe(-1);
  });
});

describe("encoder", () => {
  const encoder = new ColorSpaceEncoder();

  it("is deterministic and finite", () => {
    const a = encoder.encodeText("Which fruit is red?");
    const b = encoder.encodeText("Which fruit is red?");
    expect(a).toEqual(b);
    expect(a).toHaveLength(encoder.dim);
    for (const x of a) expect(Number.isFinite(x)).toBe(true);
  });

  it("gives different questions different vectors", () => {
    const a = encoder.encodeText("Which fruit is red?");
    const b = encoder.encodeText("What vegetable is green?");
    expect(a).not.toEqual(b);
  });

  it("never produces a zero vector", () => {
    const dir = tempDir("enc-");
    const black = writeSolidPng(dir, "7.png", [0, 0, 0]);
    const image = encoder.encodeImage(extractFeatures(decodePng(black)));
    expect(image.some((x) => x !== 0)).toBe(true);
    const text = encoder.encodeText("");
    expect(text.some((x) => x !== 0)).toBe(true);
  });

  it("rejects unknown model ids", () => {
    expect(() => makeEncoder("clip-vit-l14")).toThrow(/unknown embedding model/);
  });
});

describe("captioner and taggers", () => {
  it("captions a solid red image", () => {
    const dir = tempDir("cap-");
    const file = writeSolidPng(dir, "8.png", [230, 20, 20], 24);
    const features = extractFeatures(decodePng(file));
    expect(new StatsCaptioner().caption(features)).toBe(
      "a mostly red image of 24 by 24 pixels",
    );
    expect(new ColorTagger().tags(features)).toContain("red");
    expect(new NoTagger().tags()).toEqual([]);
  });
});

describe("flag parsing", () => {
  const required = [
    "--images", "imgs",
    "--questions", "q.json",
    "--contexts-out", "c.jsonl",
    "--embeddings-out", "e.jsonl",
  ];

  it("fills defaults", () => {
    const job = parseArgs(required);
    expect(job.model).toBe("color-space-v1");
    expect(job.batchSize).toBe(64);
    expect(job.tags).toBe(true);
  });

  it("applies overrides", () => {
    const job = parseArgs([...required, "--model", "color-space-v1", "--batch-size", "2", "--no-tags"]);
    expect(job.batchSize).toBe(2);
    expect(job.tags).toBe(false);
  });

  it("rejects unknown flags and missing values", () => {
    expect(() => parseArgs([...required, "--bogus"])).toThrow(/unknown flag/);
    expect(() => parseArgs(["--images"])).toThrow(/needs a value/);
    expect(() => parseArgs([])).toThrow(/missing required/);
  });
});
