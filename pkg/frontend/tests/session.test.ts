import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { CanvasSession, orderedIntentions } from "../src/session.js";
import { Intention } from "../src/wire.js";

const GOLDEN = JSON.parse(
  readFileSync(new URL("./fixtures/submission.golden.json", import.meta.url), "utf-8"),
);

function intention(conf: number, suffix = ""): Intention {
  return {
    intent: `intent${suffix}`,
    source_prompt: "a source",
    target_prompt: `a target${suffix}`,
    confidence: conf,
    flags: [],
  };
}

function readySession(): CanvasSession {
  const s = new CanvasSession(16);
  s.loadImage("<IMAGE_B64>", 16);
  s.caption = "a medium red circle at the center left";
  s.clickPoint(5.0, 8.0);
  s.clickPoint(11.0, 8.0);
  // painted rectangle rows 6..10, cols 3..12 (matches the golden mask)
  for (let y = 6; y < 11; y++) {
    for (let x = 3; x < 13; x++) {
      s.mask.pixels[y * 16 + x] = 1;
    }
  }
  return s;
}

describe("point pair capture", () => {
  it("clicks alternate handle then target", () => {
    const s = new CanvasSession(16);
    s.clickPoint(1, 1);
    expect(s.hasIncompletePair()).toBe(true);
    s.clickPoint(5, 5);
    expect(s.hasIncompletePair()).toBe(false);
    expect(s.completePairs()).toEqual([{ handle: [1, 1], target: [5, 5] }]);
    s.clickPoint(2, 2);
    expect(s.completePairs().length).toBe(1);
    expect(s.hasIncompletePair()).toBe(true);
  });

  it("undo removes the target first, then the handle", () => {
    const s = new CanvasSession(16);
    s.clickPoint(1, 1);
    s.clickPoint(5, 5);
    s.undoPoint();
    expect(s.hasIncompletePair()).toBe(true);
    s.undoPoint();
    expect(s.pairs.length).toBe(0);
  });
});

describe("submission gating", () => {
  it("blocks until the session is complete", () => {
    const s = new CanvasSession(16);
    expect(s.submissionBlockers().length).toBeGreaterThan(0);
    expect(() => s.capture()).toThrow(/not submittable/);
  });

  it("an incomplete pair blocks submission with a hint", () => {
    const s = readySession();
    s.clickPoint(2, 2); // open pair
    expect(s.submissionBlockers().some((b) => b.includes("handle without target"))).toBe(true);
  });

  it("an empty mask blocks submission", () => {
    const s = readySession();
    s.mask.clear();
    expect(s.submissionBlockers().some((b) => b.includes("editable region"))).toBe(true);
  });
});

describe("capture_drag wire schema", () => {
  it("matches the documented golden submission", () => {
    const s = readySession();
    s.seed = 7;
    s.intentions = [GOLDEN.intention];
    s.selectIntention(0);
    expect(s.capture()).toEqual(GOLDEN);
  });

  it("auto mode is used when no card is selected", () => {
    const s = readySession();
    const sub = s.capture();
    expect(sub.intention).toBeUndefined();
    expect(sub.auto).toEqual({ n: 1, backend: "oracle" });
  });

  it("selecting card k routes intention k into the request", () => {
    const s = readySession();
    s.intentions = [intention(0.9, "-a"), intention(0.7, "-b"), intention(0.5, "-c")];
    s.selectIntention(1);
    expect(s.capture().intention?.target_prompt).toBe("a target-b");
  });
});

describe("intention card ordering", () => {
  it("sorts descending by confidence, stable on ties", () => {
    const cards = orderedIntentions([intention(0.5, "-x"), intention(0.9), intention(0.5, "-y")]);
    expect(cards.map((c) => c.confidence)).toEqual([0.9, 0.5, 0.5]);
    expect(cards[1].intent).toBe("intent-x");
    expect(cards[2].intent).toBe("intent-y");
  });
});

describe("iterate loop", () => {
  it("loads the chosen result as the next input and resets drag state", () => {
    const s = readySession();
    s.iterateFrom("NEXT_IMAGE_B64");
    expect(s.imageB64).toBe("NEXT_IMAGE_B64");
    expect(s.pairs.length).toBe(0);
    expect(s.mask.isEmpty()).toBe(true);
  });
});
