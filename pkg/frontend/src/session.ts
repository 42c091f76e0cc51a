/** Workbench session state: image, mask strokes, point pairs, intentions, jobs.
 *
 * Point pairs render handle points in red and target points in blue. A drag
 * is submittable once at least one pair is complete and the mask is
 * nonempty; capture() emits exactly the wire schema POST /api/edits
 * consumes.
 */

import { MaskState, Stroke, encodeMask } from "./mask.js";
import { EditSubmission, Intention, PointPair, Toggles } from "./wire.js";

export const HANDLE_COLOR = "#d32f2f"; // red
export const TARGET_COLOR = "#1565c0"; // blue

export interface PendingPair {
  handle: [number, number];
  target?: [number, number];
}

export interface JobRef {
  jobId: string;
  submittedAt: number;
}

export class CanvasSession {
  imageB64: string | null = null;
  imageSize = 0;
  caption = "";
  mask: MaskState;
  pairs: PendingPair[] = [];
  intentions: Intention[] = [];
  selectedIntention: number | null = null;
  jobHistory: JobRef[] = [];
  seed = 0;
  toggles: Toggles = {
    use_edit: true,
    use_semantic: true,
    use_quality: true,
    use_kv_replacement: true,
  };

  constructor(imageSize = 32) {
    this.imageSize = imageSize;
    this.mask = new MaskState(imageSize, imageSize);
  }

  loadImage(imageB64: string, size: number): void {
    this.imageB64 = imageB64;
    this.imageSize = size;
    this.mask = new MaskState(size, size);
    this.pairs = [];
    this.intentions = [];
    this.selectedIntention = null;
  }

  brush(stroke: Stroke): void {
    this.mask.applyStroke(stroke);
  }

  /** Clicks alternate: first click of a pair is the handle, second the target. */
  clickPoint(x: number, y: number): void {
    const last = this.pairs[this.pairs.length - 1];
    if (last && last.target === undefined) {
      last.target = [x, y];
    } else {
      this.pairs.push({ handle: [x, y] });
    }
  }

  undoPoint(): void {
    const last = this.pairs[this.pairs.length - 1];
    if (!last) return;
    if (last.target !== undefined) {
      last.target = undefined;
    } else {
      this.pairs.pop();
    }
  }

  completePairs(): PointPair[] {
    return this.pairs
      .filter((p): p is Required<PendingPair> => p.target !== undefined)
      .map((p) => ({ handle: p.handle, target: p.target }));
  }

  hasIncompletePair(): boolean {
    return this.pairs.some((p) => p.target === undefined);
  }

  /** Human-readable reasons the drag cannot be submitted yet (empty = ready). */
  submissionBlockers(): string[] {
    const blockers: string[] = [];
    if (!this.imageB64) blockers.push("load an image first");
    if (this.completePairs().length === 0) blockers.push("add at least one handle→target pair");
    if (this.hasIncompletePair()) blockers.push("finish the open pair (handle without target)");
    if (this.mask.isEmpty()) blockers.push("paint an editable region");
    if (!this.caption.trim()) blockers.push("describe the image in the caption box");
    return blockers;
  }

  selectIntention(index: number): void {
    if (index < 0 || index >= this.intentions.length) {
      throw new Error(`intention index ${index} out of range`);
    }
    this.selectedIntention = index;
  }

  /** Exact wire payload for POST /api/edits. */
  capture(): EditSubmission {
    const blockers = this.submissionBlockers();
    if (blockers.length) {
      throw new Error(`drag not submittable: ${blockers.join("; ")}`);
    }
    const submission: EditSubmission = {
      image: this.imageB64 as string,
      mask: encodeMask(this.mask.pixels, this.mask.width, this.mask.height),
      caption: this.caption,
      points: this.completePairs(),
      seed: this.seed,
      toggles: { ...this.toggles },
    };
    if (this.selectedIntention !== null) {
      submission.intention = this.intentions[this.selectedIntention];
    } else {
      submission.auto = { n: 1, backend: "oracle" };
    }
    return submission;
  }

  recordJob(jobId: string): void {
    this.jobHistory.push({ jobId, submittedAt: Date.now() });
  }

  /** The iterate loop: a chosen result becomes the next input image. */
  iterateFrom(resultImageB64: string): void {
    this.loadImage(resultImageB64, this.imageSize);
  }
}

/** Intention cards sorted by confidence, descending (stable). */
export function orderedIntentions(intentions: Intention[]): Intention[] {
  return intentions
    .map((it, i) => [it, i] as const)
    .sort((a, b) => b[0].confidence - a[0].confidence || a[1] - b[1])
    .map(([it]) => it);
}
