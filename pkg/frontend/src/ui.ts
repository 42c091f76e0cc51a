/** DOM wiring for the workbench; all testable logic lives in the other modules. */

import { ApiError, EditServiceClient } from "./api.js";
import { ResultGallery, sparklinePoints } from "./gallery.js";
import { CanvasSession, HANDLE_COLOR, TARGET_COLOR, orderedIntentions } from "./session.js";
import { UNIFORM_FALLBACK_FLAG } from "./wire.js";

const SCALE = 12; // display pixels per image pixel

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class Workbench {
  session = new CanvasSession();
  client = new EditServiceClient("");
  gallery = new ResultGallery(this.client, this.session);
  mode: "mask" | "erase" | "points" = "points";
  painting = false;
  image: HTMLImageElement | null = null;
  brushRadius = 3;

  canvas = el<HTMLCanvasElement>("canvas");
  status = el<HTMLDivElement>("status");
  cards = el<HTMLDivElement>("cards");
  galleryDiv = el<HTMLDivElement>("gallery");

  init(): void {
    el<HTMLInputElement>("file").addEventListener("change", (e) => this.onFile(e));
    el<HTMLButtonElement>("mode-points").addEventListener("click", () => (this.mode = "points"));
    el<HTMLButtonElement>("mode-mask").addEventListener("click", () => (this.mode = "mask"));
    el<HTMLButtonElement>("mode-erase").addEventListener("click", () => (this.mode = "erase"));
    el<HTMLButtonElement>("undo-point").addEventListener("click", () => {
      this.session.undoPoint();
      this.draw();
    });
    el<HTMLButtonElement>("reason").addEventListener("click", () => void this.reason());
    el<HTMLButtonElement>("submit").addEventListener("click", () => void this.submit());
    el<HTMLInputElement>("caption").addEventListener("input", (e) => {
      this.session.caption = (e.target as HTMLInputElement).value;
    });
    this.canvas.addEventListener("mousedown", (e) => this.onDown(e));
    this.canvas.addEventListener("mousemove", (e) => this.onMove(e));
    window.addEventListener("mouseup", () => (this.painting = false));
    setInterval(() => void this.pollGallery(), 1000);
    this.say("load an image to begin");
  }

  say(text: string): void {
    this.status.textContent = text;
  }

  private canvasPoint(e: MouseEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [(e.clientX - rect.left) / SCALE, (e.clientY - rect.top) / SCALE];
  }

  onFile(e: Event): void {
    const input = e.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onload = () => {
      const img = new Image();
      img.onload = () => {
        const size = img.width;
        const work = document.createElement("canvas");
        work.width = work.height = size;
        work.getContext("2d")!.drawImage(img, 0, 0, size, size);
        const b64 = work.toDataURL("image/png").split(",")[1];
        this.session.loadImage(b64, size);
        this.image = img;
        this.canvas.width = this.canvas.height = size * SCALE;
        this.say(`loaded ${size}x${size} image`);
        this.draw();
      };
      img.src = reader.result as string;
    };
    reader.readAsDataURL(file);
  }

  onDown(e: MouseEvent): void {
    const [x, y] = this.canvasPoint(e);
    if (this.mode === "points") {
      this.session.clickPoint(x, y);
    } else {
      this.painting = true;
      this.session.brush({ points: [[x, y]], radius: this.brushRadius, erase: this.mode === "erase" });
    }
    this.draw();
  }

  onMove(e: MouseEvent): void {
    if (!this.painting || this.mode === "points") return;
    const [x, y] = this.canvasPoint(e);
    this.session.brush({ points: [[x, y]], radius: this.brushRadius, erase: this.mode === "erase" });
    this.draw();
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.image) ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    // mask overlay
    ctx.fillStyle = "rgba(46, 125, 50, 0.35)";
    const mask = this.session.mask;
    for (let y = 0; y < mask.height; y++) {
      for (let x = 0; x < mask.width; x++) {
        if (mask.at(x, y)) ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
      }
    }
    // point pairs: handle red, target blue
    for (const pair of this.session.pairs) {
      ctx.fillStyle = HANDLE_COLOR;
      ctx.beginPath();
      ctx.arc(pair.handle[0] * SCALE, pair.handle[1] * SCALE, 5, 0, Math.PI * 2);
      ctx.fill();
      if (pair.target) {
        ctx.fillStyle = TARGET_COLOR;
        ctx.beginPath();
        ctx.arc(pair.target[0] * SCALE, pair.target[1] * SCALE, 5, 0, Math.PI * 2);
        ctx.fill();
        ctx.strokeStyle = TARGET_COLOR;
        ctx.beginPath();
        ctx.moveTo(pair.handle[0] * SCALE, pair.handle[1] * SCALE);
        ctx.lineTo(pair.target[0] * SCALE, pair.target[1] * SCALE);
        ctx.stroke();
      }
    }
    const blockers = this.session.submissionBlockers();
    el<HTMLButtonElement>("submit").disabled = blockers.length > 0;
    el<HTMLDivElement>("blockers").textContent = blockers.join(" · ");
  }

  async reason(): Promise<void> {
    if (!this.session.imageB64) return this.say("load an image first");
    const pairs = this.session.completePairs();
    if (!pairs.length) return this.say("add a handle→target pair first");
    try {
      const resp = await this.client.postIntentions({
        image: this.session.imageB64,
        points: pairs,
        caption: this.session.caption,
        n: 3,
        backend: "oracle",
      });
      this.session.intentions = orderedIntentions(resp.intentions);
      this.renderCards();
      this.say(`reasoned ${resp.intentions.length} intentions`);
    } catch (err) {
      // never clear the canvas on failure; offer retry instead
      this.renderRetryCard(err as Error);
    }
  }

  renderCards(): void {
    this.cards.innerHTML = "";
    this.session.intentions.forEach((it, i) => {
      const card = document.createElement("div");
      card.className = "card" + (this.session.selectedIntention === i ? " selected" : "");
      const fallback = it.flags.includes(UNIFORM_FALLBACK_FLAG)
        ? `<span class="badge">confidence unavailable</span>`
        : "";
      card.innerHTML = `
        <div class="intent">${it.intent} ${fallback}</div>
        <div class="prompts">${it.source_prompt} → ${it.target_prompt}</div>
        <div class="confbar"><div style="width:${(it.confidence * 100).toFixed(0)}%"></div></div>`;
      card.addEventListener("click", () => {
        this.session.selectIntention(i);
        this.renderCards();
      });
      this.cards.appendChild(card);
    });
  }

  renderRetryCard(err: Error): void {
    this.cards.innerHTML = "";
    const card = document.createElement("div");
    card.className = "card error";
    card.innerHTML = `<div class="intent">intention service unavailable</div>
      <div class="prompts">${err.message}</div>`;
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => void this.reason());
    card.appendChild(retry);
    this.cards.appendChild(card);
  }

  async submit(): Promise<void> {
    try {
      const submission = this.session.capture();
      const jobId = await this.client.postEdit(submission);
      this.session.recordJob(jobId);
      this.say(`submitted job ${jobId}`);
    } catch (err) {
      const status = err instanceof ApiError ? ` (${err.status})` : "";
      this.say(`submit failed${status}: ${(err as Error).message}`);
    }
  }

  async pollGallery(): Promise<void> {
    if (!this.session.jobHistory.length) return;
    await this.gallery.refresh();
    this.renderGallery();
  }

  renderGallery(): void {
    this.galleryDiv.innerHTML = "";
    if (this.session.imageB64) {
      this.galleryDiv.appendChild(this.pane("input", this.session.imageB64, null));
    }
    for (const pane of this.gallery.panes) {
      const label = `${pane.result.intention.intent} (${pane.result.intention.confidence.toFixed(2)})`;
      const node = this.pane(label, pane.result.image, pane.result.trace);
      node.classList.add("clickable");
      node.title = "click to iterate from this result";
      node.addEventListener("click", () => {
        this.gallery.iterate(pane);
        this.image = null;
        const img = new Image();
        img.onload = () => {
          this.image = img;
          this.draw();
        };
        img.src = `data:image/png;base64,${pane.result.image}`;
        this.say("loaded result as new input; draw the next drag");
        this.draw();
      });
      this.galleryDiv.appendChild(node);
    }
    for (const failure of this.gallery.failures) {
      const node = document.createElement("div");
      node.className = "pane error";
      node.textContent = `job ${failure.jobId}: ${failure.error}`;
      this.galleryDiv.appendChild(node);
    }
  }

  pane(label: string, imageB64: string, trace: import("./wire.js").TraceRow[] | null): HTMLDivElement {
    const node = document.createElement("div");
    node.className = "pane";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${imageB64}`;
    img.width = 160;
    img.height = 160;
    node.appendChild(img);
    const caption = document.createElement("div");
    caption.textContent = label;
    node.appendChild(caption);
    if (trace && trace.length) {
      const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
      svg.setAttribute("width", "160");
      svg.setAttribute("height", "24");
      const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
      line.setAttribute("points", sparklinePoints(trace, "g_total", 160, 24));
      line.setAttribute("fill", "none");
      line.setAttribute("stroke", "#7b1fa2");
      svg.appendChild(line);
      node.appendChild(svg);
    }
    return node;
  }
}

new Workbench().init();
