"""Procedural shapes corpus: seeded scene generation with template captions.

Scenes carry full layout metadata so downstream metrics can use ground truth
instead of learned trackers. Captions are a deterministic rendering of the
object list under the closed grammar

    "a {size} {color} {shape} at the {cell}" [" and " ...]

where cell names come from a 3x3 grid over the image.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..vocab import COLOR_WORDS, SHAPE_WORDS, SIZE_WORDS

BACKGROUND_RGB = (235, 235, 235)

COLOR_RGB = {
    "red": (220, 45, 45),
    "green": (40, 170, 60),
    "blue": (45, 80, 220),
    "yellow": (230, 200, 40),
    "purple": (150, 55, 200),
    "orange": (240, 140, 30),
}

# shape radius as a fraction of image size
SIZE_FRACTION = {"small": 0.11, "medium": 0.16, "large": 0.22}

ROW_NAMES = ("top", "center", "bottom")
COL_NAMES = ("left", "center", "right")


def cell_name(x: float, y: float, image_size: int) -> str:
    col = COL_NAMES[min(2, int(3 * x / image_size))]
    row = ROW_NAMES[min(2, int(3 * y / image_size))]
    if row == "center" and col == "center":
        return "center"
    return f"{row} {col}"


def cell_center(name: str, image_size: int) -> tuple[float, float]:
    """Centre point of a named grid cell."""
    if name == "center":
        name = "center center"
    row, col = name.split()
    third = image_size / 3.0
    y = (ROW_NAMES.index(row) + 0.5) * third
    x = (COL_NAMES.index(col) + 0.5) * third
    return x, y


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    center: tuple[float, float]

    def radius_px(self, image_size: int) -> float:
        return SIZE_FRACTION[self.size] * image_size

    def phrase(self, image_size: int) -> str:
        cx, cy = self.center
        return f"a {self.size} {self.color} {self.shape} at the {cell_name(cx, cy, image_size)}"


@dataclass
class SceneRecord:
    image_size: int
    objects: list[SceneObject]
    seed: int = 0

    @property
    def caption(self) -> str:
        return " and ".join(o.phrase(self.image_size) for o in self.objects)

    def render(self) -> np.ndarray:
        """Anti-aliased uint8 (H, W, 3) rendering."""
        return render_scene(self.objects, self.image_size)

    def to_json(self) -> dict:
        return {
            "image_size": self.image_size,
            "seed": self.seed,
            "caption": self.caption,
            "objects": [asdict(o) for o in self.objects],
        }

    @staticmethod
    def from_json(payload: dict) -> "SceneRecord":
        objs = [
            SceneObject(
                shape=o["shape"], color=o["color"], size=o["size"], center=tuple(o["center"])
            )
            for o in payload["objects"]
        ]
        return SceneRecord(image_size=payload["image_size"], objects=objs, seed=payload.get("seed", 0))


def shape_mask(shape: str, cx: float, cy: float, r: float, h: int, w: int) -> np.ndarray:
    """Boolean occupancy mask of a shape on an h x w grid (no anti-aliasing)."""
    ys, xs = np.mgrid[0:h, 0:w]
    xs = xs + 0.5
    ys = ys + 0.5
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r**2
    if shape == "square":
        return np.maximum(np.abs(xs - cx), np.abs(ys - cy)) <= r
    if shape == "triangle":
        # upward triangle: apex at (cx, cy - r), base at cy + r/2
        ax, ay = cx, cy - r
        bx, by = cx - 0.9 * r, cy + 0.55 * r
        dx, dy = cx + 0.9 * r, cy + 0.55 * r

        def side(px, py, qx, qy):
            return (qx - px) * (ys - py) - (qy - py) * (xs - px)

        s1 = side(ax, ay, bx, by)
        s2 = side(bx, by, dx, dy)
        s3 = side(dx, dy, ax, ay)
        return (s1 <= 0) & (s2 <= 0) & (s3 <= 0)
    raise ValueError(f"unknown shape {shape!r}")


def render_scene(objects: list[SceneObject], image_size: int, supersample: int = 4) -> np.ndarray:
    s = supersample
    hw = image_size * s
    img = np.empty((hw, hw, 3), dtype=np.float64)
    img[:] = np.array(BACKGROUND_RGB, dtype=np.float64)
    for obj in objects:
        cx, cy = obj.center
        mask = shape_mask(obj.shape, cx * s, cy * s, obj.radius_px(image_size) * s, hw, hw)
        img[mask] = np.array(COLOR_RGB[obj.color], dtype=np.float64)
    # mean-pool back to target resolution for soft edges
    img = img.reshape(image_size, s, image_size, s, 3).mean(axis=(1, 3))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


@dataclass
class CorpusSpec:
    image_size: int = 32
    shapes: tuple[str, ...] = SHAPE_WORDS
    colors: tuple[str, ...] = COLOR_WORDS
    sizes: tuple[str, ...] = SIZE_WORDS
    two_object_fraction: float = 0.3
    margin: float = 2.0
    jitter_fraction: float = 0.06

    def validate(self):
        for s in self.shapes:
            if s not in SHAPE_WORDS:
                raise ValueError(f"unknown shape {s!r}")
        for c in self.colors:
            if c not in COLOR_RGB:
                raise ValueError(f"unknown color {c!r}")
        for z in self.sizes:
            if z not in SIZE_FRACTION:
                raise ValueError(f"unknown size {z!r}")


def _place_object(rng: np.random.Generator, spec: CorpusSpec, existing: list[SceneObject]):
    size_px = spec.image_size
    for _ in range(64):
        shape = spec.shapes[rng.integers(len(spec.shapes))]
        color = spec.colors[rng.integers(len(spec.colors))]
        size = spec.sizes[rng.integers(len(spec.sizes))]
        r = SIZE_FRACTION[size] * size_px
        cell = rng.integers(9)
        cx0, cy0 = cell_center(f"{ROW_NAMES[cell // 3]} {COL_NAMES[cell % 3]}", size_px)
        jit = spec.jitter_fraction * size_px
        cx = cx0 + rng.uniform(-jit, jit)
        cy = cy0 + rng.uniform(-jit, jit)
        lo, hi = r + 1.0, size_px - r - 1.0
        cx, cy = float(np.clip(cx, lo, hi)), float(np.clip(cy, lo, hi))
        # clamping may cross a cell boundary; keep captions truthful
        if cell_name(cx, cy, size_px) != cell_name(cx0, cy0, size_px):
            continue
        ok = True
        for other in existing:
            dist = np.hypot(cx - other.center[0], cy - other.center[1])
            if dist < r + other.radius_px(size_px) + spec.margin:
                ok = False
                break
        # one object per (color, shape) pair keeps detection unambiguous
        if any((other.color, other.shape) == (color, shape) for other in existing):
            ok = False
        if ok:
            return SceneObject(shape=shape, color=color, size=size, center=(cx, cy))
    return None


def gen_scene(seed: int, spec: CorpusSpec | None = None) -> SceneRecord:
    spec = spec or CorpusSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    n_objects = 2 if rng.random() < spec.two_object_fraction else 1
    objects: list[SceneObject] = []
    for _ in range(n_objects):
        obj = _place_object(rng, spec, objects)
        if obj is not None:
            objects.append(obj)
    if not objects:
        raise RuntimeError(f"could not place any object for seed {seed}")
    return SceneRecord(image_size=spec.image_size, objects=objects, seed=seed)


def gen_corpus(n: int, seed: int, spec: CorpusSpec | None = None) -> list[SceneRecord]:
    """Generate n scenes, deterministic under (n, seed, spec)."""
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    mix = np.random.SeedSequence([seed]).spawn(n)
    return [gen_scene(int(ss.generate_state(1)[0]), spec) for ss in mix]


def save_corpus(records: list[SceneRecord], out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, rec in enumerate(records):
        name = f"scene_{i:05d}"
        Image.fromarray(rec.render()).save(out / f"{name}.png")
        (out / f"{name}.json").write_text(json.dumps(rec.to_json()))
        manifest.append({"id": name, "caption": rec.caption})
    (out / "manifest.jsonl").write_text(
        "\n".join(json.dumps(m) for m in manifest) + "\n"
    )


def load_corpus(in_dir: str | Path) -> list[tuple[np.ndarray, SceneRecord]]:
    out = []
    in_dir = Path(in_dir)
    for meta_path in sorted(in_dir.glob("scene_*.json")):
        rec = SceneRecord.from_json(json.loads(meta_path.read_text()))
        img = np.asarray(Image.open(meta_path.with_suffix(".png")).convert("RGB"))
        out.append((img, rec))
    return out


def to_model_space(img: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    x = img.astype(np.float32) / 127.5 - 1.0
    return np.transpose(x, (2, 0, 1))


def from_model_space(x: np.ndarray) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3)."""
    img = np.transpose(np.asarray(x), (1, 2, 0))
    return np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
