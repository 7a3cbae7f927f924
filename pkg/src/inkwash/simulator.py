"""Simulated marker-ink benchmarks with exact ground truth.

Composites pen-style ink patterns onto clean tiles through a CMYK-space
blend, so the inked and clean images differ only on the ink mask. Also
synthesizes H&E-looking tissue tiles at desk scale, which is what makes
classifier/detector/restorer training and evaluation reproducible without
any slide data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .boxes import BoundingBox
from .errors import InvalidConfig, InvalidInput
from .tiles import Tile

INK_COLORS_CMYK = {
    "black": (0.0, 0.0, 0.0, 1.0),
    "green": (1.0, 0.0, 1.0, 0.0),
    "blue": (1.0, 1.0, 0.0, 0.0),
    "red": (0.0, 1.0, 1.0, 0.0),
}
PATTERNS = ("line", "circle", "arrow", "letter", "dot")
OPACITY_RANGE = (0.6, 1.0)
MASK_AREA_MIN = 0.005
MASK_AREA_MAX = 0.60
BENCHMARK_SCHEMA = 1

# Marker glyphs as 5x7 bitmaps; rendered by integer upscaling so masks stay
# deterministic with no font dependency.
FONT_5X7 = {
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "L": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "N": ("10001", "11001", "10101", "10011", "10001", "10001", "10001"),
    "O": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "X": ("10001", "10001", "01010", "00100", "01010", "10001", "10001"),
    "Y": ("10001", "10001", "01010", "00100", "00100", "00100", "00100"),
    "Z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00110", "01000", "10000", "11111"),
    "3": ("11110", "00001", "00001", "01110", "00001", "00001", "11110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
}

# Synthetic H&E palette (RGB).
BACKGROUND_RGB = (244, 242, 245)
STROMA_RGB = (228, 176, 190)
NUCLEUS_RGB = (92, 58, 134)


@dataclass(frozen=True)
class InkSpec:
    """Parameters of one simulated marker stroke family."""

    color: str
    pattern: str
    opacity: float
    stroke_width: int
    seed: int

    def __post_init__(self):
        if self.color not in INK_COLORS_CMYK:
            raise InvalidConfig(f"unknown ink color {self.color!r}")
        if self.pattern not in PATTERNS:
            raise InvalidConfig(f"unknown ink pattern {self.pattern!r}")
        if not (OPACITY_RANGE[0] <= self.opacity <= OPACITY_RANGE[1]):
            raise InvalidConfig(
                f"opacity {self.opacity} outside {OPACITY_RANGE}")
        if self.stroke_width < 1:
            raise InvalidConfig("stroke_width must be >= 1")

    def to_dict(self) -> dict:
        return {"color": self.color, "pattern": self.pattern,
                "opacity": round(float(self.opacity), 6),
                "stroke_width": int(self.stroke_width), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "InkSpec":
        return cls(color=d["color"], pattern=d["pattern"], opacity=float(d["opacity"]),
                   stroke_width=int(d["stroke_width"]), seed=int(d["seed"]))


# ---------------------------------------------------------------------------
# Color space: naive device CMYK (no ICC profile, fully deterministic)
# ---------------------------------------------------------------------------

def rgb_to_cmyk(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) uint8/float RGB array to (..., 4) CMYK in [0, 1]."""
    rgbf = np.asarray(rgb, dtype=np.float64) / 255.0
    k = 1.0 - rgbf.max(axis=-1)
    denom = 1.0 - k
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.float64)
    safe = denom > 1e-12
    for i in range(3):
        out[..., i] = np.where(safe, (1.0 - rgbf[..., i] - k) / np.where(safe, denom, 1.0), 0.0)
    out[..., 3] = k
    return out


def cmyk_to_rgb(cmyk: np.ndarray) -> np.ndarray:
    """Convert an (..., 4) CMYK array in [0, 1] back to uint8 RGB."""
    c = np.asarray(cmyk, dtype=np.float64)
    rgb = 255.0 * (1.0 - c[..., :3]) * (1.0 - c[..., 3:4])
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Mask generation
# ---------------------------------------------------------------------------

def _random_border_point(rng, size, side):
    m = int(size * 0.15)
    if side == 0:
        return (int(rng.integers(0, size)), int(rng.integers(0, m)))
    if side == 1:
        return (int(rng.integers(0, size)), int(rng.integers(size - m, size)))
    if side == 2:
        return (int(rng.integers(0, m)), int(rng.integers(0, size)))
    return (int(rng.integers(size - m, size)), int(rng.integers(0, size)))


def _draw_stroke(canvas, rng, size, stroke, arrow=False):
    side = int(rng.integers(0, 4))
    p0 = _random_border_point(rng, size, side)
    p1 = _random_border_point(rng, size, side ^ 1)
    if arrow:
        cv2.arrowedLine(canvas, p0, p1, 1, thickness=stroke, tipLength=0.2)
    else:
        cv2.line(canvas, p0, p1, 1, thickness=stroke)


def _draw_circle(canvas, rng, size, stroke):
    cx = int(rng.uniform(0.3, 0.7) * size)
    cy = int(rng.uniform(0.3, 0.7) * size)
    radius = int(rng.uniform(0.15, 0.32) * size)
    cv2.circle(canvas, (cx, cy), max(radius, stroke + 2), 1, thickness=stroke)


def _draw_letters(canvas, rng, size, stroke):
    glyphs = sorted(FONT_5X7)
    n = int(rng.integers(1, 4))
    scale = max(2, int(round(size * rng.uniform(0.02, 0.035))))
    for _ in range(n):
        glyph = FONT_5X7[glyphs[int(rng.integers(0, len(glyphs)))]]
        bitmap = np.array([[int(ch) for ch in row] for row in glyph], dtype=np.uint8)
        block = np.kron(bitmap, np.ones((scale, scale), dtype=np.uint8))
        gh, gw = block.shape
        if gh >= size or gw >= size:
            continue
        y = int(rng.integers(0, size - gh))
        x = int(rng.integers(0, size - gw))
        region = canvas[y:y + gh, x:x + gw]
        np.maximum(region, block, out=region)


def _draw_dots(canvas, rng, size, stroke):
    n = int(rng.integers(3, 9))
    # Total dot area targets 1-4% of the tile, always below the 5% dot cap.
    frac = rng.uniform(0.01, 0.04)
    radius = max(2, int(size * np.sqrt(frac / (n * np.pi))))
    for _ in range(n):
        cx = int(rng.integers(radius, size - radius))
        cy = int(rng.integers(radius, size - radius))
        cv2.circle(canvas, (cx, cy), radius, 1, thickness=-1)


def generate_mask(spec: InkSpec, size: int) -> np.ndarray:
    """Render the binary ink mask for a spec; deterministic for a given seed.

    The mask covers between 0.5% and 60% of the tile. If a first drawing
    lands below the minimum, further elements of the same pattern are added;
    oversized drawings are retried at reduced stroke width.
    """
    rng = np.random.default_rng(spec.seed)
    stroke = spec.stroke_width
    for _ in range(8):
        canvas = np.zeros((size, size), dtype=np.uint8)
        draw = {
            "line": lambda: _draw_stroke(canvas, rng, size, stroke),
            "arrow": lambda: _draw_stroke(canvas, rng, size, stroke, arrow=True),
            "circle": lambda: _draw_circle(canvas, rng, size, stroke),
            "letter": lambda: _draw_letters(canvas, rng, size, stroke),
            "dot": lambda: _draw_dots(canvas, rng, size, stroke),
        }[spec.pattern]
        draw()
        for _ in range(20):
            if canvas.mean() >= MASK_AREA_MIN:
                break
            draw()
        if canvas.mean() <= MASK_AREA_MAX:
            break
        stroke = max(1, stroke // 2)
    return canvas.astype(bool)


# ---------------------------------------------------------------------------
# Ink compositing
# ---------------------------------------------------------------------------

def apply_ink(clean, mask: np.ndarray, spec: InkSpec):
    """Blend marker ink onto a tile in CMYK space.

    Only mask pixels are touched: out = (1-a)*tile_cmyk + a*ink_cmyk with
    a = spec.opacity, converted back to RGB. Off-mask pixels stay
    bit-identical, which is the ground-truth guarantee benchmarks rely on.
    """
    pixels = clean.pixels if isinstance(clean, Tile) else clean
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pixels.shape[:2]:
        raise InvalidInput(
            f"mask shape {mask.shape} does not match tile {pixels.shape[:2]}")
    out = pixels.copy()
    if mask.any():
        selected = pixels[mask]
        ink = np.array(INK_COLORS_CMYK[spec.color], dtype=np.float64)
        blended = (1.0 - spec.opacity) * rgb_to_cmyk(selected) + spec.opacity * ink
        out[mask] = cmyk_to_rgb(blended)
    if isinstance(clean, Tile):
        return clean.with_pixels(out)
    return out


# ---------------------------------------------------------------------------
# Synthetic tissue tiles
# ---------------------------------------------------------------------------

@dataclass
class SyntheticTile:
    """A generated clean tile with the ground truth the generators knew."""

    pixels: np.ndarray
    tissue_mask: np.ndarray
    cluster_boxes: list[BoundingBox] = field(default_factory=list)
    density: str = "sparse"
    coverage: str = "full"


def _draw_nuclei(canvas, rng, centers, size):
    base = np.array(NUCLEUS_RGB, dtype=np.float64)
    r_lo = max(2, int(round(size * 0.008)))
    r_hi = max(r_lo + 1, int(round(size * 0.02)))
    for cx, cy in centers:
        axes = (int(rng.integers(r_lo, r_hi)), int(rng.integers(r_lo, r_hi)))
        angle = float(rng.uniform(0, 180))
        color = np.clip(base + rng.normal(0, 12, size=3), 0, 255)
        cv2.ellipse(canvas, (int(cx), int(cy)), axes, angle, 0, 360,
                    color.tolist(), thickness=-1)


def _sample_in_mask(rng, mask, n):
    size = mask.shape[0]
    pts = []
    for _ in range(n * 4):
        if len(pts) >= n:
            break
        x = int(rng.integers(0, size))
        y = int(rng.integers(0, size))
        if mask[y, x]:
            pts.append((x, y))
    return pts


def synthesize_clean_tile(size: int, density: str = "sparse", coverage: str = "full",
                          seed: int = 0) -> SyntheticTile:
    """Generate an H&E-looking clean tile.

    density controls how packed the cell texture is; dense tiles also get
    1-3 compact cell clusters whose bounding boxes are recorded (those are
    the detector's second class). coverage selects whether the tile is all
    tissue, part tissue, or bare glass.
    """
    if density not in ("sparse", "dense"):
        raise InvalidConfig(f"density must be sparse or dense, got {density!r}")
    if coverage not in ("full", "partial", "background"):
        raise InvalidConfig(f"unknown coverage {coverage!r}")
    rng = np.random.default_rng(seed)
    canvas = np.clip(rng.normal(BACKGROUND_RGB, 2.5, size=(size, size, 3)), 0, 255)

    if coverage == "background":
        return SyntheticTile(pixels=canvas.astype(np.uint8),
                             tissue_mask=np.zeros((size, size), dtype=bool),
                             density=density, coverage=coverage)

    if coverage == "full":
        tissue = np.ones((size, size), dtype=bool)
    else:
        tissue8 = np.zeros((size, size), dtype=np.uint8)
        cx = int(rng.uniform(0.25, 0.75) * size)
        cy = int(rng.uniform(0.25, 0.75) * size)
        axes = (int(rng.uniform(0.3, 0.55) * size), int(rng.uniform(0.3, 0.55) * size))
        cv2.ellipse(tissue8, (cx, cy), axes, float(rng.uniform(0, 180)), 0, 360, 1, -1)
        tissue = tissue8.astype(bool)

    # Stroma: eosin base modulated by a low-frequency field plus fine noise.
    coarse = rng.normal(0, 1, size=(8, 8, 3))
    fieldmap = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC) * 9.0
    stroma = np.clip(STROMA_RGB + fieldmap + rng.normal(0, 4.0, size=(size, size, 3)), 0, 255)
    canvas[tissue] = stroma[tissue]
    canvas = canvas.astype(np.uint8)

    rate = 0.0004 if density == "sparse" else 0.0018
    n_nuclei = max(4, int(tissue.sum() * rate))
    _draw_nuclei(canvas, rng, _sample_in_mask(rng, tissue, n_nuclei), size)

    cluster_boxes = []
    if density == "dense":
        for _ in range(int(rng.integers(1, 4))):
            centers = _sample_in_mask(rng, tissue, 1)
            if not centers:
                continue
            cx, cy = centers[0]
            radius = int(rng.uniform(0.09, 0.16) * size)
            disk = np.zeros((size, size), dtype=np.uint8)
            cv2.circle(disk, (cx, cy), radius, 1, thickness=-1)
            disk_mask = disk.astype(bool) & tissue
            if not disk_mask.any():
                continue
            n_packed = max(10, int(disk_mask.sum() * 0.004))
            _draw_nuclei(canvas, rng, _sample_in_mask(rng, disk_mask, n_packed), size)
            ys, xs = np.nonzero(disk_mask)
            cluster_boxes.append(BoundingBox(
                cls="cluster", x=int(xs.min()), y=int(ys.min()),
                w=int(xs.max() - xs.min() + 1), h=int(ys.max() - ys.min() + 1)))

    return SyntheticTile(pixels=canvas, tissue_mask=tissue,
                         cluster_boxes=cluster_boxes, density=density, coverage=coverage)


def make_source_pool(n: int, size: int, seed: int = 0) -> list[SyntheticTile]:
    """A deterministic mix of clean tiles over densities and coverages."""
    coverages = ("full", "partial", "background", "full", "partial")
    densities = ("sparse", "dense")
    return [
        synthesize_clean_tile(size, density=densities[i % 2],
                              coverage=coverages[i % len(coverages)],
                              seed=seed * 1_000_003 + i)
        for i in range(n)
    ]


def estimate_tissue_mask(pixels: np.ndarray) -> np.ndarray:
    """Heuristic tissue mask for tiles without generator ground truth.

    Glass background scans near-white with low chroma; anything darker or
    more saturated counts as tissue. Small specks are removed.
    """
    p = pixels.astype(np.int16)
    low = p.min(axis=-1)
    chroma = p.max(axis=-1) - low
    mask = (low < 225) | (chroma > 20)
    mask = ndimage.binary_opening(mask, structure=np.ones((3, 3)))
    return ndimage.binary_closing(mask, structure=np.ones((3, 3)))


# ---------------------------------------------------------------------------
# Benchmark assembly
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkPair:
    """One clean/inked pair with exact mask and derived annotations."""

    pair_id: str
    clean: Tile
    inked: Tile
    mask: np.ndarray
    boxes: list[BoundingBox]
    cluster_boxes: list[BoundingBox] = field(default_factory=list)
    spec: InkSpec | None = None
    stage2_label: str = "foreground"
    density: str | None = None


def mask_to_boxes(mask: np.ndarray, min_area: int = 4) -> list[BoundingBox]:
    """Connected-component bounding boxes of a binary mask (8-connected)."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3)))
    out = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        h = sl[0].stop - sl[0].start
        w = sl[1].stop - sl[1].start
        if w * h < min_area:
            continue
        out.append(BoundingBox(cls="ink", x=sl[1].start, y=sl[0].start, w=w, h=h))
    return out


def _source_fields(source):
    if isinstance(source, SyntheticTile):
        return source.pixels, source.tissue_mask, source.cluster_boxes, source.density
    pixels = source.pixels if isinstance(source, Tile) else np.asarray(source)
    return pixels, None, [], None


def build_benchmark(clean_tiles, n_pairs: int, seed: int, out_dir=None) -> list[BenchmarkPair]:
    """Composite randomized ink specs onto clean tiles.

    Pure function of (clean tiles, seed): the same call produces identical
    pairs and, when out_dir is given, a byte-identical directory tree of
    clean/, inked/, masks/, annotations/ and the pairs.json index.
    """
    if len(clean_tiles) < 1:
        raise InvalidInput("need at least one clean tile")
    pairs = []
    for i in range(n_pairs):
        source = clean_tiles[i % len(clean_tiles)]
        pixels, tissue_mask, cluster_boxes, density = _source_fields(source)
        if pixels.shape[0] != pixels.shape[1]:
            raise InvalidInput("benchmark clean tiles must be square")
        size = pixels.shape[0]
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        spec = InkSpec(
            color=sorted(INK_COLORS_CMYK)[int(rng.integers(0, len(INK_COLORS_CMYK)))],
            pattern=PATTERNS[int(rng.integers(0, len(PATTERNS)))],
            opacity=float(rng.uniform(*OPACITY_RANGE)),
            stroke_width=max(2, int(round(size * rng.uniform(0.012, 0.05)))),
            seed=int(rng.integers(0, 2 ** 31)),
        )
        mask = generate_mask(spec, size)
        inked_px = apply_ink(pixels, mask, spec)
        if tissue_mask is None:
            tissue_mask = estimate_tissue_mask(pixels)
        stage2 = "foreground" if (mask & tissue_mask).any() else "background_only"
        pair_id = f"pair_{i:04d}"
        pairs.append(BenchmarkPair(
            pair_id=pair_id,
            clean=Tile(slide_id=pair_id, row=0, col=0, pixels=pixels, native_size=size),
            inked=Tile(slide_id=pair_id, row=0, col=0, pixels=inked_px, native_size=size),
            mask=mask,
            boxes=mask_to_boxes(mask),
            cluster_boxes=list(cluster_boxes),
            spec=spec,
            stage2_label=stage2,
            density=density,
        ))
    if out_dir is not None:
        write_benchmark(pairs, out_dir, seed=seed)
    return pairs


def _annotation_lines(pair: BenchmarkPair) -> list[str]:
    size = pair.inked.pixels.shape[0]
    lines = []
    for cls_idx, boxes in ((0, pair.boxes), (1, pair.cluster_boxes)):
        for b in boxes:
            cx = (b.x + b.w / 2) / size
            cy = (b.y + b.h / 2) / size
            lines.append(f"{cls_idx} {cx:.6f} {cy:.6f} {b.w / size:.6f} {b.h / size:.6f}")
    return lines


def write_benchmark(pairs: list[BenchmarkPair], out_dir, seed: int | None = None) -> None:
    out_dir = Path(out_dir)
    for sub in ("clean", "inked", "masks", "annotations"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    index = {"schema": BENCHMARK_SCHEMA, "seed": seed, "n_pairs": len(pairs), "pairs": []}
    for pair in pairs:
        Image.fromarray(pair.clean.pixels).save(out_dir / "clean" / f"{pair.pair_id}.png")
        Image.fromarray(pair.inked.pixels).save(out_dir / "inked" / f"{pair.pair_id}.png")
        Image.fromarray(pair.mask.astype(np.uint8) * 255).save(
            out_dir / "masks" / f"{pair.pair_id}.png")
        ann = "\n".join(_annotation_lines(pair))
        (out_dir / "annotations" / f"{pair.pair_id}.txt").write_text(
            ann + ("\n" if ann else ""), encoding="utf-8")
        index["pairs"].append({
            "id": pair.pair_id,
            "spec": pair.spec.to_dict() if pair.spec else None,
            "stage2_label": pair.stage2_label,
            "density": pair.density,
            "mask_area": round(float(pair.mask.mean()), 6),
            "boxes": [b.to_dict() for b in pair.boxes],
            "cluster_boxes": [b.to_dict() for b in pair.cluster_boxes],
        })
    with open(out_dir / "pairs.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_benchmark(benchmark_dir) -> list[BenchmarkPair]:
    benchmark_dir = Path(benchmark_dir)
    with open(benchmark_dir / "pairs.json", encoding="utf-8") as fh:
        index = json.load(fh)
    if index.get("schema") != BENCHMARK_SCHEMA:
        raise InvalidInput(f"unsupported benchmark schema {index.get('schema')!r}")
    pairs = []
    for entry in index["pairs"]:
        pid = entry["id"]
        clean = np.asarray(Image.open(benchmark_dir / "clean" / f"{pid}.png").convert("RGB"))
        inked = np.asarray(Image.open(benchmark_dir / "inked" / f"{pid}.png").convert("RGB"))
        mask = np.asarray(Image.open(benchmark_dir / "masks" / f"{pid}.png").convert("L")) > 127
        size = clean.shape[0]
        pairs.append(BenchmarkPair(
            pair_id=pid,
            clean=Tile(slide_id=pid, row=0, col=0, pixels=clean, native_size=size),
            inked=Tile(slide_id=pid, row=0, col=0, pixels=inked, native_size=size),
            mask=mask,
            boxes=[BoundingBox.from_dict(b) for b in entry["boxes"]],
            cluster_boxes=[BoundingBox.from_dict(b) for b in entry["cluster_boxes"]],
            spec=InkSpec.from_dict(entry["spec"]) if entry.get("spec") else None,
            stage2_label=entry["stage2_label"],
            density=entry.get("density"),
        ))
    return pairs


# ---------------------------------------------------------------------------
# Dataset adapters for the trainable stages
# ---------------------------------------------------------------------------

def classifier_samples(pairs: list[BenchmarkPair], stage: int):
    """Labelled tiles for one classifier stage.

    Stage 1 pits every clean tile against every inked tile; stage 2 splits
    the inked tiles by whether ink touches tissue.
    """
    samples = []
    if stage == 1:
        for pair in pairs:
            samples.append((pair.clean, "no_ink"))
            samples.append((pair.inked, "ink"))
    elif stage == 2:
        for pair in pairs:
            samples.append((pair.inked, pair.stage2_label))
    else:
        raise InvalidConfig(f"classifier stage must be 1 or 2, got {stage}")
    return samples


def detector_samples(pairs: list[BenchmarkPair]):
    """(tile, boxes) annotations with both ink and cluster classes."""
    return [(pair.inked, [*pair.boxes, *pair.cluster_boxes]) for pair in pairs]


def restorer_domains(pairs: list[BenchmarkPair], density: str | None = None):
    """Unpaired (inked, clean) training domains, optionally filtered by density."""
    chosen = [p for p in pairs if density is None or p.density == density]
    return [p.inked for p in chosen], [p.clean for p in chosen]
