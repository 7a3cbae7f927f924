"""Full-reference image quality metrics and the restoration report.

PSNR is computed on all channels against the 8-bit peak. SSIM and VIF run
on the ITU-R 601 luma channel in float64. Constants follow the canonical
published defaults (SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01,
K2=0.03, L=255; VIF: pixel domain, 4 scales, windows 2^(5-s)+1 with
sigma N/5 and noise variance 2) and are recorded in the report header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidInput
from .tiles import Tile

DYNAMIC_RANGE = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
VIF_SCALES = 4
VIF_SIGMA_NSQ = 2.0

METRIC_CONSTANTS = {
    "psnr_peak": DYNAMIC_RANGE,
    "ssim_window": SSIM_WINDOW,
    "ssim_sigma": SSIM_SIGMA,
    "ssim_k1": SSIM_K1,
    "ssim_k2": SSIM_K2,
    "vif_domain": "pixel",
    "vif_scales": VIF_SCALES,
    "vif_sigma_nsq": VIF_SIGMA_NSQ,
    "luma": "itu-r-601",
}

REPORT_COLUMNS = ("tile_id", "psnr_inked", "psnr_restored", "ssim_inked",
                  "ssim_restored", "vif_inked", "vif_restored")


def _pixels(image) -> np.ndarray:
    if isinstance(image, Tile):
        return image.pixels
    return np.asarray(image)


def _check_pair(reference, test):
    ref = _pixels(reference)
    tst = _pixels(test)
    if ref.shape != tst.shape:
        raise InvalidInput(f"image shapes differ: {ref.shape} vs {tst.shape}")
    if ref.size == 0:
        raise InvalidInput("empty images")
    return ref.astype(np.float64), tst.astype(np.float64)


def luma(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of an RGB array; grayscale passes through."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    raise InvalidInput(f"expected HxW or HxWx3 image, got shape {arr.shape}")


def psnr(reference, test) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    ref, tst = _check_pair(reference, test)
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE ** 2 / mse)


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (ax / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel_1d: np.ndarray) -> np.ndarray:
    # Separable correlation; borders are contaminated by the constant pad
    # and cropped away, leaving the exact valid-mode result.
    r = len(kernel_1d) // 2
    out = correlate1d(img, kernel_1d, axis=0, mode="constant")
    out = correlate1d(out, kernel_1d, axis=1, mode="constant")
    return out[r:-r or None, r:-r or None]


def ssim(reference, test) -> float:
    """Mean local structural similarity over the luma channel."""
    ref, tst = _check_pair(reference, test)
    x = luma(ref)
    y = luma(tst)
    if min(x.shape) < SSIM_WINDOW:
        raise InvalidInput(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    kernel = _gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    sigma_x = _filter_valid(x * x, kernel) - mu_x ** 2
    sigma_y = _filter_valid(y * y, kernel) - mu_y ** 2
    sigma_xy = _filter_valid(x * y, kernel) - mu_x * mu_y
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / \
               ((mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2))
    return float(ssim_map.mean())


def vif(reference, test) -> float:
    """Pixel-domain visual information fidelity over 4 Gaussian scales."""
    ref, tst = _check_pair(reference, test)
    x = luma(ref)
    y = luma(tst)
    eps = 1e-10
    num = 0.0
    den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        n = 2 ** (VIF_SCALES - scale + 1) + 1
        kernel = _gaussian_1d(n, n / 5.0)
        if scale > 1:
            x = _filter_valid(x, kernel)[::2, ::2]
            y = _filter_valid(y, kernel)[::2, ::2]
        if min(x.shape) < n:
            raise InvalidInput("image too small for the 4-scale VIF pyramid")
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        sigma_x = np.maximum(_filter_valid(x * x, kernel) - mu_x ** 2, 0.0)
        sigma_y = np.maximum(_filter_valid(y * y, kernel) - mu_y ** 2, 0.0)
        sigma_xy = _filter_valid(x * y, kernel) - mu_x * mu_y

        g = sigma_xy / (sigma_x + eps)
        sv = sigma_y - g * sigma_xy
        g[sigma_x < eps] = 0.0
        sv[sigma_x < eps] = sigma_y[sigma_x < eps]
        sigma_x = sigma_x.copy()
        sigma_x[sigma_x < eps] = 0.0
        sv[sigma_y < eps] = 0.0
        g[sigma_y < eps] = 0.0
        sv[g < 0] = sigma_y[g < 0]
        g[g < 0] = 0.0
        sv[sv <= eps] = eps

        num += float(np.sum(np.log10(1.0 + g ** 2 * sigma_x / (sv + VIF_SIGMA_NSQ))))
        den += float(np.sum(np.log10(1.0 + sigma_x / VIF_SIGMA_NSQ)))
    if den == 0.0:
        # Perfectly flat reference carries no information either way.
        return 1.0
    return num / den


@dataclass
class QualityReport:
    """Per-tile and aggregate inked-vs-restored metrics."""

    rows: list[dict] = field(default_factory=list)
    constants: dict = field(default_factory=lambda: dict(METRIC_CONSTANTS))

    @property
    def means(self) -> dict:
        out = {}
        for col in REPORT_COLUMNS[1:]:
            values = [row[col] for row in self.rows]
            out[col] = float(np.mean(values)) if values else math.nan
        return out

    @staticmethod
    def _fmt(value) -> str:
        return "inf" if math.isinf(value) else f"{value:.6f}"

    def save_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows:
                writer.writerow([row["tile_id"]] +
                                [self._fmt(row[c]) for c in REPORT_COLUMNS[1:]])

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else round(v, 6)
        return {
            "constants": self.constants,
            "rows": [{"tile_id": r["tile_id"],
                      **{c: enc(r[c]) for c in REPORT_COLUMNS[1:]}} for r in self.rows],
            "means": {c: enc(v) for c, v in self.means.items()},
        }

    def save_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_restoration(benchmark, restored) -> QualityReport:
    """Score restored tiles against their benchmark pairs.

    benchmark is a sequence of objects with .pair_id, .clean and .inked
    (BenchmarkPair); restored is the aligned sequence of restored tiles.
    """
    if len(benchmark) != len(restored):
        raise InvalidInput(
            f"benchmark has {len(benchmark)} pairs but {len(restored)} restored tiles")
    report = QualityReport()
    for pair, rest in zip(benchmark, restored):
        clean = _pixels(pair.clean)
        inked = _pixels(pair.inked)
        rest_px = _pixels(rest)
        if rest_px.shape != clean.shape:
            raise InvalidInput(
                f"restored tile {pair.pair_id} shape {rest_px.shape} != clean {clean.shape}")
        report.rows.append({
            "tile_id": pair.pair_id,
            "psnr_inked": psnr(clean, inked),
            "psnr_restored": psnr(clean, rest_px),
            "ssim_inked": ssim(clean, inked),
            "ssim_restored": ssim(clean, rest_px),
            "vif_inked": vif(clean, inked),
            "vif_restored": vif(clean, rest_px),
        })
    return report
