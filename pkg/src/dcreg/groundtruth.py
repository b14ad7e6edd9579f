"""Dot annotations -> density maps -> local count maps."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .synthgen import IMAGE_SIZE, PATCH_SIZE, CellSpec, SyntheticImage

SIGMA_CHOICES = (0, 3, 6, "gt")


@dataclass
class CountMap:
    values: np.ndarray
    patch_h: int = PATCH_SIZE
    patch_w: int = PATCH_SIZE


@dataclass
class GroundTruthPair:
    observed: CountMap
    true_map: CountMap

    @property
    def error(self) -> np.ndarray:
        return self.observed.values - self.true_map.values


def matched_sigma(cell: CellSpec) -> float:
    # 4*sigma equals the mean full axis length of the cell
    return (cell.major_axis + cell.minor_axis) / 8.0


def window_size(sigma: float) -> int:
    w = int(np.floor(4.0 * sigma + 0.5))
    if w % 2 == 0:
        w += 1
    return max(w, 1)


@lru_cache(maxsize=256)
def _kernel_cached(sigma: float) -> np.ndarray:
    w = window_size(sigma)
    if sigma <= 0 or w == 1:
        return np.ones((1, 1))
    r = (w - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Gaussian sampled at pixel centers over a round(4*sigma) odd window, unit sum."""
    return _kernel_cached(float(sigma)).copy()


def make_density(dots, sigma, cell_specs=None, shape=(IMAGE_SIZE, IMAGE_SIZE)) -> np.ndarray:
    """Stamp a normalized kernel on every dot; mass falling outside the image is dropped.

    ``sigma`` is a number (0 gives unit impulses) or ``"gt"``/``"matched"`` for a
    per-dot sigma taken from ``cell_specs``.
    """
    dots = np.asarray(dots, dtype=np.int64).reshape(-1, 2)
    h, w = shape
    bad = np.nonzero((dots[:, 0] < 0) | (dots[:, 0] >= h) | (dots[:, 1] < 0) | (dots[:, 1] >= w))[0]
    if bad.size:
        raise ValueError(f"dot {int(bad[0])} at {tuple(dots[bad[0]])} lies outside the {h}x{w} image")
    matched = isinstance(sigma, str)
    if matched:
        if sigma not in ("gt", "matched"):
            raise ValueError(f"unknown sigma policy {sigma!r}")
        if cell_specs is None or len(cell_specs) != len(dots):
            raise ValueError("matched kernels need one CellSpec per dot")
    D = np.zeros(shape)
    for t, (r, c) in enumerate(dots):
        s = matched_sigma(cell_specs[t]) if matched else float(sigma)
        k = _kernel_cached(s)
        rad = k.shape[0] // 2
        r0, r1 = max(r - rad, 0), min(r + rad + 1, h)
        c0, c1 = max(c - rad, 0), min(c + rad + 1, w)
        D[r0:r1, c0:c1] += k[r0 - (r - rad):r1 - (r - rad), c0 - (c - rad):c1 - (c - rad)]
    return D


def integrate_counts(D: np.ndarray, patch_h: int = PATCH_SIZE, patch_w: int = PATCH_SIZE) -> CountMap:
    D = np.asarray(D, dtype=np.float64)
    H, W = D.shape
    if H % patch_h or W % patch_w:
        raise ValueError(f"density shape {D.shape} not divisible by patch {patch_h}x{patch_w}")
    C = D.reshape(H // patch_h, patch_h, W // patch_w, patch_w).sum(axis=(1, 3))
    return CountMap(C, patch_h, patch_w)


def make_gt_pair(img: SyntheticImage, sigma_choice, use_biased_dots: bool) -> GroundTruthPair:
    """Observed count map for the chosen kernel and dots, plus the reference map.

    The reference is the size-matched density on centered dots for images with
    partial objects, and the integer per-patch cell counts otherwise.
    """
    if sigma_choice not in SIGMA_CHOICES:
        raise ValueError(f"sigma_choice must be one of {SIGMA_CHOICES}, got {sigma_choice!r}")
    dots = img.dots_biased if use_biased_dots else img.dots_true
    observed = integrate_counts(make_density(dots, sigma_choice, img.cells))
    if img.partial_objects:
        true_map = integrate_counts(make_density(img.dots_true, "gt", img.cells))
    else:
        true_map = CountMap(img.patch_counts_integer.astype(np.float64))
    return GroundTruthPair(observed, true_map)


def write_countmap(path: str, pair: GroundTruthPair, sigma_choice, use_biased_dots: bool) -> None:
    with open(path, "w") as f:
        json.dump({"observed": pair.observed.values.tolist(), "true": pair.true_map.values.tolist(),
                   "sigma_choice": sigma_choice, "use_biased_dots": bool(use_biased_dots)}, f)


def read_countmap(path: str) -> GroundTruthPair:
    with open(path) as f:
        rec = json.load(f)
    return GroundTruthPair(CountMap(np.asarray(rec["observed"], dtype=np.float64)),
                           CountMap(np.asarray(rec["true"], dtype=np.float64)))


def write_countmaps(images, dir_path: str, sigma_choice, use_biased_dots: bool) -> list[GroundTruthPair]:
    out = os.path.join(dir_path, "countmaps")
    os.makedirs(out, exist_ok=True)
    pairs = []
    for i, img in enumerate(images):
        pair = make_gt_pair(img, sigma_choice, use_biased_dots)
        write_countmap(os.path.join(out, f"{i:05d}.json"), pair, sigma_choice, use_biased_dots)
        pairs.append(pair)
    return pairs
