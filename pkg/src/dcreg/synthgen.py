"""Synthetic cell images with controlled partial objects and dot-annotation bias.

Each image is 128x128 and split into a 4x4 grid of 32x32 patches. Every patch
receives between 0 and 20 filled ellipses ("cells"). Pixel centers sit at
integer coordinates, so pixel ``i`` covers ``[i - 0.5, i + 0.5)`` and a dot is
the cell center rounded with ``floor(x + 0.5)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

IMAGE_SIZE = 128
PATCH_SIZE = 32
GRID = IMAGE_SIZE // PATCH_SIZE
MAX_PER_PATCH = 20
AXIS_RANGE = (2.0, 4.0)
FOREGROUND = 200
BACKGROUND = 20
ALLOWED_BIAS = (0, 1, 2, 4)
PRNG_ALGORITHM = "numpy.PCG64 seeded by SeedSequence([seed, split, index, stream])"
FORMAT_VERSION = 1

_SPLITS = {"train": 0, "test": 1}
_STREAM_GEOMETRY = 0
_STREAM_BIAS = 1
_SUPERSAMPLE = 4


@dataclass(frozen=True)
class CellSpec:
    center: tuple[float, float]  # (row, col)
    major_axis: float
    minor_axis: float
    angle: float  # radians, measured from the column axis toward the row axis

    def half_extent(self) -> tuple[float, float]:
        """Half height and half width of the rotated ellipse's bounding box."""
        a, b = self.major_axis / 2.0, self.minor_axis / 2.0
        c, s = np.cos(self.angle), np.sin(self.angle)
        return float(np.hypot(a * s, b * c)), float(np.hypot(a * c, b * s))


@dataclass
class SyntheticImage:
    pixels: np.ndarray  # (128, 128) uint8
    cells: list[CellSpec]
    dots_true: np.ndarray  # (T, 2) int64, (row, col)
    dots_biased: np.ndarray  # (T, 2) int64
    patch_counts_integer: np.ndarray  # (4, 4) int64
    partial_objects: bool = False


@dataclass(frozen=True)
class GenConfig:
    num_images: int = 200
    partial_objects: bool = False
    dot_bias_a: int = 0
    seed: int = 0
    # "two_point" draws the shift from {-a, +a}; "range" from the integers in [-a, a]
    bias_mode: str = "two_point"

    def __post_init__(self):
        if self.num_images < 1:
            raise ValueError(f"num_images must be positive, got {self.num_images}")
        if self.dot_bias_a not in ALLOWED_BIAS:
            raise ValueError(f"dot_bias_a must be one of {ALLOWED_BIAS}, got {self.dot_bias_a}")
        if self.bias_mode not in ("two_point", "range"):
            raise ValueError(f"unknown bias_mode {self.bias_mode!r}")


class PlacementError(RuntimeError):
    pass


def image_rng(seed: int, index: int, split: str = "train", stream: int = _STREAM_GEOMETRY):
    """Independent generator for one (seed, split, image, stream) tuple."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _SPLITS[split], int(index), stream])
    return np.random.Generator(np.random.PCG64(ss))


def _draw_cells(cfg: GenConfig, rng, max_retries: int) -> tuple[np.ndarray, list[CellSpec]]:
    counts = rng.integers(0, MAX_PER_PATCH + 1, size=(GRID, GRID))
    cells = []
    for pr in range(GRID):
        for pc in range(GRID):
            lo_r, lo_c = pr * PATCH_SIZE - 0.5, pc * PATCH_SIZE - 0.5
            for _ in range(int(counts[pr, pc])):
                # Same number of draws in both variants, so patch counts and
                # shapes coincide for a given seed; only the center mapping differs.
                axes = np.sort(rng.uniform(*AXIS_RANGE, size=2))[::-1]
                angle = rng.uniform(0.0, np.pi)
                u = rng.uniform(0.0, 1.0, size=2)
                cell = CellSpec((0.0, 0.0), float(axes[0]), float(axes[1]), float(angle))
                if cfg.partial_objects:
                    r = lo_r + u[0] * PATCH_SIZE
                    c = lo_c + u[1] * PATCH_SIZE
                else:
                    hr, hc = cell.half_extent()
                    r = lo_r + hr + u[0] * (PATCH_SIZE - 2 * hr)
                    c = lo_c + hc + u[1] * (PATCH_SIZE - 2 * hc)
                    for _attempt in range(max_retries):
                        if _inside(r, c, hr, hc, lo_r, lo_c):
                            break
                        # float edge case: resample inside the shrunken box
                        u = rng.uniform(0.0, 1.0, size=2)
                        r = lo_r + hr + u[0] * (PATCH_SIZE - 2 * hr)
                        c = lo_c + hc + u[1] * (PATCH_SIZE - 2 * hc)
                    else:
                        raise PlacementError(f"could not place cell in patch ({pr}, {pc})")
                # keep the rounded dot inside the patch
                r = min(r, lo_r + PATCH_SIZE - 1e-9)
                c = min(c, lo_c + PATCH_SIZE - 1e-9)
                cells.append(CellSpec((float(r), float(c)), cell.major_axis, cell.minor_axis, cell.angle))
    return counts.astype(np.int64), cells


def _inside(r, c, hr, hc, lo_r, lo_c) -> bool:
    return (r - hr >= lo_r and r + hr <= lo_r + PATCH_SIZE
            and c - hc >= lo_c and c + hc <= lo_c + PATCH_SIZE)


def render(cells: list[CellSpec], size: int = IMAGE_SIZE) -> np.ndarray:
    """Anti-aliased filled ellipses, coverage from 4x4 supersampling."""
    cover = np.zeros((size, size))
    offs = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE - 0.5
    for cell in cells:
        r0, c0 = cell.center
        hr, hc = cell.half_extent()
        rows = np.arange(max(int(np.floor(r0 - hr)), 0), min(int(np.ceil(r0 + hr)) + 1, size))
        cols = np.arange(max(int(np.floor(c0 - hc)), 0), min(int(np.ceil(c0 + hc)) + 1, size))
        if rows.size == 0 or cols.size == 0:
            continue
        sr = (rows[:, None] + offs[None, :]).ravel()
        sc = (cols[:, None] + offs[None, :]).ravel()
        dy = sr[:, None] - r0
        dx = sc[None, :] - c0
        cs, sn = np.cos(cell.angle), np.sin(cell.angle)
        u = (dx * cs + dy * sn) / (cell.major_axis / 2.0)
        v = (-dx * sn + dy * cs) / (cell.minor_axis / 2.0)
        inside = (u * u + v * v) <= 1.0
        cov = inside.reshape(rows.size, _SUPERSAMPLE, cols.size, _SUPERSAMPLE).mean(axis=(1, 3))
        cover[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] += cov
    cover = np.minimum(cover, 1.0)
    return np.rint(BACKGROUND + (FOREGROUND - BACKGROUND) * cover).astype(np.uint8)


def bias_dots(dots_true: np.ndarray, a: int, rng, mode: str = "two_point") -> np.ndarray:
    """Shift each coordinate independently by a random offset, clamped to the image."""
    if a not in ALLOWED_BIAS:
        raise ValueError(f"dot bias must be one of {ALLOWED_BIAS}, got {a}")
    dots = np.asarray(dots_true, dtype=np.int64).reshape(-1, 2)
    if a == 0:
        return dots.copy()
    if mode == "two_point":
        delta = np.where(rng.integers(0, 2, size=dots.shape) == 1, a, -a)
    elif mode == "range":
        delta = rng.integers(-a, a + 1, size=dots.shape)
    else:
        raise ValueError(f"unknown bias mode {mode!r}")
    return np.clip(dots + delta, 0, IMAGE_SIZE - 1)


def generate_image(cfg: GenConfig, index: int, split: str = "train", max_retries: int = 1000) -> SyntheticImage:
    rng = image_rng(cfg.seed, index, split, _STREAM_GEOMETRY)
    counts, cells = _draw_cells(cfg, rng, max_retries)
    dots = np.array([[np.floor(c.center[0] + 0.5), np.floor(c.center[1] + 0.5)] for c in cells],
                    dtype=np.int64).reshape(-1, 2)
    biased = bias_dots(dots, cfg.dot_bias_a, image_rng(cfg.seed, index, split, _STREAM_BIAS), cfg.bias_mode)
    return SyntheticImage(render(cells), cells, dots, biased, counts, cfg.partial_objects)


def generate_dataset(cfg: GenConfig, split: str = "train") -> list[SyntheticImage]:
    return [generate_image(cfg, i, split) for i in range(cfg.num_images)]


def crosses_patch_border(cell: CellSpec) -> bool:
    hr, hc = cell.half_extent()
    r, c = cell.center
    pr = int(np.floor((np.floor(r + 0.5)) / PATCH_SIZE))
    pc = int(np.floor((np.floor(c + 0.5)) / PATCH_SIZE))
    return not _inside(r, c, hr, hc, pr * PATCH_SIZE - 0.5, pc * PATCH_SIZE - 0.5)


# -- on-disk layout ---------------------------------------------------------

def write_pgm(path: str, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: expected 8-bit PGM, maxval={maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w).copy()


def annotation_record(img: SyntheticImage) -> dict:
    return {
        "cells": [{"center": list(c.center), "major_axis": c.major_axis,
                   "minor_axis": c.minor_axis, "angle": c.angle} for c in img.cells],
        "dots_true": img.dots_true.tolist(),
        "dots_biased": img.dots_biased.tolist(),
        "patch_counts_integer": img.patch_counts_integer.tolist(),
    }


def image_from_record(pixels: np.ndarray, rec: dict, partial: bool) -> SyntheticImage:
    cells = [CellSpec(tuple(c["center"]), c["major_axis"], c["minor_axis"], c["angle"]) for c in rec["cells"]]
    return SyntheticImage(
        pixels,
        cells,
        np.asarray(rec["dots_true"], dtype=np.int64).reshape(-1, 2),
        np.asarray(rec["dots_biased"], dtype=np.int64).reshape(-1, 2),
        np.asarray(rec["patch_counts_integer"], dtype=np.int64),
        partial,
    )


def write_dataset(images: list[SyntheticImage], dir_path: str, cfg: GenConfig, extra_meta: dict | None = None) -> dict:
    """Write images/, annotations.jsonl and meta.json; returns the manifest."""
    img_dir = os.path.join(dir_path, "images")
    path = img_dir
    try:
        os.makedirs(img_dir, exist_ok=True)
        files = []
        for i, img in enumerate(images):
            path = os.path.join(img_dir, f"{i:05d}.pgm")
            write_pgm(path, img.pixels)
            files.append(os.path.relpath(path, dir_path))
        path = os.path.join(dir_path, "annotations.jsonl")
        with open(path, "w") as f:
            for img in images:
                f.write(json.dumps(annotation_record(img)) + "\n")
        meta = {
            "format_version": FORMAT_VERSION,
            "gen_config": asdict(cfg),
            "prng": PRNG_ALGORITHM,
            "image_size": IMAGE_SIZE,
            "patch_size": PATCH_SIZE,
            "num_images": len(images),
            "pixel_values": {"foreground": FOREGROUND, "background": BACKGROUND},
        }
        if extra_meta:
            meta.update(extra_meta)
        path = os.path.join(dir_path, "meta.json")
        with open(path, "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
    except OSError as exc:
        raise OSError(f"failed writing dataset at {path}: {exc}") from exc
    return {"meta": meta, "images": files}


def read_dataset(dir_path: str) -> tuple[list[SyntheticImage], dict]:
    with open(os.path.join(dir_path, "meta.json")) as f:
        meta = json.load(f)
    partial = bool(meta["gen_config"]["partial_objects"])
    images = []
    with open(os.path.join(dir_path, "annotations.jsonl")) as f:
        for i, line in enumerate(f):
            pixels = read_pgm(os.path.join(dir_path, "images", f"{i:05d}.pgm"))
            images.append(image_from_record(pixels, json.loads(line), partial))
    return images, meta
