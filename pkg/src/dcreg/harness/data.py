"""Dataset directories: <root>/{train,test}/ with images, annotations, meta and countmaps."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .. import groundtruth as gt
from .. import synthgen as sg
from .config import DataConfig


@dataclass
class Split:
    images: np.ndarray  # (N, 128, 128) float64 in [0, 1]
    observed: np.ndarray  # (N, 4, 4)
    true: np.ndarray  # (N, 4, 4)


def gen_config(d: DataConfig, num_images: int) -> sg.GenConfig:
    return sg.GenConfig(num_images=num_images, partial_objects=d.partial_objects,
                        dot_bias_a=d.dot_bias, seed=d.seed, bias_mode=d.bias_mode)


def write_split(d: DataConfig, root: str, split: str, num_images: int) -> str:
    out = os.path.join(root, split)
    cfg = gen_config(d, num_images)
    images = [sg.generate_image(cfg, i, split) for i in range(num_images)]
    sg.write_dataset(images, out, cfg, extra_meta={
        "split": split, "sigma_choice": d.sigma, "use_biased_dots": d.use_biased_dots,
        "data_config": asdict(d)})
    gt.write_countmaps(images, out, d.sigma, d.use_biased_dots)
    return out


def generate(d: DataConfig, root: str) -> None:
    write_split(d, root, "train", d.num_train)
    if d.num_test:
        write_split(d, root, "test", d.num_test)


def is_complete(root: str, d: DataConfig | None = None) -> bool:
    meta_path = os.path.join(root, "train", "meta.json")
    if not os.path.exists(meta_path):
        return False
    if d is None:
        return True
    with open(meta_path) as f:
        return json.load(f).get("data_config") == asdict(d)


def ensure(d: DataConfig, root: str) -> str:
    if not is_complete(root, d):
        generate(d, root)
    return root


def load_split(root: str, split: str = "train") -> Split:
    path = os.path.join(root, split)
    if not os.path.exists(os.path.join(path, "meta.json")):
        raise FileNotFoundError(f"no dataset split at {path}")
    with open(os.path.join(path, "meta.json")) as f:
        n = json.load(f)["num_images"]
    images = np.empty((n, sg.IMAGE_SIZE, sg.IMAGE_SIZE))
    observed = np.empty((n, sg.GRID, sg.GRID))
    true = np.empty((n, sg.GRID, sg.GRID))
    for i in range(n):
        images[i] = sg.read_pgm(os.path.join(path, "images", f"{i:05d}.pgm")) / 255.0
        pair = gt.read_countmap(os.path.join(path, "countmaps", f"{i:05d}.json"))
        observed[i] = pair.observed.values
        true[i] = pair.true_map.values
    return Split(images, observed, true)


def read_meta(root: str, split: str = "train") -> dict:
    with open(os.path.join(root, split, "meta.json")) as f:
        return json.load(f)
