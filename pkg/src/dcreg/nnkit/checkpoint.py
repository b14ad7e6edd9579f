"""model.json manifest + model.bin (magic header, then little-endian float64 in manifest order)."""

from __future__ import annotations

import json
import os

import numpy as np

from .model import CountNet, ModelSpec

MAGIC = b"DCRGNN\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: CountNet, path: str, extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "<f8",
        "spec": model.spec.to_dict(),
        "params": [{"name": k, "shape": list(p.data.shape)} for k, p in model.params.items()],
    }
    if extra:
        manifest["extra"] = extra
    with open(os.path.join(path, "model.bin"), "wb") as f:
        f.write(MAGIC)
        for p in model.params.values():
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    with open(os.path.join(path, "model.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_checkpoint(path: str) -> tuple[CountNet, dict]:
    with open(os.path.join(path, "model.json")) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    with open(os.path.join(path, "model.bin"), "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("model.bin: bad magic bytes")
    flat = np.frombuffer(blob[len(MAGIC):], dtype="<f8")
    expected = sum(int(np.prod(p["shape"])) for p in manifest["params"])
    if flat.size * 8 != len(blob) - len(MAGIC) or flat.size != expected:
        raise CheckpointError(f"model.bin holds {len(blob) - len(MAGIC)} bytes, manifest expects {expected * 8}")
    model = CountNet(ModelSpec.from_dict(manifest["spec"]))
    names = [p["name"] for p in manifest["params"]]
    if names != list(model.params):
        raise CheckpointError("parameter names in manifest do not match the operator stack")
    off = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        if shape != model.params[entry["name"]].data.shape:
            raise CheckpointError(f"{entry['name']}: shape {shape} does not match the operator stack")
        n = int(np.prod(shape))
        model.params[entry["name"]].data = flat[off:off + n].reshape(shape).astype(np.float64)
        off += n
    return model, manifest.get("extra", {})
