from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_STREAM = 0x6E6E  # keeps weight init independent of dataset streams


def default_layers(n_out: int, channels=(8, 16, 32), patch_cells: int = 4) -> list[dict]:
    layers = []
    c_in = 1
    for c in channels:
        layers += [{"op": "conv3x3", "in": c_in, "out": c}, {"op": "relu"}, {"op": "maxpool2"}]
        c_in = c
    layers += [{"op": "patch_mean", "size": patch_cells}, {"op": "affine", "in": c_in, "out": n_out}]
    return layers


@dataclass
class ModelSpec:
    head: str = "count"  # "count" or "logits"
    n_classes: int = 1
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if self.head not in ("count", "logits"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "count":
            self.n_classes = 1
        if not self.layers:
            self.layers = default_layers(self.n_classes)
            if self.head == "count":
                self.layers.append({"op": "softplus"})

    def to_dict(self) -> dict:
        return {"head": self.head, "n_classes": self.n_classes, "layers": self.layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["head"], d["n_classes"], [dict(layer) for layer in d["layers"]])


class CountNet:
    """Patch-count network: conv/relu/pool stack, per-patch mean, 1x1 head.

    For a 128x128 input the output is (B, 4, 4) counts or (B, 4, 4, K) logits.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, zero_head: bool = False):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), INIT_STREAM])))
        for i, layer in enumerate(spec.layers):
            op = layer["op"]
            if op == "conv3x3":
                fan_in = layer["in"] * 9
                bound = np.sqrt(6.0 / fan_in)
                self._add(f"{i}.weight", rng.uniform(-bound, bound, (layer["out"], layer["in"], 3, 3)))
                self._add(f"{i}.bias", np.zeros(layer["out"]))
            elif op == "affine":
                bound = np.sqrt(3.0 / layer["in"])
                w = rng.uniform(-bound, bound, (layer["out"], layer["in"]))
                self._add(f"{i}.weight", np.zeros_like(w) if zero_head else w)
                self._add(f"{i}.bias", np.zeros(layer["out"]))
            elif op not in ("relu", "maxpool2", "patch_mean", "softplus"):
                raise ValueError(f"unknown layer op {op!r}")

    def _add(self, name, value):
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward(self, images) -> Tensor:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (B, 1, H, W) or (B, H, W) input, got {x.shape}")
        h = Tensor(x)
        for i, layer in enumerate(self.spec.layers):
            op = layer["op"]
            if op == "conv3x3":
                h = T.conv3x3(h, self.params[f"{i}.weight"], self.params[f"{i}.bias"])
            elif op == "relu":
                h = T.relu(h)
            elif op == "maxpool2":
                h = T.maxpool2(h)
            elif op == "patch_mean":
                h = T.patch_mean(h, layer["size"])
            elif op == "affine":
                h = T.affine(h, self.params[f"{i}.weight"], self.params[f"{i}.bias"])
            elif op == "softplus":
                h = T.softplus(h)
            if not np.all(np.isfinite(h.data)):
                raise FloatingPointError(f"non-finite activation after layer {i} ({op}), "
                                         f"{int(np.sum(~np.isfinite(h.data)))} bad values")
        if self.spec.head == "count":
            B, _, hc, wc = h.shape
            return T.reshape(h, (B, hc, wc))
        return T.transpose(h, (0, 2, 3, 1))

    def __call__(self, images) -> Tensor:
        return self.forward(images)

    def backward(self, out: Tensor, loss_grad) -> dict[str, np.ndarray]:
        """Push dLoss/dOutput through the recorded graph; returns parameter gradients."""
        if out._vjp is None:
            raise RuntimeError("no recorded forward pass for this output")
        self.zero_grad()
        out.backward(loss_grad)
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}

    def predict(self, images, batch_size: int = 50) -> np.ndarray:
        outs = [self.forward(images[i:i + batch_size]).data for i in range(0, len(images), batch_size)]
        return np.concatenate(outs)
