"""Image-level MAE/RMSE and per-count-bin local error."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_BINS = ((0, 5), (6, 10), (11, 15), (16, 20))


@dataclass
class EvalSummary:
    mae: float
    rmse: float
    n_images: int
    per_bin: list = field(default_factory=list)  # (label, mean abs error or None, n_patches)

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "n_images": self.n_images,
                "per_bin": [list(b) for b in self.per_bin]}


def _stack(maps) -> np.ndarray:
    return np.stack([np.asarray(getattr(m, "values", m), dtype=np.float64) for m in maps])


def global_mae_mse(preds, gts) -> tuple[float, float]:
    """MAE and RMSE between summed local counts, one global count per image."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    P, G = _stack(preds), _stack(gts)
    err = G.reshape(len(G), -1).sum(axis=1) - P.reshape(len(P), -1).sum(axis=1)
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def bin_label(b) -> str:
    return f"{b[0]}-{b[1]}"


def assign_bins(true_counts, bins=DEFAULT_BINS) -> np.ndarray:
    """Bin index for each count: integer-valued bins cover [lo - 0.5, hi + 0.5).

    The first bin starts at -inf and the last ends at +inf, so every patch lands
    in exactly one bin.
    """
    c = np.asarray(true_counts, dtype=np.float64)
    edges = np.array([b[1] + 0.5 for b in bins[:-1]])
    return np.searchsorted(edges, c, side="right")


def binned_local_error(preds, gts_true, bins=DEFAULT_BINS) -> list[tuple[str, float | None, int]]:
    if len(preds) != len(gts_true):
        raise ValueError(f"{len(preds)} predictions for {len(gts_true)} ground truths")
    P, G = _stack(preds).ravel(), _stack(gts_true).ravel()
    idx = assign_bins(G, bins)
    err = np.abs(G - P)
    table = []
    for i, b in enumerate(bins):
        sel = idx == i
        n = int(sel.sum())
        table.append((bin_label(b), float(err[sel].mean()) if n else None, n))
    return table


def evaluate(preds, gts, gts_true=None, bins=DEFAULT_BINS) -> EvalSummary:
    mae, rmse = global_mae_mse(preds, gts)
    per_bin = binned_local_error(preds, gts if gts_true is None else gts_true, bins)
    return EvalSummary(mae, rmse, len(preds), per_bin)
