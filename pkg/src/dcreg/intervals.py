"""Partition of [0, V_max] into {0}, (V_0, V_1], ..., (V_{N-1}, V_N]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS0 = 0.05


@dataclass(frozen=True)
class IntervalPartition:
    boundaries: np.ndarray  # V_0 = 0 < V_1 < ... < V_N = V_max
    scheme: str
    representatives: np.ndarray  # one value per interval, N + 1 entries
    eps0: float = DEFAULT_EPS0

    @property
    def n(self) -> int:
        return len(self.boundaries) - 1

    @property
    def v_max(self) -> float:
        return float(self.boundaries[-1])

    def index_of(self, c):
        return index_of(c, self)

    def bounds(self, i: int) -> tuple[float, float]:
        return interval_bounds(i, self)

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "N": self.n, "V_max": self.v_max, "eps0": self.eps0,
                "boundaries": self.boundaries.tolist(), "representatives": self.representatives.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalPartition":
        if "boundaries" in d:
            b = np.asarray(d["boundaries"], dtype=np.float64)
        else:
            b = _boundaries(d["scheme"], d["N"], d["V_max"], d.get("eps0", DEFAULT_EPS0))
        return cls(b, d["scheme"], np.asarray(d["representatives"], dtype=np.float64),
                   d.get("eps0", DEFAULT_EPS0))


def _boundaries(scheme: str, n: int, v_max: float, eps0: float) -> np.ndarray:
    if n < 1:
        raise ValueError(f"need at least one interval above zero, got N={n}")
    if not v_max > 0:
        raise ValueError(f"V_max must be positive, got {v_max}")
    if scheme == "linear":
        return v_max * np.arange(n + 1, dtype=np.float64) / n
    if scheme == "log":
        if n == 1:
            return np.array([0.0, float(v_max)])
        if not eps0 < v_max:
            raise ValueError(f"eps0={eps0} must be below V_max={v_max}")
        i = np.arange(1, n + 1, dtype=np.float64)
        inner = np.exp(np.log(eps0) + (i - 1) / (n - 1) * (np.log(v_max) - np.log(eps0)))
        inner[-1] = v_max
        return np.concatenate([[0.0], inner])
    raise ValueError(f"unknown interval scheme {scheme!r}")


def build_partition(scheme: str, n: int, v_max: float, training_counts=None,
                    eps0: float = DEFAULT_EPS0) -> IntervalPartition:
    """Boundaries plus the value each interval maps back to.

    Representatives are the median of the training counts inside each interval;
    empty intervals fall back to the midpoint (geometric midpoint for log spacing).
    """
    b = _boundaries(scheme, n, float(v_max), float(eps0))
    lo, hi = b[:-1], b[1:]
    if scheme == "log":
        mid = np.sqrt(lo * hi)
        mid[0] = 0.5 * hi[0]
    else:
        mid = 0.5 * (lo + hi)
    reps = np.concatenate([[0.0], mid])
    if training_counts is not None:
        counts = np.asarray(training_counts, dtype=np.float64).ravel()
        idx = np.clip(np.searchsorted(b, counts, side="left"), 0, n)
        # clamped counts above V_max would drag the median outside the interval
        ok = counts <= b[-1]
        for i in range(1, n + 1):
            members = counts[(idx == i) & ok]
            if members.size:
                reps[i] = np.median(members)
    return IntervalPartition(b, scheme, reps, float(eps0))


def index_of(c, p: IntervalPartition):
    """0 for c == 0, else the i with V_{i-1} < c <= V_i; counts above V_max map to N."""
    arr = np.asarray(c, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("counts must be non-negative")
    idx = np.minimum(np.searchsorted(p.boundaries, arr, side="left"), p.n)
    return int(idx) if idx.ndim == 0 else idx


def interval_bounds(i: int, p: IntervalPartition) -> tuple[float, float]:
    if not 0 <= i <= p.n:
        raise IndexError(f"interval index {i} outside [0, {p.n}]")
    if i == 0:
        return 0.0, 0.0
    return float(p.boundaries[i - 1]), float(p.boundaries[i])


def contains(i: int, p: IntervalPartition, c: float) -> bool:
    lo, hi = interval_bounds(i, p)
    return c == 0.0 if i == 0 else lo < c <= hi
