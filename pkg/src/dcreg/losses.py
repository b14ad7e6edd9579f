"""Loss family for local count models.

Every loss takes a ground-truth count map ``C`` and a prediction for a single
image and returns a :class:`LossReport` holding the value and the gradient with
respect to the prediction. Masks and mask-count denominators are constants
under differentiation. ``sign(0) = 0`` throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intervals import IntervalPartition, index_of

MAIN_LOSSES = ("reg", "cls", "dc")
GC_LOSSES = ("none", "c", "bias0", "biasLambda")


@dataclass
class ErrorMap:
    E: np.ndarray

    @property
    def e(self) -> float:
        return float(self.E.sum())

    @classmethod
    def of(cls, C, Chat) -> "ErrorMap":
        C, Chat = _pair(C, Chat)
        return cls(C - Chat)


@dataclass
class LossReport:
    value: float
    grad: np.ndarray
    active_mask: np.ndarray | None = None


def _pair(C, Chat):
    C = np.asarray(getattr(C, "values", C), dtype=np.float64)
    Chat = np.asarray(getattr(Chat, "values", Chat), dtype=np.float64)
    if C.shape != Chat.shape:
        raise ValueError(f"shape mismatch: ground truth {C.shape} vs prediction {Chat.shape}")
    return C, Chat


def _masked_l1(E: np.ndarray, mask: np.ndarray) -> LossReport:
    k = int(mask.sum())
    if k == 0:
        return LossReport(0.0, np.zeros_like(E), mask)
    value = float(np.abs(E[mask]).sum() / k)
    grad = np.where(mask, -np.sign(E) / k, 0.0)
    return LossReport(value, grad, mask)


def l_reg(C, Chat) -> LossReport:
    C, Chat = _pair(C, Chat)
    return _masked_l1(C - Chat, np.ones(C.shape, dtype=bool))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def l_cls(C, logits, p: IntervalPartition) -> LossReport:
    """Softmax cross-entropy against interval indices; logits are (H_c, W_c, N+1)."""
    C = np.asarray(getattr(C, "values", C), dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != C.shape + (p.n + 1,):
        raise ValueError(f"logits shape {logits.shape} does not match {C.shape} x {p.n + 1} classes")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    target = index_of(C, p)
    logp = _log_softmax(logits)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, np.asarray(target)[..., None], 1.0, axis=-1)
    n = C.size
    value = float(-(logp * onehot).sum() / n)
    grad = (np.exp(logp) - onehot) / n
    return LossReport(value, grad, np.ones(C.shape, dtype=bool))


def classify_to_counts(logits, p: IntervalPartition) -> np.ndarray:
    """Argmax class (lowest index on ties) mapped to its representative count."""
    return p.representatives[np.argmax(np.asarray(logits), axis=-1)]


def in_gt_interval(C: np.ndarray, Chat: np.ndarray, p: IntervalPartition) -> np.ndarray:
    G = index_of(C, p)
    b = p.boundaries
    lo = b[np.maximum(G - 1, 0)]
    hi = b[G]
    return np.where(G == 0, Chat == 0.0, (Chat > lo) & (Chat <= hi))


def l_dc(C, Chat, p: IntervalPartition) -> LossReport:
    """L1 over patches whose prediction falls outside the ground-truth interval."""
    C, Chat = _pair(C, Chat)
    return _masked_l1(C - Chat, ~in_gt_interval(C, Chat, p))


def l_c(C, Chat) -> LossReport:
    C, Chat = _pair(C, Chat)
    n = C.size
    e = float((C - Chat).sum())
    return LossReport(abs(e) / n, np.full(C.shape, -np.sign(e) / n), np.ones(C.shape, dtype=bool))


def l_bias0(C, Chat) -> LossReport:
    """L1 over patches whose error has the same sign as the global error."""
    C, Chat = _pair(C, Chat)
    E = C - Chat
    return _masked_l1(E, np.sign(E.sum()) * E > 0)


def select_lambda(E) -> tuple[float, np.ndarray]:
    """Threshold keeping the largest same-sign errors that cover the net error |e|.

    Same-sign errors are sorted descending; the selection is the shortest prefix
    whose sum reaches |e| and lambda is its last element. Everything at or above
    lambda is kept.
    """
    E = np.asarray(getattr(E, "E", E), dtype=np.float64)
    e = E.sum()
    if e == 0:
        return float("inf"), np.zeros(E.shape, dtype=bool)
    signed = np.sign(e) * E
    same = signed > 0
    vals = np.sort(signed[same])[::-1]
    reached = np.nonzero(np.cumsum(vals) >= abs(e))[0]
    lam = vals[reached[0]] if reached.size else vals[-1]
    return float(lam), same & (signed >= lam)


def l_bias_lambda(C, Chat) -> LossReport:
    C, Chat = _pair(C, Chat)
    E = C - Chat
    _, mask = select_lambda(E)
    return _masked_l1(E, mask)


_GC = {"c": l_c, "bias0": l_bias0, "biasLambda": l_bias_lambda}


def gc_loss(name: str, C, Chat) -> LossReport:
    if name not in _GC:
        raise ValueError(f"unknown global count loss {name!r}; expected one of {tuple(_GC)}")
    return _GC[name](C, Chat)


def main_loss(name: str, C, pred, p: IntervalPartition | None = None) -> LossReport:
    if name == "reg":
        return l_reg(C, pred)
    if name in ("cls", "dc") and p is None:
        raise ValueError(f"loss {name!r} needs an interval partition")
    if name == "cls":
        return l_cls(C, pred, p)
    if name == "dc":
        return l_dc(C, pred, p)
    raise ValueError(f"unknown main loss {name!r}; expected one of {MAIN_LOSSES}")


def combine(main: str, gc: str, w_gc: float, C, pred, p: IntervalPartition | None = None) -> LossReport:
    """main + w_gc * gc, gradients summed entrywise."""
    if gc != "none" and main == "cls":
        raise ValueError("a global count loss needs a scalar count head, not classification logits")
    if w_gc < 0:
        raise ValueError(f"w_gc must be non-negative, got {w_gc}")
    rep = main_loss(main, C, pred, p)
    if gc == "none":
        return rep
    g = gc_loss(gc, C, pred)
    return LossReport(rep.value + w_gc * g.value, rep.grad + w_gc * g.grad, rep.active_mask)


def batch_loss(main: str, gc: str, w_gc: float, C_batch, pred_batch,
               p: IntervalPartition | None = None) -> LossReport:
    """Per-image loss averaged over the batch; grad has the batch's shape."""
    B = len(C_batch)
    grads = np.empty(np.shape(pred_batch))
    total = 0.0
    for b in range(B):
        rep = combine(main, gc, w_gc, C_batch[b], pred_batch[b], p)
        total += rep.value
        grads[b] = rep.grad / B
    return LossReport(total / B, grads)
