"""Tape-free float64 reference implementations of every loss.

These mirror :mod:`demix.losses` term by term (same epsilons, same
reductions) but are written directly in numpy at 64-bit precision with no
autodiff involvement, so they serve as an independent check of the tape
path's forward values.
"""

from __future__ import annotations

import numpy as np

KL_EPS = 1e-8
DIST_EPS = 1e-12


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def per_sample_ce(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), y]


def gce(probs: np.ndarray, y: np.ndarray, q: float) -> float:
    p_y = np.asarray(probs, dtype=np.float64)[np.arange(len(y)), y]
    return float(np.mean((1.0 - p_y**q) / q))


def debias_weight(ce_d: np.ndarray, ce_b: np.ndarray) -> np.ndarray:
    ce_d = np.asarray(ce_d, dtype=np.float64)
    ce_b = np.asarray(ce_b, dtype=np.float64)
    denom = ce_d + ce_b
    return np.where(denom > 0.0, ce_b / np.where(denom > 0.0, denom, 1.0), 0.5)


def loss_bias(y_b_logits: list[np.ndarray], y: np.ndarray, q: float) -> float:
    return float(sum(gce(softmax(lg, axis=1), y, q) for lg in y_b_logits))


def loss_debias(y_d_logits: list[np.ndarray], y_b_logits: list[np.ndarray],
                y: np.ndarray) -> tuple[float, np.ndarray]:
    total = 0.0
    weights = []
    for yd, yb in zip(y_d_logits, y_b_logits):
        ce_d = per_sample_ce(yd, y)
        ce_b = per_sample_ce(yb, y)
        w = debias_weight(ce_d, ce_b)
        weights.append(w)
        total += float(np.mean(w * ce_d))
    return total, np.stack(weights)


def loss_div(y_b_logits: list[np.ndarray]) -> float:
    if len(y_b_logits) < 2:
        return 0.0
    total = 0.0
    prev = softmax(y_b_logits[0], axis=1)
    for lg in y_b_logits[1:]:
        cur = softmax(lg, axis=1)
        ratio = np.maximum(cur, KL_EPS) / np.maximum(prev, KL_EPS)
        kl = (cur * np.log(ratio)).sum(axis=1)
        total += float(np.mean(np.exp(-kl)))
        prev = cur
    return total


def _dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a - b) ** 2).sum(axis=-1) + DIST_EPS)


def loss_con(anchor_logits: list[np.ndarray], pos_logits: list[np.ndarray],
             neg_logits: list[np.ndarray], tau: float) -> float:
    total = 0.0
    for ya, yp, yn in zip(anchor_logits, pos_logits, neg_logits):
        k, c = ya.shape
        pa = softmax(ya, axis=1)
        pp = softmax(yp, axis=1)
        d_pos = _dist(pa, pp)
        yn = np.asarray(yn, dtype=np.float64).reshape(k, -1, c)
        if yn.shape[1]:
            pn = softmax(yn, axis=-1)
            s_neg = np.exp(-_dist(pa[:, None, :], pn) / tau).sum(axis=1)
        else:
            s_neg = np.zeros(k)
        term = np.log(np.exp(-d_pos / tau) + s_neg) + d_pos / tau
        total += float(np.mean(term))
    return total


def loss_gate(y_mixed: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(per_sample_ce(y_mixed, y)))


def total_loss(phase: str, l_bias: float, l_debias: float, l_div: float,
               l_con: float, l_gate: float, alpha: float, beta: float) -> float:
    l_cls = alpha * l_debias + l_bias
    total = l_cls + l_gate + l_div
    if phase == "counterfactual":
        total += beta * l_con
    return total
