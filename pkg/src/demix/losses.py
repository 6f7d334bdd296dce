"""Training objectives for the two-encoder mixture-of-experts model.

Five terms combine into the phase total:

* ``loss_bias``: generalized cross-entropy on every bias head, pulling the
  bias branch toward easily fit (spurious) features.
* ``loss_debias``: per-sample weighted cross-entropy on the debiased heads,
  where the weight ``w = ce_b / (ce_d + ce_b)`` (both CEs detached) focuses
  training on samples the bias branch finds hard.
* ``loss_div``: ``exp(-KL)`` between consecutive bias-head distributions,
  pushing the experts to detect different biases.
* ``loss_con``: a contrastive term over counterfactual embedding
  recombinations (same target embedding with a swapped-in bias embedding is
  the positive; swapped target embeddings are the negatives).
* ``loss_gate``: cross-entropy of the gated mixture.

Per-expert terms sum over experts and average over the batch.  Every
function here has a float64 tape-free mirror in :mod:`demix.oracle`.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import tensor as T
from .tensor import Tensor

KL_EPS = 1e-8
PROB_FLOOR = 1e-12  # keeps pow/log gradients finite at saturated softmax


@dataclasses.dataclass(frozen=True)
class TrainHyper:
    # weight on L_debias, one value per phase (initial, counterfactual)
    alpha: tuple[float, float] = (0.2, 2.0)
    beta: float = 4.0       # weight on L_con in the counterfactual phase
    q: float = 0.7          # GCE exponent
    tau: float = 0.1        # contrastive temperature
    K: int = 16             # counterfactual anchors per batch
    P: int = 8              # negatives per anchor

    def __post_init__(self):
        a = self.alpha
        if isinstance(a, (int, float)):
            a = (float(a), float(a))
        object.__setattr__(self, "alpha", (float(a[0]), float(a[1])))
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.K < 2:
            raise ValueError(f"K must be at least 2, got {self.K}")
        if self.P < 0:
            raise ValueError(f"P must be nonnegative, got {self.P}")

    def alpha_for(self, phase: str) -> float:
        return self.alpha[0] if phase == "initial" else self.alpha[1]


@dataclasses.dataclass
class LossBundle:
    l_bias: float
    l_debias: float
    l_div: float
    l_con: float
    l_gate: float
    l_total: float
    w: np.ndarray  # (M, batch) per-sample debias weights

    def components(self) -> dict[str, float]:
        return {
            "l_bias": self.l_bias, "l_debias": self.l_debias, "l_div": self.l_div,
            "l_con": self.l_con, "l_gate": self.l_gate, "l_total": self.l_total,
        }


@dataclasses.dataclass
class CounterfactualBatch:
    pos_index: np.ndarray   # (K,) bias-embedding donor per anchor, never the anchor
    neg_indices: np.ndarray  # (K, P) target-embedding donors, distinct, never the anchor


def per_sample_ce(logits: Tensor, y: np.ndarray) -> Tensor:
    """Cross-entropy per sample, shape (N,)."""
    return T.neg(T.gather(T.log_softmax(logits, axis=1), y))


def gce(probs: Tensor, y: np.ndarray, q: float) -> Tensor:
    """Generalized cross-entropy (1 - p_y^q) / q, mean over the batch.

    Finite 1/q limit at p_y = 0 (the floor only guards the pow gradient).
    """
    p_y = T.clip_min(T.gather(probs, y), PROB_FLOOR)
    return T.tmean(T.div(T.sub(1.0, T.power(p_y, q)), q))


def debias_weight(ce_d: np.ndarray, ce_b: np.ndarray) -> np.ndarray:
    """w = ce_b / (ce_d + ce_b), with w = 0.5 when both vanish.

    Callers pass detached per-sample CE values; no gradient flows through w.
    """
    ce_d = np.asarray(ce_d, dtype=np.float64)
    ce_b = np.asarray(ce_b, dtype=np.float64)
    denom = ce_d + ce_b
    return np.where(denom > 0.0, ce_b / np.where(denom > 0.0, denom, 1.0), 0.5)


def loss_bias(y_b_logits: list[Tensor], y: np.ndarray, q: float) -> Tensor:
    total = None
    for logits in y_b_logits:
        term = gce(T.softmax(logits, axis=1), y, q)
        total = term if total is None else T.add(total, term)
    return total


def loss_debias(y_d_logits: list[Tensor], y_b_logits: list[Tensor], y: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Weighted CE over the debiased heads; returns (loss, w) with w (M, N)."""
    total = None
    weights = []
    for yd, yb in zip(y_d_logits, y_b_logits):
        ce_d = per_sample_ce(yd, y)
        ce_b = per_sample_ce(yb, y)
        w = debias_weight(T.detach(ce_d).numpy(), T.detach(ce_b).numpy())
        weights.append(w)
        term = T.tmean(T.mul(Tensor(w.astype(yd.dtype)), ce_d))
        total = term if total is None else T.add(total, term)
    return total, np.stack(weights)


def loss_div(y_b_logits: list[Tensor]) -> Tensor:
    """Sum over consecutive expert pairs of mean exp(-KL(p_i || p_{i-1}))."""
    if len(y_b_logits) < 2:
        return Tensor(np.zeros((), dtype=y_b_logits[0].dtype if y_b_logits else None))
    total = None
    prev = T.softmax(y_b_logits[0], axis=1)
    for logits in y_b_logits[1:]:
        cur = T.softmax(logits, axis=1)
        ratio = T.div(T.clip_min(cur, KL_EPS), T.clip_min(prev, KL_EPS))
        kl = T.tsum(T.mul(cur, T.log(ratio)), axis=1)
        term = T.tmean(T.exp(T.neg(kl)))
        total = term if total is None else T.add(total, term)
        prev = cur
    return total


def build_counterfactuals(k: int, p: int, rng: np.random.Generator) -> CounterfactualBatch:
    """Sample recombination indices for K anchors: one positive bias donor and
    P distinct negative target donors per anchor, none equal to the anchor."""
    if k < 2:
        raise ValueError(f"counterfactual batch needs K >= 2, got {k}")
    p = min(p, k - 1)
    pos = np.empty(k, dtype=np.int64)
    neg = np.empty((k, p), dtype=np.int64)
    for j in range(k):
        pos[j] = (j + 1 + rng.integers(k - 1)) % k
        others = np.concatenate([np.arange(j), np.arange(j + 1, k)])
        neg[j] = rng.choice(others, size=p, replace=False)
    return CounterfactualBatch(pos_index=pos, neg_indices=neg)


def loss_con(anchor_logits: list[Tensor], pos_logits: list[Tensor],
             neg_logits: list[Tensor], tau: float) -> Tensor:
    """Contrastive pull toward positives, push from negatives.

    Distances are Euclidean between softmax probability vectors, divided by
    the temperature inside the exponents.  ``neg_logits[i]`` is (K, P, C) or
    (K*P, C); P may be zero, in which case the term vanishes.
    """
    total = None
    for ya, yp, yn in zip(anchor_logits, pos_logits, neg_logits):
        k, c = ya.shape
        pa = T.softmax(ya, axis=1)
        pp = T.softmax(yp, axis=1)
        d_pos = T.euclidean_distance(pa, pp, axis=1)
        if yn.size:
            pn = T.softmax(T.reshape(yn, (k, -1, c)), axis=-1)
            d_neg = T.euclidean_distance(T.reshape(pa, (k, 1, c)), pn, axis=-1)
            s_neg = T.tsum(T.exp(T.div(T.neg(d_neg), tau)), axis=1)
        else:
            s_neg = Tensor(np.zeros(k, dtype=ya.dtype))
        s_pos = T.exp(T.div(T.neg(d_pos), tau))
        # -log(s_pos / (s_pos + s_neg)) = log(s_pos + s_neg) + d_pos/tau
        term = T.tmean(T.add(T.log(T.add(s_pos, s_neg)), T.div(d_pos, tau)))
        total = term if total is None else T.add(total, term)
    return total


def loss_gate(y_mixed: Tensor, y: np.ndarray) -> Tensor:
    return T.tmean(per_sample_ce(y_mixed, y))


def total_loss(phase: str, l_bias: Tensor, l_debias: Tensor, l_div: Tensor,
               l_con: Tensor | None, l_gate: Tensor, alpha: float, beta: float) -> Tensor:
    """L_cls + L_gate + L_div, plus beta * L_con in the counterfactual phase,
    where L_cls = alpha * L_debias + L_bias."""
    if phase not in ("initial", "counterfactual"):
        raise ValueError(f"phase must be 'initial' or 'counterfactual', got {phase!r}")
    l_cls = T.add(T.mul(l_debias, alpha), l_bias)
    total = T.add(T.add(l_cls, l_gate), l_div)
    if phase == "counterfactual":
        if l_con is None:
            raise ValueError("counterfactual phase requires l_con")
        total = T.add(total, T.mul(l_con, beta))
    return total
