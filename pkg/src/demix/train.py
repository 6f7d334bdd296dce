"""Two-phase training driver, Adam optimizer, and the plain-CE baseline arm.

Phase 1 ("initial") optimizes ``L_cls + L_gate + L_div``; phase 2
("counterfactual") continues the same parameters with ``+ beta * L_con``,
drawing a K-anchor subset from each shuffled batch for the counterfactual
recombinations.  Model selection is by best unbiased-validation accuracy.

A run directory contains: ``config.json`` (echo, written before any work),
``metrics.csv`` (per epoch), ``steps.csv`` (per-step loss components),
``ckpt_best.{json,bin}`` and ``ckpt_last.{json,bin}``.  In deterministic
mode (default), every stream order derives from the seed, so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os

import numpy as np

from . import losses as L
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset
from .losses import LossBundle, TrainHyper
from .model import BaselineClassifier, ModelConfig, PnDModel
from .tensor import NumericError, Tensor


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs_initial: int = 10
    epochs_counterfactual: int = 15
    batch_size: int = 128
    lr_initial: float = 1e-3
    lr_counterfactual: float = 5e-4
    lr_decay_every: int = 5
    lr_decay_gamma: float = 0.5
    weight_decay: float = 1e-5
    seed: int = 0
    deterministic: bool = True
    hyper: TrainHyper = dataclasses.field(default_factory=TrainHyper)
    # the phase boundary resets Adam moments by default (fresh lr regime)
    reset_optimizer_between_phases: bool = True
    # loss terms to drop from the optimized total (diagnostics still logged)
    ablations: tuple[str, ...] = ()

    _ABLATABLE = ("gate", "div", "con", "debias")

    def __post_init__(self):
        abl = tuple(self.ablations)
        bad = sorted(set(abl) - set(self._ABLATABLE))
        if bad:
            raise ValueError(f"unknown ablation(s): {', '.join(bad)} "
                             f"(choose from {', '.join(self._ABLATABLE)})")
        object.__setattr__(self, "ablations", abl)

    def total_epochs(self) -> int:
        return self.epochs_initial + self.epochs_counterfactual

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hyper"] = dataclasses.asdict(self.hyper)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        hyper = d.pop("hyper", {})
        if not isinstance(hyper, dict):
            raise ValueError(f"config field 'hyper' must be an object, got {type(hyper).__name__}")
        known_h = {f.name for f in dataclasses.fields(TrainHyper)}
        bad = sorted(set(hyper) - known_h)
        if bad:
            raise ValueError(f"unknown hyper field(s): {', '.join(bad)}")
        known = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise ValueError(f"unknown config field(s): {', '.join(bad)}")
        if "alpha" in hyper and isinstance(hyper["alpha"], list):
            hyper["alpha"] = tuple(hyper["alpha"])
        return cls(hyper=TrainHyper(**hyper), **d)


def lr_at(epoch: int, config: TrainConfig) -> tuple[str, float]:
    """(phase, learning rate) for a global epoch index."""
    if epoch < config.epochs_initial:
        phase, base, in_phase = "initial", config.lr_initial, epoch
    else:
        phase, base = "counterfactual", config.lr_counterfactual
        in_phase = epoch - config.epochs_initial
    return phase, base * config.lr_decay_gamma ** (in_phase // config.lr_decay_every)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    beta1 = 0.9, beta2 = 0.999, eps = 1e-8.  Weight decay shrinks the
    parameter before the moment update.  Parameters whose gradient is unset
    are skipped entirely.
    """

    def __init__(self, named_params, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.reset_moments()

    def reset_moments(self) -> None:
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {name}")
            if self.weight_decay:
                p.data -= (lr * self.weight_decay) * p.data
            m = self.m[i]
            v = self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class TrainAbort(NumericError):
    """Loss became non-finite; carries the step index and last finite bundle."""

    def __init__(self, step: int, last_bundle: LossBundle | None):
        parts = f" (last finite components: {last_bundle.components()})" if last_bundle else ""
        super().__init__(f"non-finite loss at step {step}{parts}")
        self.step = step
        self.last_bundle = last_bundle


@dataclasses.dataclass
class RunRecord:
    out_dir: str
    method: str
    metrics: list[dict]
    best_epoch: int
    best_val_acc: float
    ckpt_best: str
    ckpt_last: str
    config: dict


def _save_model(model, prefix: str, meta: dict) -> str:
    save_checkpoint(prefix, model.state_arrays(), meta)
    return prefix


def load_model(path_prefix: str):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    meta, arrays = load_checkpoint(path_prefix)
    config = ModelConfig.from_dict(meta["model_config"])
    rng = np.random.default_rng(0)  # values are overwritten below
    if meta["method"] == "pnd":
        model = PnDModel(config, rng)
    elif meta["method"] == "baseline":
        model = BaselineClassifier(config, rng)
    else:
        raise ValueError(f"unknown method {meta['method']!r} in checkpoint")
    model.load_state_arrays(arrays)
    model.eval()
    return model, meta


def _batch_inputs(images: np.ndarray, idx: np.ndarray) -> np.ndarray:
    x = images[idx].astype(np.float32) / 255.0
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def eval_accuracy(model, dataset: Dataset, batch_size: int = 256) -> float:
    """Accuracy of the model's primary prediction in eval mode."""
    model.eval()
    correct = 0
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            x = _batch_inputs(dataset.images, idx)
            if isinstance(model, PnDModel):
                logits = model.forward(x).y_mixed
            else:
                logits = model.forward(x)
            pred = logits.numpy().argmax(axis=1)
            correct += int((pred == dataset.targets[idx]).sum())
    return correct / len(dataset)


def _write_config(out_dir: str, config: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config, f, indent=1, sort_keys=True)
        f.write("\n")


_STEP_FIELDS = ["step", "epoch", "phase", "l_bias", "l_debias", "l_div", "l_con", "l_gate", "l_total"]
_METRIC_FIELDS = ["epoch", "phase", "lr", "l_bias", "l_debias", "l_div", "l_con", "l_gate",
                  "l_total", "train_acc", "val_acc", "is_best"]


def _counterfactual_term(model: PnDModel, out, y_idx_count: int, hyper: TrainHyper,
                         rng: np.random.Generator) -> Tensor:
    """Score counterfactual recombinations through the configured head."""
    k = min(hyper.K, y_idx_count)
    cf = L.build_counterfactuals(k, hyper.P, rng)
    anchors = np.arange(k)
    neg_flat = cf.neg_indices.reshape(-1)
    rep = np.repeat(anchors, cf.neg_indices.shape[1])
    use_bias_head = model.config.counterfactual_head == "bias"
    anchor_logits, pos_logits, neg_logits = [], [], []
    for i, expert in enumerate(model.experts()):
        e_d, e_b = out.e_d[i], out.e_b[i]
        pos_pair = expert.swap(T.index_rows(e_d, anchors), T.index_rows(e_b, cf.pos_index))
        neg_pair = expert.swap(T.index_rows(e_d, neg_flat), T.index_rows(e_b, rep))
        src = out.y_b_logits if use_bias_head else out.y_d_logits
        anchor_logits.append(T.index_rows(src[i], anchors))
        pos_logits.append(pos_pair[1] if use_bias_head else pos_pair[0])
        neg_logits.append(neg_pair[1] if use_bias_head else neg_pair[0])
    return L.loss_con(anchor_logits, pos_logits, neg_logits, hyper.tau)


def train_pnd(train_data: Dataset, val_data: Dataset, model_config: ModelConfig,
              config: TrainConfig, out_dir: str, provenance: dict | None = None,
              phase_boundary_hook=None) -> RunRecord:
    seed_seq = np.random.SeedSequence(config.seed if config.deterministic else None)
    init_ss, order_ss, cf_ss = seed_seq.spawn(3)
    model = PnDModel(model_config, np.random.default_rng(init_ss))
    config_echo = {
        "method": "pnd",
        "model_config": model_config.to_dict(),
        "train_config": config.to_dict(),
        "provenance": provenance or {},
    }
    _write_config(out_dir, config_echo)
    opt = Adam(list(model.named_parameters()), weight_decay=config.weight_decay)
    order_rng = np.random.default_rng(order_ss)
    cf_rng = np.random.default_rng(cf_ss)
    hyper = config.hyper
    n = len(train_data)
    meta_base = {"method": "pnd", "model_config": model_config.to_dict(),
                 "seed": config.seed, "provenance": provenance or {}}

    metrics: list[dict] = []
    best_val, best_epoch = -1.0, -1
    step = 0
    last_bundle: LossBundle | None = None
    ckpt_best = os.path.join(out_dir, "ckpt_best")
    ckpt_last = os.path.join(out_dir, "ckpt_last")

    steps_f = open(os.path.join(out_dir, "steps.csv"), "w", newline="")
    steps_csv = csv.DictWriter(steps_f, fieldnames=_STEP_FIELDS)
    steps_csv.writeheader()
    try:
        prev_phase = "initial"
        for epoch in range(config.total_epochs()):
            phase, lr = lr_at(epoch, config)
            if phase != prev_phase:
                if config.reset_optimizer_between_phases:
                    opt.reset_moments()
                if phase_boundary_hook is not None:
                    phase_boundary_hook(model)
                prev_phase = phase
            model.train()
            perm = order_rng.permutation(n)
            sums = dict.fromkeys(("l_bias", "l_debias", "l_div", "l_con", "l_gate", "l_total"), 0.0)
            n_batches = 0
            correct = 0
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                x = _batch_inputs(train_data.images, idx)
                y = train_data.targets[idx].astype(np.int64)
                out = model.forward(x)
                l_bias = L.loss_bias(out.y_b_logits, y, hyper.q)
                l_debias, w = L.loss_debias(out.y_d_logits, out.y_b_logits, y)
                l_div = L.loss_div(out.y_b_logits)
                l_gate = L.loss_gate(out.y_mixed, y)
                l_con = None
                if phase == "counterfactual":
                    l_con = _counterfactual_term(model, out, len(idx), hyper, cf_rng)

                def _opt(term, name):
                    if term is None or name not in config.ablations:
                        return term
                    return Tensor(np.zeros((), dtype=term.data.dtype))

                total = L.total_loss(phase, l_bias, _opt(l_debias, "debias"),
                                     _opt(l_div, "div"), _opt(l_con, "con"),
                                     _opt(l_gate, "gate"),
                                     hyper.alpha_for(phase), hyper.beta)
                bundle = LossBundle(
                    l_bias=l_bias.item(), l_debias=l_debias.item(), l_div=l_div.item(),
                    l_con=l_con.item() if l_con is not None else 0.0,
                    l_gate=l_gate.item(), l_total=total.item(), w=w,
                )
                if not np.isfinite(bundle.l_total):
                    raise TrainAbort(step, last_bundle)
                last_bundle = bundle
                model.zero_grad()
                total.backward()
                opt.step(lr)
                correct += int((out.y_mixed.numpy().argmax(axis=1) == y).sum())
                row = {"step": step, "epoch": epoch, "phase": phase}
                row.update({k: v for k, v in bundle.components().items()})
                steps_csv.writerow(row)
                for key, v in bundle.components().items():
                    sums[key] += v
                n_batches += 1
                step += 1
            val_acc = eval_accuracy(model, val_data, config.batch_size)
            is_best = val_acc > best_val
            if is_best:
                best_val, best_epoch = val_acc, epoch
                _save_model(model, ckpt_best, {**meta_base, "epoch": epoch, "val_acc": val_acc})
            metrics.append({
                "epoch": epoch, "phase": phase, "lr": lr,
                **{k: sums[k] / n_batches for k in sums},
                "train_acc": correct / n, "val_acc": val_acc, "is_best": int(is_best),
            })
    finally:
        steps_f.close()
    _save_model(model, ckpt_last, {**meta_base, "epoch": config.total_epochs() - 1,
                                   "val_acc": metrics[-1]["val_acc"] if metrics else None})
    _write_metrics(out_dir, metrics)
    return RunRecord(out_dir=out_dir, method="pnd", metrics=metrics, best_epoch=best_epoch,
                     best_val_acc=best_val, ckpt_best=ckpt_best, ckpt_last=ckpt_last,
                     config=config_echo)


def train_baseline(train_data: Dataset, val_data: Dataset, model_config: ModelConfig,
                   config: TrainConfig, out_dir: str, provenance: dict | None = None) -> RunRecord:
    """Single encoder + linear head under plain cross-entropy, same schedule."""
    seed_seq = np.random.SeedSequence(config.seed if config.deterministic else None)
    init_ss, order_ss, _ = seed_seq.spawn(3)
    model = BaselineClassifier(model_config, np.random.default_rng(init_ss))
    config_echo = {
        "method": "baseline",
        "model_config": model_config.to_dict(),
        "train_config": config.to_dict(),
        "provenance": provenance or {},
    }
    _write_config(out_dir, config_echo)
    opt = Adam(list(model.named_parameters()), weight_decay=config.weight_decay)
    order_rng = np.random.default_rng(order_ss)
    n = len(train_data)
    meta_base = {"method": "baseline", "model_config": model_config.to_dict(),
                 "seed": config.seed, "provenance": provenance or {}}
    metrics: list[dict] = []
    best_val, best_epoch = -1.0, -1
    step = 0
    last_bundle = None
    ckpt_best = os.path.join(out_dir, "ckpt_best")
    ckpt_last = os.path.join(out_dir, "ckpt_last")
    steps_f = open(os.path.join(out_dir, "steps.csv"), "w", newline="")
    steps_csv = csv.DictWriter(steps_f, fieldnames=_STEP_FIELDS)
    steps_csv.writeheader()
    try:
        for epoch in range(config.total_epochs()):
            phase, lr = lr_at(epoch, config)
            model.train()
            perm = order_rng.permutation(n)
            ce_sum, n_batches, correct = 0.0, 0, 0
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                x = _batch_inputs(train_data.images, idx)
                y = train_data.targets[idx].astype(np.int64)
                logits = model.forward(x)
                loss = T.tmean(L.per_sample_ce(logits, y))
                val = loss.item()
                if not np.isfinite(val):
                    raise TrainAbort(step, last_bundle)
                last_bundle = LossBundle(0.0, 0.0, 0.0, 0.0, val, val, np.zeros((0, len(idx))))
                model.zero_grad()
                loss.backward()
                opt.step(lr)
                correct += int((logits.numpy().argmax(axis=1) == y).sum())
                steps_csv.writerow({"step": step, "epoch": epoch, "phase": phase,
                                    "l_bias": 0.0, "l_debias": 0.0, "l_div": 0.0, "l_con": 0.0,
                                    "l_gate": val, "l_total": val})
                ce_sum += val
                n_batches += 1
                step += 1
            val_acc = eval_accuracy(model, val_data, config.batch_size)
            is_best = val_acc > best_val
            if is_best:
                best_val, best_epoch = val_acc, epoch
                _save_model(model, ckpt_best, {**meta_base, "epoch": epoch, "val_acc": val_acc})
            metrics.append({
                "epoch": epoch, "phase": phase, "lr": lr,
                "l_bias": 0.0, "l_debias": 0.0, "l_div": 0.0, "l_con": 0.0,
                "l_gate": ce_sum / n_batches, "l_total": ce_sum / n_batches,
                "train_acc": correct / n, "val_acc": val_acc, "is_best": int(is_best),
            })
    finally:
        steps_f.close()
    _save_model(model, ckpt_last, {**meta_base, "epoch": config.total_epochs() - 1,
                                   "val_acc": metrics[-1]["val_acc"] if metrics else None})
    _write_metrics(out_dir, metrics)
    return RunRecord(out_dir=out_dir, method="baseline", metrics=metrics, best_epoch=best_epoch,
                     best_val_acc=best_val, ckpt_best=ckpt_best, ckpt_last=ckpt_last,
                     config=config_echo)


def _write_metrics(out_dir: str, metrics: list[dict]) -> None:
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_METRIC_FIELDS)
        writer.writeheader()
        for row in metrics:
            writer.writerow(row)
