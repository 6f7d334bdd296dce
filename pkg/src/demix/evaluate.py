"""Evaluation metrics, frozen-encoder depth probes, and the bias-count sweep.

``evaluate`` reports overall accuracy, per-attribute aligned / conflicting /
worst-group accuracies, per-expert accuracies with mean gate weights, and a
confusion matrix.  ``depth_probe`` freezes a single-encoder checkpoint and
trains one linear probe per block to measure where an attribute is linearly
decodable.  ``sweep_bias_count`` trains baseline and the mixture model over
datasets with 1..7 active biases and aggregates accuracy curves.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os

import numpy as np

from . import losses as L
from . import tensor as T
from .data import ATTRIBUTES, Dataset, DatasetSpec, generate_split
from .model import BaselineClassifier, ModelConfig, PnDModel
from .nn import Linear
from .tensor import Tensor

MIN_GROUP_SIZE = 5


class SpecError(ValueError):
    """A request is inconsistent with the dataset (e.g. unknown attribute)."""


@dataclasses.dataclass
class AttributeMetrics:
    aligned_acc: float
    conflicting_acc: float
    worst_group_acc: float
    worst_group: tuple[int, int]
    excluded_cells: list[tuple[int, int]]


@dataclasses.dataclass
class EvalReport:
    n: int
    method: str
    overall_acc: float
    per_attribute: dict[str, AttributeMetrics]
    per_expert_acc: list[float]
    gate_mean: list[float]
    confusion: np.ndarray
    dataset_hash: str | None = None
    ckpt_hash: str | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", "attribute", "index", "value"])
        w.writerow(["n", "", "", self.n])
        w.writerow(["overall_acc", "", "", self.overall_acc])
        for name, am in self.per_attribute.items():
            w.writerow(["aligned_acc", name, "", am.aligned_acc])
            w.writerow(["conflicting_acc", name, "", am.conflicting_acc])
            w.writerow(["worst_group_acc", name, "", am.worst_group_acc])
            w.writerow(["worst_group_cell", name, "", f"{am.worst_group[0]}/{am.worst_group[1]}"])
            for cell in am.excluded_cells:
                w.writerow(["excluded_cell", name, "", f"{cell[0]}/{cell[1]}"])
        for i, acc in enumerate(self.per_expert_acc, start=1):
            w.writerow(["expert_acc", "", i, acc])
        for i, g in enumerate(self.gate_mean, start=1):
            w.writerow(["gate_mean", "", i, g])
        for t in range(self.confusion.shape[0]):
            for p in range(self.confusion.shape[1]):
                if self.confusion[t, p]:
                    w.writerow(["confusion", "", f"{t}/{p}", int(self.confusion[t, p])])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [f"# Evaluation ({self.method})", ""]
        if self.dataset_hash:
            lines.append(f"dataset `{self.dataset_hash[:12]}`, checkpoint `{(self.ckpt_hash or '')[:12]}`")
            lines.append("")
        if self.per_expert_acc:
            m = len(self.per_expert_acc)
            head = "| dataset | " + " | ".join(f"E{i}" for i in range(1, m + 1)) + " | Final |"
            sep = "|" + "---|" * (m + 2)
            cells = " | ".join(
                f"{100 * acc:.2f} ({g:.2f})" for acc, g in zip(self.per_expert_acc, self.gate_mean)
            )
            lines += [head, sep, f"| test | {cells} | {100 * self.overall_acc:.2f} |", ""]
        else:
            lines += [f"Overall accuracy: **{100 * self.overall_acc:.2f}%** on {self.n} samples", ""]
        if self.per_attribute:
            lines += ["| attribute | aligned | conflicting | worst group |", "|---|---|---|---|"]
            for name, am in self.per_attribute.items():
                lines.append(
                    f"| {name} | {100 * am.aligned_acc:.2f} | {100 * am.conflicting_acc:.2f} "
                    f"| {100 * am.worst_group_acc:.2f} (y={am.worst_group[0]}, a={am.worst_group[1]}) |"
                )
            lines.append("")
        return "\n".join(lines)


def _accuracy(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    return float((pred[mask] == target[mask]).sum() / n) if n else float("nan")


def evaluate(model, dataset: Dataset, batch_size: int = 256,
             dataset_hash: str | None = None, ckpt_hash: str | None = None) -> EvalReport:
    """Pure function of (model, dataset); ties in argmax go to the lowest index."""
    model.eval()
    n = len(dataset)
    targets = dataset.targets.astype(np.int64)
    is_pnd = isinstance(model, PnDModel)
    m = model.config.m_experts if is_pnd else 0
    preds = np.empty(n, dtype=np.int64)
    expert_preds = np.empty((m, n), dtype=np.int64) if m else None
    gate_sum = np.zeros(m, dtype=np.float64)
    with T.no_grad():
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(start + batch_size, n))
            x = _inputs(dataset, idx)
            if is_pnd:
                out = model.forward(x)
                preds[idx] = out.y_mixed.numpy().argmax(axis=1)
                for i in range(m):
                    expert_preds[i, idx] = out.y_d_logits[i].numpy().argmax(axis=1)
                gate_sum += out.gate_p.numpy().sum(axis=0)
            else:
                preds[idx] = model.forward(x).numpy().argmax(axis=1)
    overall = float((preds == targets).mean())
    confusion = np.zeros((10, 10), dtype=np.int64)
    np.add.at(confusion, (targets, preds), 1)

    per_attribute = {}
    for j, name in enumerate(dataset.attr_names):
        cat = dataset.attrs[:, j].astype(np.int64)
        aligned = cat == targets
        am_aligned = _accuracy(preds, targets, aligned)
        am_conflicting = _accuracy(preds, targets, ~aligned)
        worst, worst_cell = 2.0, (-1, -1)
        excluded = []
        for t in range(10):
            for c in range(10):
                mask = (targets == t) & (cat == c)
                cnt = int(mask.sum())
                if cnt < MIN_GROUP_SIZE:
                    excluded.append((t, c))
                    continue
                acc = _accuracy(preds, targets, mask)
                if acc < worst:
                    worst, worst_cell = acc, (t, c)
        per_attribute[name] = AttributeMetrics(
            aligned_acc=am_aligned, conflicting_acc=am_conflicting,
            worst_group_acc=worst if worst <= 1.0 else float("nan"),
            worst_group=worst_cell, excluded_cells=excluded,
        )
    return EvalReport(
        n=n, method="pnd" if is_pnd else "baseline", overall_acc=overall,
        per_attribute=per_attribute,
        per_expert_acc=[float((expert_preds[i] == targets).mean()) for i in range(m)],
        gate_mean=[float(g / n) for g in gate_sum],
        confusion=confusion, dataset_hash=dataset_hash, ckpt_hash=ckpt_hash,
    )


def _inputs(dataset: Dataset, idx: np.ndarray) -> np.ndarray:
    x = dataset.images[idx].astype(np.float32) / 255.0
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# -- depth probes ---------------------------------------------------------------


def extract_block_features(model: BaselineClassifier, dataset: Dataset,
                           batch_size: int = 256) -> list[np.ndarray]:
    """Pooled per-block features of a frozen encoder, shape (N, C_i) each."""
    model.eval()
    feats: list[list[np.ndarray]] = [[] for _ in range(model.config.m_experts)]
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            pooled = model.block_features(_inputs(dataset, idx))
            for i, f in enumerate(pooled):
                feats[i].append(f.numpy())
    return [np.concatenate(chunks) for chunks in feats]


def attribute_labels(dataset: Dataset, attribute: str) -> np.ndarray:
    """Labels for probing: the digit target or any bias attribute's category."""
    if attribute == "digit":
        return dataset.targets.astype(np.int64)
    if attribute not in dataset.attr_names:
        raise SpecError(
            f"attribute {attribute!r} not in dataset (has {', '.join(dataset.attr_names)})"
        )
    return dataset.attrs[:, dataset.attr_names.index(attribute)].astype(np.int64)


def _train_probe(f_train: np.ndarray, y_train: np.ndarray, f_test: np.ndarray,
                 y_test: np.ndarray, seed_seq, epochs: int = 5, lr: float = 1e-3,
                 batch_size: int = 128) -> float:
    from .train import Adam  # local import to avoid a cycle

    rng = np.random.default_rng(seed_seq)
    probe = Linear(f_train.shape[1], 10, rng)
    opt = Adam(list(probe.named_parameters()))
    n = f_train.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            logits = probe(Tensor(f_train[idx]))
            loss = T.tmean(L.per_sample_ce(logits, y_train[idx]))
            probe.zero_grad()
            loss.backward()
            opt.step(lr)
    with T.no_grad():
        pred = probe(Tensor(f_test)).numpy().argmax(axis=1)
    return float((pred == y_test).mean())


def depth_probe(model: BaselineClassifier, train_data: Dataset, test_data: Dataset,
                attribute: str, seed: int = 0, epochs: int = 5, lr: float = 1e-3,
                features: tuple[list[np.ndarray], list[np.ndarray]] | None = None) -> list[float]:
    """Per-block linear-probe test accuracies for one attribute.

    The encoder stays frozen (only the probes train).  ``features`` lets
    callers reuse extracted block features across attributes.
    """
    if features is None:
        features = (extract_block_features(model, train_data), extract_block_features(model, test_data))
    f_train, f_test = features
    y_train = attribute_labels(train_data, attribute)
    y_test = attribute_labels(test_data, attribute)
    attr_idx = 0 if attribute == "digit" else 1 + list(train_data.attr_names).index(attribute)
    accs = []
    for block in range(len(f_train)):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(block, attr_idx))
        accs.append(_train_probe(f_train[block], y_train, f_test[block], y_test, ss,
                                 epochs=epochs, lr=lr))
    return accs


@dataclasses.dataclass
class ProbeReport:
    attributes: list[str]           # "digit" first, then bias attributes
    grid: np.ndarray                # (M, 1 + n_attrs) accuracies
    dataset_hash: str | None = None
    ckpt_hash: str | None = None

    def best_block(self, attribute: str) -> int:
        """1-based block index with the highest probe accuracy."""
        col = self.attributes.index(attribute)
        return int(self.grid[:, col].argmax()) + 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["block", "attribute", "accuracy"])
        for b in range(self.grid.shape[0]):
            for a, name in enumerate(self.attributes):
                w.writerow([b + 1, name, self.grid[b, a]])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["# Depth probes", ""]
        if self.dataset_hash:
            lines += [f"dataset `{self.dataset_hash[:12]}`, checkpoint `{(self.ckpt_hash or '')[:12]}`", ""]
        lines.append("| block | " + " | ".join(self.attributes) + " |")
        lines.append("|" + "---|" * (1 + len(self.attributes)))
        for b in range(self.grid.shape[0]):
            cells = " | ".join(f"{100 * v:.2f}" for v in self.grid[b])
            lines.append(f"| {b + 1} | {cells} |")
        lines.append("")
        return "\n".join(lines)


def probe_grid(model: BaselineClassifier, train_data: Dataset, test_data: Dataset,
               seed: int = 0, epochs: int = 5, lr: float = 1e-3,
               dataset_hash: str | None = None, ckpt_hash: str | None = None) -> ProbeReport:
    """Probe every attribute (digit first) at every block, reusing features."""
    features = (extract_block_features(model, train_data), extract_block_features(model, test_data))
    attributes = ["digit"] + list(train_data.attr_names)
    m = len(features[0])
    grid = np.zeros((m, len(attributes)))
    for a, attribute in enumerate(attributes):
        grid[:, a] = depth_probe(model, train_data, test_data, attribute,
                                 seed=seed, epochs=epochs, lr=lr, features=features)
    return ProbeReport(attributes=attributes, grid=grid,
                       dataset_hash=dataset_hash, ckpt_hash=ckpt_hash)


# -- bias-count sweep -------------------------------------------------------------


def _sweep_job(args: dict) -> dict:
    """One (count, method, seed) training + test evaluation; process-safe."""
    from .data import load
    from .train import TrainConfig, train_baseline, train_pnd

    train_data = load(args["train_path"])
    val_data = load(args["val_path"])
    test_data = load(args["test_path"])
    model_config = ModelConfig.from_dict(args["model_config"])
    config = dataclasses.replace(TrainConfig.from_dict(args["train_config"]), seed=args["seed"])
    out_dir = args["out_dir"]
    provenance = {"train_data": args["train_hash"], "n_biases": args["count"]}
    if args["method"] == "pnd":
        rec = train_pnd(train_data, val_data, model_config, config, out_dir, provenance)
    else:
        rec = train_baseline(train_data, val_data, model_config, config, out_dir, provenance)
    from .train import load_model

    model, _ = load_model(rec.ckpt_best)
    report = evaluate(model, test_data)
    with open(os.path.join(out_dir, "test_acc.txt"), "w") as f:
        f.write(f"{report.overall_acc!r}\n")
    return {"count": args["count"], "method": args["method"], "seed": args["seed"],
            "acc": report.overall_acc}


def sweep_bias_count(counts, seeds, rho: float, out_dir: str, spec_kw: dict,
                     model_config: ModelConfig, train_config, n_workers: int = 1) -> list[dict]:
    """Train baseline and the mixture model per bias count; returns raw rows.

    One dataset per count (data seed fixed by the spec seed + count); the
    training seed varies across runs.  ``n_workers > 1`` fans jobs out to
    processes; results are order-independent either way.
    """
    from .data import dataset_hash, synthesize

    os.makedirs(out_dir, exist_ok=True)
    jobs = []
    for count in counts:
        spec = DatasetSpec.with_first_biases(count, rho=rho, **spec_kw)
        data_dir = os.path.join(out_dir, f"data_c{count}")
        paths = synthesize(spec, data_dir)
        h = dataset_hash(paths["train"])
        for method in ("baseline", "pnd"):
            for seed in seeds:
                jobs.append({
                    "count": count, "method": method, "seed": seed,
                    "train_path": paths["train"], "val_path": paths["val"],
                    "test_path": paths["test"], "train_hash": h,
                    "model_config": model_config.to_dict(),
                    "train_config": train_config.to_dict(),
                    "out_dir": os.path.join(out_dir, f"run_c{count}_{method}_s{seed}"),
                })
    if n_workers > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    rows.sort(key=lambda r: (r["count"], r["method"], r["seed"]))
    with open(os.path.join(out_dir, "runs.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["count", "method", "seed", "acc"])
        w.writeheader()
        w.writerows(rows)
    agg = aggregate_sweep(rows)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["count", "method", "mean_acc", "std_acc", "n_runs"])
        w.writeheader()
        w.writerows(agg)
    return rows


def aggregate_sweep(rows: list[dict]) -> list[dict]:
    """(count, method) -> mean/std accuracy over seeds."""
    keys = sorted({(r["count"], r["method"]) for r in rows})
    out = []
    for count, method in keys:
        accs = np.array([r["acc"] for r in rows if r["count"] == count and r["method"] == method])
        out.append({"count": count, "method": method,
                    "mean_acc": float(accs.mean()), "std_acc": float(accs.std(ddof=0)),
                    "n_runs": len(accs)})
    return out
