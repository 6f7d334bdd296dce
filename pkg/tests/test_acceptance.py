"""Acceptance gate: eight checks, one printed verdict line per criterion.

Each test prints ``[criterion N] PASS|FAIL <name>: <evidence>`` and appends
the same line to ``acceptance_report.txt`` in the repo root, so a plain
pytest run leaves a human-readable scorecard behind.  The heavy trend checks
(4-7) train real models; on one desk-class core the whole file takes a few
hours, with most of it in the two session fixtures.
"""

import dataclasses
import hashlib
import json
import os
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import stats

import demix.losses as L
import demix.oracle as O
import demix.tensor as T
from demix.data import DatasetSpec, generate_split, load, sample_attributes, synthesize
from demix.data import _uniform_attributes
from demix.evaluate import aggregate_sweep, evaluate, probe_grid, sweep_bias_count
from demix.losses import TrainHyper
from demix.model import ModelConfig, PnDModel
from demix.tensor import Tensor
from demix.train import TrainConfig, load_model, train_baseline, train_pnd

REPORT = os.path.join(os.path.dirname(__file__), os.pardir, "acceptance_report.txt")

# Trend-check scales. Criterion 4 pins the desk dataset (64x64, 10k train,
# rho 0.95, all seven biases); the epoch split is chosen so one run fits the
# 30 CPU-minute budget. Criteria 5 and 6 compare methods against each other,
# which survives scaling down to 32x32. The ablation comparison (criterion 6)
# runs on the first three biases: at this budget the 7-bias task sits at
# chance for every variant, so orderings there would be vacuous noise.
DESK_EPOCHS = (16, 2)
DESK_SEEDS = (0, 1, 2)
SWEEP_KW = dict(n_train=4000, n_val=400, n_test=1000, image_size=32, seed=303)
SWEEP_EPOCHS = (10, 2)
SWEEP_SEEDS = (0, 1)
VARIANT_KW = dict(n_train=4000, n_val=400, n_test=1000, image_size=32, rho=0.95, seed=404)
VARIANT_BIASES = 3
VARIANT_EPOCHS = (10, 2)
VARIANT_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session", autouse=True)
def _fresh_report():
    if os.path.exists(REPORT):
        os.unlink(REPORT)
    yield


def _verdict(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    with open(REPORT, "a") as f:
        f.write(line + "\n")
    assert ok, line


def _rel(a: float, b: float) -> float:
    # every loss here is O(0.1) or larger; the floor only guards degenerate zeros
    return abs(a - b) / max(abs(b), 1e-2)


# -- criterion 1: oracle equivalence ---------------------------------------------


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(0)
    hyper = TrainHyper()
    t0 = time.time()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 17))
        m = 4
        y = rng.integers(0, 10, size=n)
        yb = [rng.standard_normal((n, 10)) * 3.0 for _ in range(m)]
        yd = [rng.standard_normal((n, 10)) * 3.0 for _ in range(m)]
        yb_t = [Tensor(a.astype(np.float32)) for a in yb]
        yd_t = [Tensor(a.astype(np.float32)) for a in yd]

        l_bias = L.loss_bias(yb_t, y, hyper.q)
        worst = max(worst, _rel(l_bias.item(), O.loss_bias(yb, y, hyper.q)))

        l_debias, w = L.loss_debias(yd_t, yb_t, y)
        o_debias, o_w = O.loss_debias(yd, yb, y)
        worst = max(worst, _rel(l_debias.item(), o_debias))
        worst = max(worst, float(np.max(np.abs(w - o_w))))

        l_div = L.loss_div(yb_t)
        worst = max(worst, _rel(l_div.item(), O.loss_div(yb)))

        # counterfactual logits: k anchors, p partners each
        k = n
        p = int(rng.integers(1, 4))
        anchors = [rng.standard_normal((k, 10)) * 2.0 for _ in range(m)]
        pos = [rng.standard_normal((k, 10)) * 2.0 for _ in range(m)]
        neg = [rng.standard_normal((k * p, 10)) * 2.0 for _ in range(m)]
        l_con = L.loss_con([Tensor(a.astype(np.float32)) for a in anchors],
                           [Tensor(a.astype(np.float32)) for a in pos],
                           [Tensor(a.astype(np.float32)) for a in neg], hyper.tau)
        worst = max(worst, _rel(l_con.item(), O.loss_con(anchors, pos, neg, hyper.tau)))

        mixed = rng.standard_normal((n, 10)) * 3.0
        l_gate = L.loss_gate(Tensor(mixed.astype(np.float32)), y)
        worst = max(worst, _rel(l_gate.item(), O.loss_gate(mixed, y)))

        for phase, l_c in (("initial", None), ("counterfactual", l_con)):
            alpha = hyper.alpha_for(phase)
            got = L.total_loss(phase, l_bias, l_debias, l_div, l_c, l_gate,
                               alpha, hyper.beta).item()
            want = O.total_loss(phase, O.loss_bias(yb, y, hyper.q), o_debias,
                                O.loss_div(yb),
                                O.loss_con(anchors, pos, neg, hyper.tau),
                                O.loss_gate(mixed, y), alpha, hyper.beta)
            worst = max(worst, _rel(got, want))
    dt = time.time() - t0
    ok = worst < 1e-4 and dt < 10.0
    _verdict(1, "oracle equivalence", ok,
             f"max rel err {worst:.2e} over 100 micro-batches in {dt:.1f} s")


# -- criterion 2: gradient suite --------------------------------------------------


def _op_checks(rng):
    """(name, fn, leaf) triples covering every differentiable public op.

    All randomness binds at construction time; the probe functions must be
    deterministic because the checker evaluates them repeatedly.
    """
    def leaf(*shape, positive=False, spread=1.0):
        a = rng.standard_normal(shape) * spread
        if positive:
            a = np.abs(a) + 0.5
        return Tensor(a, requires_grad=True)

    def proj(shape):
        r = Tensor(rng.standard_normal(shape))
        return lambda t: T.tsum(T.mul(t, r))

    x34, r34 = leaf(3, 4), proj((3, 4))
    other = Tensor(rng.standard_normal((3, 4)) + 2.0)
    idx = rng.integers(0, 4, size=3)
    rows = rng.integers(0, 3, size=5)
    r43, r2453, r64, r35, r54 = (proj(s) for s in
                                 ((4, 3), (2, 4, 5, 3), (6, 4), (3, 5), (5, 4)))
    r_convw, r_convx, r_pool, r_gap, r_bn = (proj(s) for s in
                                             ((2, 6, 6, 4), (2, 3, 3, 4), (2, 3, 3, 2),
                                              (2, 3), (4, 3, 3, 5)))
    conv_x = Tensor(rng.standard_normal((2, 6, 6, 3)))
    conv_w = Tensor(rng.standard_normal((3, 3, 3, 4)) * 0.5)
    conv_b = Tensor(rng.standard_normal(4))
    mm_b = Tensor(rng.standard_normal((4, 5)))
    euc_b = Tensor(rng.standard_normal((5, 4)))
    gamma5, beta5 = Tensor(np.ones(5)), Tensor(np.zeros(5))
    run_m, run_v = np.zeros(5), np.ones(5)
    checks = [
        ("add", lambda t: r34(T.add(t, other)), x34),
        ("sub", lambda t: r34(T.sub(t, other)), x34),
        ("mul", lambda t: r34(T.mul(t, other)), x34),
        ("div", lambda t: r34(T.div(t, other)), x34),
        ("neg", lambda t: r34(T.neg(t)), x34),
        ("power", lambda t: r34(T.power(t, 1.7)), leaf(3, 4, positive=True)),
        ("exp", lambda t: r34(T.exp(t)), x34),
        ("log", lambda t: r34(T.log(t)), leaf(3, 4, positive=True)),
        ("sqrt", lambda t: r34(T.sqrt(t)), leaf(3, 4, positive=True)),
        ("clip_min", lambda t: r34(T.clip_min(t, 0.1)), leaf(3, 4, positive=True)),
        ("relu", lambda t: r34(T.relu(t)), leaf(3, 4, spread=3.0)),
        ("tsum", lambda t: T.tsum(T.mul(T.tsum(t, axis=1, keepdims=True), 1.5)), x34),
        ("tmean", lambda t: T.tsum(T.mul(T.tmean(t, axis=0), 2.0)), x34),
        ("reshape", lambda t: r43(T.reshape(t, (4, 3))), x34),
        ("transpose_nchw_to_nhwc",
         lambda t: r2453(T.transpose_nchw_to_nhwc(t)), leaf(2, 3, 4, 5)),
        ("concat", lambda t: r64(T.concat([t, other], axis=0)), x34),
        ("matmul", lambda t: r35(T.matmul(t, mm_b)), x34),
        ("gather", lambda t: T.tsum(T.gather(t, idx)), x34),
        ("index_rows", lambda t: r54(T.index_rows(t, rows)), x34),
        ("softmax", lambda t: r34(T.softmax(t, axis=1)), x34),
        ("log_softmax", lambda t: r34(T.log_softmax(t, axis=1)), x34),
        ("conv2d_w", lambda t: r_convw(T.conv2d(conv_x, t, stride=1, padding=1)),
         leaf(3, 3, 3, 4, spread=0.5)),
        ("conv2d_x", lambda t: r_convx(T.conv2d(t, conv_w, conv_b, stride=2, padding=1)),
         leaf(2, 6, 6, 3)),
        ("max_pool2d", lambda t: r_pool(T.max_pool2d(t, 2, 2)),
         Tensor(rng.permutation(2 * 6 * 6 * 2).reshape(2, 6, 6, 2).astype(np.float64),
                requires_grad=True)),
        ("global_avg_pool", lambda t: r_gap(T.global_avg_pool(t)), leaf(2, 4, 4, 3)),
        ("batch_norm_x", lambda t: r_bn(T.batch_norm(
            t, gamma5, beta5, run_m, run_v, training=True)), leaf(4, 3, 3, 5)),
        ("euclidean_distance", lambda t: T.tsum(T.euclidean_distance(t, euc_b)),
         leaf(5, 4)),
    ]
    return checks


def _phase1_loss(model, x, y, hyper):
    out = model(x)
    l_bias = L.loss_bias(out.y_b_logits, y, hyper.q)
    l_debias, _ = L.loss_debias(out.y_d_logits, out.y_b_logits, y)
    l_div = L.loss_div(out.y_b_logits)
    l_gate = L.loss_gate(out.y_mixed, y)
    return L.total_loss("initial", l_bias, l_debias, l_div, None, l_gate,
                        hyper.alpha_for("initial"), hyper.beta)


def test_criterion_2_gradient_suite():
    rng = np.random.default_rng(1)
    t0 = time.time()

    worst_op, worst_name = 0.0, ""
    for name, fn, x in _op_checks(rng):
        err = T.finite_difference_check(fn, x)
        if err > worst_op:
            worst_op, worst_name = err, name

    # full phase-1 objective through a float64 micro-model, probed at the
    # logit-producing layers (their perturbation leaves every relu state
    # fixed, so central differences see a smooth function; the kinked ops
    # themselves are covered by the per-op sweep above)
    cfg = ModelConfig(image_size=32, block_channels=(4, 4, 8, 8),
                      expert_embed_dim=8, head_hidden=4)
    model = PnDModel(cfg, np.random.default_rng(2))
    params = dict(model.named_parameters())
    for p in params.values():
        p.data = p.data.astype(np.float64)
    model.train()
    hyper = TrainHyper()
    x = Tensor(rng.random((4, 3, 32, 32)))
    y = rng.integers(0, 10, size=4)
    probe_names = ["expert1.head_d.fc2.weight", "expert2.head_b.fc2.weight",
                   "expert4.head_d.fc2.bias", "gate.fc.weight", "gate.fc.bias"]
    probes = [params[n] for n in probe_names]
    worst_full = max(
        T.finite_difference_check(lambda _t: _phase1_loss(model, x, y, hyper), p)
        for p in probes)

    # zero-sensitivity contract: the debias weights are constants, so the
    # bias logits see no gradient from the weighted CE
    yd = [Tensor(rng.standard_normal((6, 10)), requires_grad=True) for _ in range(4)]
    yb = [Tensor(rng.standard_normal((6, 10)), requires_grad=True) for _ in range(4)]
    yy = rng.integers(0, 10, size=6)
    l_debias, _ = L.loss_debias(yd, yb, yy)
    l_debias.backward()
    w_dead = all(b.grad is None or not np.any(b.grad) for b in yb)
    w_live = all(d.grad is not None and np.any(d.grad) for d in yd)

    # zero-sensitivity contract: counterfactual partner embeddings are
    # detached inside the recombination, so they see no gradient
    expert = model.experts()[0]
    k, dim = 5, cfg.expert_embed_dim
    e_d = Tensor(rng.standard_normal((k, dim)), requires_grad=True)
    e_b = Tensor(rng.standard_normal((k, dim)), requires_grad=True)
    cf = L.build_counterfactuals(k, 3, np.random.default_rng(3))
    anchors = np.arange(k)
    rep = np.repeat(anchors, cf.neg_indices.shape[1])
    anchor_l = expert.swap(T.index_rows(e_d, anchors), T.index_rows(e_b, anchors))[0]
    pos_l = expert.swap(T.index_rows(e_d, anchors), T.index_rows(e_b, cf.pos_index))[0]
    neg_l = expert.swap(T.index_rows(e_d, cf.neg_indices.reshape(-1)),
                        T.index_rows(e_b, rep))[0]
    l_con = L.loss_con([anchor_l], [pos_l], [neg_l], hyper.tau)
    l_con.backward()
    partner_dead = e_b.grad is None or not np.any(e_b.grad)
    anchor_live = e_d.grad is not None and np.any(e_d.grad)

    # zero-sensitivity contract: the gate reads a detached copy of the expert
    # logits, so their gradient from the gate CE is exactly the mixture path
    yg = [Tensor(rng.standard_normal((6, 10)), requires_grad=True) for _ in range(4)]
    gate_p, y_mixed = model.gate(yg)
    l_gate = L.loss_gate(y_mixed, yy)
    l_gate.backward()
    pm = O.softmax(y_mixed.numpy().astype(np.float64), axis=1)
    pm[np.arange(6), yy] -= 1.0
    pm /= 6.0
    gate_clean = all(
        np.allclose(g.grad, gate_p.numpy()[:, i:i + 1] * pm, atol=1e-6)
        for i, g in enumerate(yg))

    dt = time.time() - t0
    ok = (worst_op < 1e-3 and worst_full < 1e-2 and w_dead and w_live
          and partner_dead and anchor_live and gate_clean and dt < 120.0)
    _verdict(2, "gradient suite", ok,
             f"worst op {worst_name} {worst_op:.2e}, full phase-1 {worst_full:.2e}, "
             f"zero-sensitivity w/partner/gate = {w_dead}/{partner_dead}/{gate_clean} "
             f"in {dt:.1f} s")


# -- criterion 3: sampler statistics ----------------------------------------------


def test_criterion_3_sampler_statistics():
    t0 = time.time()
    n = 100_000
    spec = DatasetSpec()
    rng = np.random.default_rng(11)
    targets = np.arange(n) % 10
    train_attrs = np.stack([sample_attributes(int(t), spec, rng) for t in targets])
    test_attrs = np.stack([_uniform_attributes(spec, rng) for _ in range(n)])

    se_train = (spec.rho * (1 - spec.rho) / n) ** 0.5
    se_test = (0.1 * 0.9 / n) ** 0.5
    worst_train = max(abs(float((train_attrs[:, j] == targets).mean()) - spec.rho)
                      for j in range(7))
    worst_test = max(abs(float((test_attrs[:, j] == targets).mean()) - 0.1)
                     for j in range(7))

    # conditioned on the target, attributes must be independent of each other
    fixed = np.stack([sample_attributes(4, spec, rng) for _ in range(n)])
    crit = stats.chi2.ppf(0.999, (10 - 1) * (10 - 1))
    worst_chi = 0.0
    for a, b in ((0, 1), (2, 5), (3, 6)):
        table = np.zeros((10, 10))
        np.add.at(table, (fixed[:, a], fixed[:, b]), 1)
        chi = stats.chi2_contingency(table).statistic
        worst_chi = max(worst_chi, float(chi))

    dt = time.time() - t0
    ok = (worst_train < 3 * se_train and worst_test < 3 * se_test
          and worst_chi < crit and dt < 60.0)
    _verdict(3, "sampler statistics", ok,
             f"aligned dev {worst_train:.4f} (3SE {3 * se_train:.4f}) train, "
             f"{worst_test:.4f} (3SE {3 * se_test:.4f}) test, "
             f"chi2 {worst_chi:.1f} < {crit:.1f} in {dt:.1f} s")


# -- criteria 4 and 7 share the desk-scale runs ------------------------------------


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Desk dataset plus 3-seed pnd/baseline runs; feeds criteria 4 and 7."""
    root = tmp_path_factory.mktemp("desk")
    spec = DatasetSpec()
    paths = synthesize(spec, str(root / "data"))
    splits = {s: load(p) for s, p in paths.items()}
    runs = {"splits": splits, "pnd": [], "baseline": []}
    for method, fn in (("pnd", train_pnd), ("baseline", train_baseline)):
        for seed in DESK_SEEDS:
            cfg = TrainConfig(epochs_initial=DESK_EPOCHS[0],
                              epochs_counterfactual=DESK_EPOCHS[1], seed=seed)
            out = str(root / f"run_{method}_s{seed}")
            t0 = time.time()
            rec = fn(splits["train"], splits["val"], ModelConfig(), cfg, out)
            minutes = (time.time() - t0) / 60.0
            model, _ = load_model(rec.ckpt_best)
            acc = evaluate(model, splits["test"]).overall_acc
            runs[method].append({"seed": seed, "acc": acc, "minutes": minutes,
                                 "ckpt": rec.ckpt_best})
    return runs


def test_criterion_4_trend_a_debias_gap(desk_runs):
    pnd = np.array([r["acc"] for r in desk_runs["pnd"]])
    base = np.array([r["acc"] for r in desk_runs["baseline"]])
    slowest = max(r["minutes"] for m in ("pnd", "baseline") for r in desk_runs[m])
    gap = 100.0 * (pnd.mean() - base.mean())
    ok = gap >= 5.0 and slowest <= 30.0
    _verdict(4, "trend A (debias gap at desk scale)", ok,
             f"pnd {100 * pnd.mean():.2f} +/- {100 * pnd.std():.2f} vs "
             f"baseline {100 * base.mean():.2f} +/- {100 * base.std():.2f} "
             f"over {len(DESK_SEEDS)} seeds; gap {gap:.2f} pts "
             f"(need >= 5), slowest run {slowest:.1f} min (cap 30)")


def test_criterion_7_trend_d_probe_localization(desk_runs):
    votes = []
    detail = []
    for r in desk_runs["baseline"]:
        model, _ = load_model(r["ckpt"])
        rep = probe_grid(model, desk_runs["splits"]["train"], desk_runs["splits"]["test"],
                         seed=r["seed"], epochs=12, lr=1e-2)
        tex = rep.best_block("texture_color")
        pos = rep.best_block("digit_position")
        votes.append(tex < pos)
        detail.append(f"s{r['seed']}: texture_color@{tex} digit_position@{pos}")
    ok = sum(votes) * 2 > len(votes)
    _verdict(7, "trend D (bias cue decodable earlier)", ok,
             f"{sum(votes)}/{len(votes)} seeds place texture_color strictly "
             f"earlier ({'; '.join(detail)})")


# -- criterion 5: bias-count sweep ------------------------------------------------


def test_criterion_5_trend_b_bias_count(tmp_path):
    cfg = TrainConfig(epochs_initial=SWEEP_EPOCHS[0],
                      epochs_counterfactual=SWEEP_EPOCHS[1], seed=0)
    rows = sweep_bias_count(counts=tuple(range(1, 8)), seeds=SWEEP_SEEDS, rho=0.95,
                            out_dir=str(tmp_path), spec_kw=SWEEP_KW,
                            model_config=ModelConfig(image_size=32), train_config=cfg)
    agg = {(r["count"], r["method"]): r for r in aggregate_sweep(rows)}
    base = [agg[(c, "baseline")] for c in range(1, 8)]
    pnd = [agg[(c, "pnd")] for c in range(1, 8)]

    # the count-1 baseline must clear chance by a wide margin, otherwise the
    # downward trend would be vacuously "non-increasing"
    informative = base[0]["mean_acc"] >= 0.25
    steps_ok = all(
        b1["mean_acc"] <= b0["mean_acc"] + (b0["std_acc"] ** 2 + b1["std_acc"] ** 2) ** 0.5
        for b0, b1 in zip(base, base[1:]))
    pnd_ok = all(
        p["mean_acc"] >= b["mean_acc"] - (p["std_acc"] ** 2 + b["std_acc"] ** 2) ** 0.5
        for p, b in zip(pnd[1:], base[1:]))
    curve = " ".join(f"{r['mean_acc']:.3f}" for r in base)
    ok = informative and steps_ok and pnd_ok
    _verdict(5, "trend B (bias count sweep)", ok,
             f"baseline curve [{curve}] non-increasing={steps_ok} "
             f"(count-1 {base[0]['mean_acc']:.3f} informative={informative}), "
             f"pnd >= baseline within 1 std at counts 2-7: {pnd_ok}")


# -- criterion 6: phase and gate ablations ----------------------------------------


def test_criterion_6_trend_c_ablations(tmp_path):
    e1, e2 = VARIANT_EPOCHS
    spec = DatasetSpec.with_first_biases(VARIANT_BIASES, **VARIANT_KW)
    paths = synthesize(spec, str(tmp_path / "data"))
    splits = {s: load(p) for s, p in paths.items()}
    variants = {
        "full": dict(epochs_initial=e1, epochs_counterfactual=e2),
        "initial_only": dict(epochs_initial=e1 + e2, epochs_counterfactual=0),
        "counterfactual_only": dict(epochs_initial=0, epochs_counterfactual=e1 + e2),
        "no_gate": dict(epochs_initial=e1, epochs_counterfactual=e2,
                        ablations=("gate",)),
    }
    accs = {}
    for name, kw in variants.items():
        vals = []
        for seed in VARIANT_SEEDS:
            out = str(tmp_path / f"{name}_s{seed}")
            rec = train_pnd(splits["train"], splits["val"],
                            ModelConfig(image_size=32),
                            TrainConfig(seed=seed, **kw), out)
            model, _ = load_model(rec.ckpt_best)
            vals.append(evaluate(model, splits["test"]).overall_acc)
        accs[name] = (float(np.mean(vals)), float(np.std(vals)))

    full_mean, full_std = accs["full"]
    informative = full_mean >= 0.3
    failures = []
    for name in ("initial_only", "counterfactual_only", "no_gate"):
        mean, std = accs[name]
        if full_mean < mean - (full_std ** 2 + std ** 2) ** 0.5:
            failures.append(name)
    detail = ", ".join(f"{k} {m:.3f}+/-{s:.3f}" for k, (m, s) in accs.items())
    ok = not failures and informative
    _verdict(6, "trend C (two-phase beats ablations)", ok,
             f"{detail}; full below (within 1 std): {failures or 'none'}, "
             f"informative={informative}")


# -- criterion 8: byte-identical reruns -------------------------------------------


def _run_cli(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "demix", *args],
                          capture_output=True, text=True, cwd=cwd)
    assert proc.returncode == 0, f"demix {' '.join(args)} failed:\n{proc.stderr}"


def _tree_hashes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            p = os.path.join(dirpath, name)
            with open(p, "rb") as f:
                out[os.path.relpath(p, root)] = hashlib.sha256(f.read()).hexdigest()
    return out


def test_criterion_8_reproducibility(tmp_path):
    cwd = str(tmp_path)
    model = {"image_size": 32, "block_channels": [4, 4, 8, 8],
             "expert_embed_dim": 8, "head_hidden": 4}
    for name, body in (
        ("pnd.json", {"alpha": [0.2, 2.0], "epochs_initial": 1, "epochs_counterfactual": 1,
                      "batch_size": 128, "model": model}),
        ("base.json", {"alpha": [0.2, 2.0], "epochs_initial": 1, "epochs_counterfactual": 0,
                       "batch_size": 128, "model": model}),
    ):
        with open(tmp_path / name, "w") as f:
            json.dump(body, f)

    # fixed inputs shared by every command under test
    _run_cli(["synth", "--train", "240", "--val", "120", "--test", "120",
              "--size", "32", "--rho", "0.9", "--seed", "5", "--out", "data"], cwd)
    _run_cli(["train", "--method", "pnd", "--data", "data", "--config", "pnd.json",
              "--seed", "0", "--out", "run_pnd"], cwd)
    _run_cli(["train", "--method", "baseline", "--data", "data", "--config", "base.json",
              "--seed", "0", "--out", "run_base"], cwd)

    commands = {
        "synth": ["synth", "--train", "120", "--val", "60", "--test", "60",
                  "--size", "32", "--rho", "0.9", "--seed", "7", "--out", "c_synth"],
        "train": ["train", "--method", "pnd", "--data", "data", "--config", "pnd.json",
                  "--seed", "1", "--out", "c_train"],
        "eval": ["eval", "--model", "run_pnd/ckpt_best", "--data", "data",
                 "--split", "test", "--out", "c_eval"],
        "probe": ["probe", "--model", "run_base/ckpt_best", "--data", "data",
                  "--seed", "3", "--out", "c_probe"],
        "sweep": ["sweep", "--counts", "1,2", "--seeds", "0", "--rho", "0.9",
                  "--train", "128", "--val", "64", "--test", "64",
                  "--size", "32", "--config", "pnd.json", "--seed", "0",
                  "--out", "c_sweep"],
        "report": ["report", "--runs", "run_pnd", "run_base", "--format", "all",
                   "--out", "c_report"],
    }
    diffs = []
    for name, args in commands.items():
        out_dir = tmp_path / args[args.index("--out") + 1]
        _run_cli(args, cwd)
        first = _tree_hashes(out_dir)
        shutil.rmtree(out_dir)
        _run_cli(args, cwd)
        second = _tree_hashes(out_dir)
        if first != second:
            changed = sorted(k for k in set(first) | set(second)
                             if first.get(k) != second.get(k))
            diffs.append(f"{name}: {', '.join(changed[:4])}")
    ok = not diffs
    _verdict(8, "reproducibility", ok,
             "all six commands byte-identical across reruns" if ok
             else f"diffs in {'; '.join(diffs)}")
