"""Architecture contracts: shapes, parameter censuses, gate, and stop-gradients."""

import numpy as np
import pytest

import demix.tensor as T
from demix.model import BaselineClassifier, ModelConfig, PnDModel
from demix.tensor import ShapeError, Tensor

from conftest import micro_model_config


@pytest.fixture(scope="module")
def micro_model():
    return PnDModel(micro_model_config(), np.random.default_rng(0))


@pytest.fixture(scope="module")
def micro_batch(rng=None):
    g = np.random.default_rng(1)
    return g.random((4, 3, 32, 32), dtype=np.float32)


def test_config_validation():
    with pytest.raises(ValueError, match="m_experts"):
        ModelConfig(m_experts=0, block_channels=())
    with pytest.raises(ValueError, match="block_channels"):
        ModelConfig(m_experts=3)
    with pytest.raises(ShapeError):
        ModelConfig(image_size=16)
    with pytest.raises(ValueError, match="counterfactual_head"):
        ModelConfig(counterfactual_head="nope")


def test_config_round_trip():
    cfg = ModelConfig(image_size=32, shared_expert_trunk=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_default_strides_keep_two_early_blocks_full_resolution():
    cfg = ModelConfig()
    assert cfg.resolved_strides() == (1, 1, 2, 2)
    assert cfg.block_spatial_sizes() == (16, 16, 8, 4)


def test_forward_shapes(micro_model, micro_batch):
    out = micro_model.forward(micro_batch)
    m = micro_model.config.m_experts
    n, c = micro_batch.shape[0], micro_model.config.n_classes
    assert len(out.y_d_logits) == m and len(out.y_b_logits) == m
    for yd, yb in zip(out.y_d_logits, out.y_b_logits):
        assert yd.shape == (n, c) and yb.shape == (n, c)
    assert out.gate_p.shape == (n, m)
    assert out.y_mixed.shape == (n, c)


def test_gate_rows_on_simplex(micro_model, micro_batch):
    out = micro_model.forward(micro_batch)
    p = out.gate_p.numpy()
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), np.ones(len(p)), rtol=1e-5)


def test_mixture_is_gate_weighted_expert_sum(micro_model, micro_batch):
    out = micro_model.forward(micro_batch)
    p = out.gate_p.numpy()
    stack = np.stack([y.numpy() for y in out.y_d_logits], axis=1)  # (N, M, C)
    np.testing.assert_allclose(out.y_mixed.numpy(), (p[:, :, None] * stack).sum(axis=1),
                               rtol=1e-4, atol=1e-5)


def test_batch_validation(micro_model):
    with pytest.raises(ShapeError):
        micro_model.forward(np.zeros((4, 1, 32, 32), dtype=np.float32))
    with pytest.raises(ShapeError):
        micro_model.forward(np.zeros((4, 3, 16, 16), dtype=np.float32))
    with pytest.raises(ShapeError):
        micro_model.forward(np.zeros((3, 32, 32), dtype=np.float32))


def test_parameter_disjointness(micro_model):
    """Encoders, experts, and gate own disjoint parameter sets; totals add up."""
    names = [n for n, _ in micro_model.named_parameters()]
    assert len(names) == len(set(names))
    groups = {"encoder_d": 0, "encoder_b": 0, "gate": 0, "expert": 0}
    for n, p in micro_model.named_parameters():
        for g in groups:
            if n.startswith(g):
                groups[g] += p.size
                break
        else:
            raise AssertionError(f"unclassified parameter {n}")
    total = sum(p.size for _, p in micro_model.named_parameters())
    assert sum(groups.values()) == total
    assert groups["encoder_d"] == groups["encoder_b"]
    assert groups["gate"] > 0


def test_baseline_has_no_expert_or_gate_parameters():
    model = BaselineClassifier(micro_model_config(), np.random.default_rng(0))
    names = [n for n, _ in model.named_parameters()]
    assert not any("expert" in n or "gate" in n for n in names)
    assert any(n.startswith("encoder.") for n in names)
    assert any(n.startswith("head.") for n in names)


def test_shared_trunk_halves_trunk_parameters():
    cfg_sep = micro_model_config()
    cfg_sh = micro_model_config(shared_expert_trunk=True)
    count = lambda m: sum(p.size for n, p in m.named_parameters() if ".trunk" in n)
    sep = count(PnDModel(cfg_sep, np.random.default_rng(0)))
    sh = count(PnDModel(cfg_sh, np.random.default_rng(0)))
    assert sh == sep // 2


def test_state_round_trip(micro_model, micro_batch):
    arrays = micro_model.state_arrays()
    clone = PnDModel(micro_model.config, np.random.default_rng(99))
    clone.load_state_arrays(arrays)
    micro_model.eval(), clone.eval()
    with T.no_grad():
        a = micro_model.forward(micro_batch).y_mixed.numpy()
        b = clone.forward(micro_batch).y_mixed.numpy()
    np.testing.assert_array_equal(a, b)


def test_load_state_rejects_missing_and_misshaped():
    model = PnDModel(micro_model_config(), np.random.default_rng(0))
    arrays = model.state_arrays()
    incomplete = dict(list(arrays.items())[:-1])
    with pytest.raises(KeyError):
        model.load_state_arrays(incomplete)
    bad = dict(arrays)
    first = next(iter(bad))
    bad[first] = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValueError, match="shape"):
        model.load_state_arrays(bad)


# -- stop-gradient routing -----------------------------------------------------------


def _forward_phase1_loss(model, x, y):
    import demix.losses as L

    out = model.forward(x)
    l_bias = L.loss_bias(out.y_b_logits, y, 0.7)
    l_debias, w = L.loss_debias(out.y_d_logits, out.y_b_logits, y)
    l_gate = L.loss_gate(out.y_mixed, y)
    l_div = L.loss_div(out.y_b_logits)
    return L.total_loss("initial", l_bias, l_debias, l_div, None, l_gate, 0.2, 4.0), out


def test_debiased_head_isolated_from_bias_encoder_via_gce_path(micro_model, micro_batch):
    """Expert heads read the partner branch only through detached embeddings:
    the bias encoder gets no gradient from the debiased CE term and vice versa."""
    import demix.losses as L

    model = micro_model
    model.train()
    y = np.arange(4) % 10
    out = model.forward(micro_batch)
    l_debias, _ = L.loss_debias(out.y_d_logits, out.y_b_logits, y)
    model.zero_grad()
    l_debias.backward()
    grads_b = [p.grad for n, p in model.named_parameters() if n.startswith("encoder_b")]
    assert all(g is None or not np.any(g) for g in grads_b)
    grads_d = [p.grad for n, p in model.named_parameters() if n.startswith("encoder_d")]
    assert any(g is not None and np.any(g) for g in grads_d)


def test_bias_loss_isolated_from_debiased_encoder(micro_model, micro_batch):
    import demix.losses as L

    model = micro_model
    model.train()
    y = np.arange(4) % 10
    out = model.forward(micro_batch)
    l_bias = L.loss_bias(out.y_b_logits, y, 0.7)
    model.zero_grad()
    l_bias.backward()
    grads_d = [p.grad for n, p in model.named_parameters() if n.startswith("encoder_d")]
    assert all(g is None or not np.any(g) for g in grads_d)
    grads_b = [p.grad for n, p in model.named_parameters() if n.startswith("encoder_b")]
    assert any(g is not None and np.any(g) for g in grads_b)


def test_gate_loss_never_reaches_bias_branch(micro_model, micro_batch):
    """L_gate flows into the gate and, through the live mixture, the debiased
    side; the bias branch only ever enters detached, so it gets nothing."""
    import demix.losses as L

    model = micro_model
    model.train()
    y = np.arange(4) % 10
    out = model.forward(micro_batch)
    l_gate = L.loss_gate(out.y_mixed, y)
    model.zero_grad()
    l_gate.backward()
    gate_grads = [p.grad for n, p in model.named_parameters() if n.startswith("gate")]
    assert all(g is not None and np.any(g) for g in gate_grads)
    bias_side = [p.grad for n, p in model.named_parameters()
                 if n.startswith("encoder_b") or ".trunk_b" in n or ".head_b" in n]
    assert all(g is None or not np.any(g) for g in bias_side)
    debias_side = [p.grad for n, p in model.named_parameters() if n.startswith("encoder_d")]
    assert any(g is not None and np.any(g) for g in debias_side)


def test_gate_input_path_carries_no_gradient(micro_model, micro_batch):
    """Freezing gate_p to its value changes no expert gradient: the gate's
    input (detached logits) contributes nothing to the experts' grads."""
    import demix.losses as L
    from demix.tensor import tsum

    model = micro_model
    model.train()
    y = np.arange(4) % 10

    out = model.forward(micro_batch)
    pvals = out.gate_p.numpy().copy()
    mix = None
    for i in range(pvals.shape[1]):
        term = out.y_d_logits[i] * Tensor(pvals[:, i:i + 1].copy())
        mix = term if mix is None else mix + term
    model.zero_grad()
    L.loss_gate(mix, y).backward()
    frozen_grads = {n: p.grad.copy() for n, p in model.named_parameters()
                    if ".head_d" in n and p.grad is not None}
    assert frozen_grads

    out = model.forward(micro_batch)
    model.zero_grad()
    L.loss_gate(out.y_mixed, y).backward()
    for n, p in model.named_parameters():
        if n in frozen_grads:
            np.testing.assert_allclose(p.grad, frozen_grads[n], rtol=1e-4, atol=1e-6)


def test_full_loss_reaches_every_parameter(micro_model, micro_batch):
    """The phase-1 total touches all components (no dead parameters)."""
    model = micro_model
    model.train()
    y = np.arange(4) % 10
    total, _ = _forward_phase1_loss(model, micro_batch, y)
    model.zero_grad()
    total.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None]
    assert dead == []


def test_head_width_mismatch_raises():
    cfg = micro_model_config()
    model = PnDModel(cfg, np.random.default_rng(0))
    e = model.expert1
    bad = Tensor(np.zeros((2, cfg.expert_embed_dim + 1), dtype=np.float32))
    good = Tensor(np.zeros((2, cfg.expert_embed_dim), dtype=np.float32))
    with pytest.raises(ShapeError):
        e.head_d(bad, good)
