import math

import numpy as np
import pytest
import torch

from _oracles import ce_log_dice_scalar, fd_relative_error
from cataractkit.errors import ConfigError
from cataractkit.losses import (
    LossWeights, ce_log_dice, contrastive_loss, cosine_similarity, downscale_truth, pyramid_loss,
)


def randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_perfect_prediction_is_zero():
    ones = torch.ones(2, 2, dtype=torch.float64)
    assert ce_log_dice(ones, ones).item() == pytest.approx(0.0, abs=1e-6)


def test_half_prediction_matches_scalar_oracle():
    oracle = ce_log_dice_scalar([0.5] * 4, [1] * 4)
    assert oracle == pytest.approx(0.8 * math.log(2) - 0.2 * math.log2(5 / 7), abs=1e-12)
    got = ce_log_dice(torch.full((2, 2), 0.5, dtype=torch.float64), torch.ones(2, 2, dtype=torch.float64))
    assert got.item() == pytest.approx(oracle, abs=1e-5)
    assert got.item() == pytest.approx(0.65160, abs=1e-5)


def test_multiclass_two_class_layout_agrees_with_binary():
    pred = torch.full((1, 2, 2, 2), 0.5, dtype=torch.float64)
    truth = torch.ones(1, 2, 2, dtype=torch.long)
    assert ce_log_dice(pred, truth).item() == pytest.approx(0.6516031, abs=1e-6)


def test_all_zero_truth_and_prediction_log_term_vanishes():
    z = torch.zeros(3, 3, dtype=torch.float64)
    assert ce_log_dice(z, z).item() == pytest.approx(0.0, abs=1e-5)


def test_random_instances_match_scalar_oracle():
    for seed in range(5):
        p = rand(10, seed=seed) * 0.98 + 0.01
        t = (rand(10, seed=seed + 100) > 0.5).double()
        ours = ce_log_dice(p, t).item()
        assert ours == pytest.approx(ce_log_dice_scalar(p.tolist(), t.tolist()), abs=1e-10)


def test_loss_decreases_toward_truth():
    for seed in range(10):
        t = (rand(4, 4, seed=seed) > 0.5).double()
        losses = [ce_log_dice(0.5 + a * (t - 0.5) * 0.99, t).item() for a in np.linspace(0, 1, 21)]
        assert all(b < a for a, b in zip(losses, losses[1:]))


def test_rejects_out_of_range_probabilities():
    with pytest.raises(ConfigError):
        ce_log_dice(torch.full((2, 2), 1.5), torch.ones(2, 2))


def test_downscale_binary_examples():
    m = torch.tensor([[1, 0], [0, 0]])
    assert downscale_truth(m, 2).tolist() == [[1]]
    z = torch.zeros(8, 8, dtype=torch.long)
    for f in (1, 2, 4, 8):
        assert downscale_truth(z, f).sum() == 0


def test_downscale_binary_never_loses_a_positive():
    gen = np.random.default_rng(0)
    for _ in range(50):
        m = torch.tensor(gen.random((16, 16)) < 0.03).long()
        for f in (2, 4, 8):
            d = downscale_truth(m, f)
            for y in range(16 // f):
                for x in range(16 // f):
                    assert d[y, x].item() == int(m[y * f:(y + 1) * f, x * f:(x + 1) * f].any())


def test_downscale_multiclass_top_left_convention():
    m = torch.arange(4).view(4, 1).expand(4, 4)
    d = downscale_truth(m, 2, "multiclass")
    oracle = [[m[2 * y, 2 * x].item() for x in range(2)] for y in range(2)]
    assert d.tolist() == oracle == [[0, 0], [2, 2]]


def test_pyramid_weights_sum_on_unit_case(monkeypatch):
    import cataractkit.losses as L

    monkeypatch.setattr(L, "ce_log_dice", lambda out, t, w: torch.tensor(1.0))
    outs = [torch.zeros(1, 2, 16 // 2 ** i, 16 // 2 ** i) for i in range(4)]
    assert L.pyramid_loss(outs, torch.zeros(1, 16, 16, dtype=torch.long)).item() == pytest.approx(2.5)


def test_pyramid_perfect_predictions_zero():
    truth = torch.zeros(1, 16, 16, dtype=torch.long)
    truth[:, 4:12, 2:10] = 1
    outs = [torch.nn.functional.one_hot(downscale_truth(truth, 2 ** i), 2).movedim(-1, 1).double()
            for i in range(4)]
    assert pyramid_loss(outs, truth).item() == pytest.approx(0.0, abs=1e-5)


def test_pyramid_is_weighted_sum_of_scale_losses():
    truth = (rand(2, 16, 16, seed=3) > 0.6).long()
    outs = [torch.softmax(randn(2, 2, 16 // 2 ** i, 16 // 2 ** i, seed=i), 1) for i in range(4)]
    w = LossWeights()
    expected = sum(wi * ce_log_dice(o, downscale_truth(truth, 2 ** i), w)
                   for i, (o, wi) in enumerate(zip(outs, (1, 0.75, 0.5, 0.25))))
    assert pyramid_loss(outs, truth, w).item() == pytest.approx(expected.item(), abs=1e-12)


def test_pyramid_needs_four_scales():
    with pytest.raises(ConfigError):
        pyramid_loss([torch.zeros(1, 2, 4, 4)], torch.zeros(1, 4, 4, dtype=torch.long))


def test_contrastive_zero_similarities_is_ln4():
    e1 = torch.tensor([1.0, 0, 0, 0], dtype=torch.float64)
    e2 = torch.tensor([0, 1.0, 0, 0], dtype=torch.float64)
    e3 = torch.tensor([0, 0, 1.0, 0], dtype=torch.float64)
    e4 = torch.tensor([0, 0, 0, 1.0], dtype=torch.float64)
    for tau in (0.1, 0.5, 2.0):
        got = contrastive_loss(e1, e2, e3, e4, LossWeights(tau=tau)).item()
        assert got == pytest.approx(math.log(4), abs=1e-6)


def test_contrastive_colinear_positive_opposed_negatives():
    # scalar oracle: positive sim 1, all four cross sims -1, tau 1
    oracle = -math.log(math.exp(1) / (4 * math.exp(-1)))
    v = torch.tensor([1.0, 2.0, -0.5], dtype=torch.float64)
    got = contrastive_loss(v, 3 * v, -v, -2 * v, LossWeights(tau=1.0)).item()
    assert got == pytest.approx(oracle, abs=1e-9)


def test_cosine_self_similarity():
    for seed in range(5):
        x = randn(7, seed=seed)
        assert cosine_similarity(x, x).item() == pytest.approx(1.0, abs=1e-12)


def test_contrastive_invariant_to_positive_rescaling():
    e = [randn(3, 16, seed=s) for s in range(4)]
    base = contrastive_loss(*e).item()
    gen = np.random.default_rng(0)
    for i in range(4):
        scaled = list(e)
        scaled[i] = e[i] * torch.tensor(gen.uniform(0.1, 10, (3, 1)))
        assert contrastive_loss(*scaled).item() == pytest.approx(base, abs=1e-10)


def test_contrastive_zero_vector_without_guard_raises():
    z = torch.zeros(4)
    with pytest.raises(ConfigError):
        contrastive_loss(z, torch.ones(4), torch.ones(4), torch.ones(4), eps=0)


# --------------------------------------------------------------------------
# gradient checks
# --------------------------------------------------------------------------

def loss_gradient_errors():
    errs = {}
    logits = randn(2, 3, 4, 4, seed=1).requires_grad_(True)
    labels = torch.randint(0, 3, (2, 4, 4), generator=torch.Generator().manual_seed(2))
    errs["ce_log_dice_multiclass"] = fd_relative_error(lambda: ce_log_dice(torch.softmax(logits, 1), labels),
                                                       [logits])
    p = (rand(3, 5, seed=3) * 0.8 + 0.1).requires_grad_(True)
    t = (rand(3, 5, seed=4) > 0.5).double()
    errs["ce_log_dice_binary"] = fd_relative_error(lambda: ce_log_dice(p, t), [p])
    outs = [randn(1, 2, 16 // 2 ** i, 16 // 2 ** i, seed=10 + i).requires_grad_(True) for i in range(4)]
    truth = (rand(1, 16, 16, seed=5) > 0.5).long()
    errs["pyramid_loss"] = fd_relative_error(lambda: pyramid_loss([torch.softmax(o, 1) for o in outs], truth),
                                             outs)
    emb = [randn(4, 8, seed=20 + i).requires_grad_(True) for i in range(4)]
    errs["contrastive_loss"] = fd_relative_error(lambda: contrastive_loss(*emb), emb)
    return errs


def test_loss_gradients():
    for name, err in loss_gradient_errors().items():
        assert err <= 1e-4, name
