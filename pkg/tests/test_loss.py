import math

import numpy as np
import pytest

from upseg.errors import ConfigError, ShapeError, UsageError
from upseg.graph import UpscaleStackConfig, build_upscale_stack, forward_all_taps
from upseg.loss import LossConfig, l_sum, l_sum_components, resize_target
from upseg.tensor import Tensor, backward, cross_entropy, zero_grads


def test_default_weights_are_unit():
    cfg = LossConfig(num_stages=3)
    assert cfg.stage_weights == (1.0, 1.0, 1.0, 1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(num_stages=2, base_loss="hinge")
    with pytest.raises(ConfigError):
        LossConfig(num_stages=2, stage_weights=(1.0, 1.0))
    with pytest.raises(ConfigError):
        LossConfig(num_stages=1, stage_weights=(1.0, -0.5))


def test_resize_target_keeps_top_left_sample():
    mask = np.array([[[1, 0, 2, 2],
                      [0, 0, 2, 2],
                      [0, 3, 0, 0],
                      [3, 3, 0, 0]]])
    out = resize_target(mask, stage=0, num_stages=1)
    assert np.array_equal(out, [[[1, 2], [0, 0]]])


def test_resize_target_identity_at_top_stage():
    mask = np.arange(16).reshape(1, 4, 4) % 2
    out = resize_target(mask, stage=2, num_stages=2)
    assert np.array_equal(out, mask)


def test_resize_target_validation():
    mask = np.zeros((1, 4, 4), dtype=np.int64)
    with pytest.raises(UsageError):
        resize_target(mask, stage=3, num_stages=2)
    with pytest.raises(UsageError):
        resize_target(mask, stage=-1, num_stages=2)
    with pytest.raises(ShapeError):
        resize_target(np.zeros((1, 6, 6), dtype=np.int64), stage=0,
                      num_stages=2)


def _random_taps(rng, num_stages, channels=1, batch=2, base=4):
    taps = []
    for s in range(num_stages + 1):
        res = base * 2 ** s
        taps.append(Tensor(rng.normal(size=(batch, channels, res, res)),
                           requires_grad=True))
    return taps


def test_total_equals_sum_of_independent_stage_losses(rng):
    taps = _random_taps(rng, num_stages=2)
    mask = rng.integers(0, 2, size=(2, 16, 16))
    weights = (0.3, 1.25, 2.0)
    cfg = LossConfig(num_stages=2, stage_weights=weights)
    total, per_stage = l_sum_components(taps, mask, cfg)
    by_hand = sum(
        w * cross_entropy(t, resize_target(mask, s, 2)).item()
        for s, (t, w) in enumerate(zip(taps, weights)))
    assert math.isclose(total.item(), by_hand, rel_tol=0, abs_tol=1e-12)
    for s, t in enumerate(taps):
        expected = cross_entropy(t, resize_target(mask, s, 2)).item()
        assert math.isclose(per_stage[s], expected, rel_tol=0, abs_tol=1e-15)


def test_zero_logits_binary_total_is_stage_count_times_ln2(rng):
    taps = [Tensor(np.zeros((1, 1, 4 * 2 ** s, 4 * 2 ** s)),
                   requires_grad=True) for s in range(3)]
    mask = rng.integers(0, 2, size=(1, 16, 16))
    total = l_sum(taps, mask, LossConfig(num_stages=2))
    assert math.isclose(total.item(), 3 * math.log(2.0), abs_tol=1e-12)


def test_zero_stage_total_is_plain_cross_entropy_bit_for_bit(rng):
    tap = Tensor(rng.normal(size=(2, 1, 8, 8)), requires_grad=True)
    mask = rng.integers(0, 2, size=(2, 8, 8))
    total = l_sum([tap], mask, LossConfig(num_stages=0))
    plain = cross_entropy(tap, mask)
    assert total.item() == plain.item()

    zero_grads([tap])
    backward(total)
    g_sum = tap.grad.copy()
    zero_grads([tap])
    backward(plain)
    assert np.array_equal(g_sum, tap.grad)


def test_zeroed_stage_weights_match_single_stage_gradient(rng, tiny_backbone):
    graph = build_upscale_stack(tiny_backbone,
                                UpscaleStackConfig(num_stages=2), seed=7)
    x = rng.normal(size=(1, 1, 4, 4))
    mask = rng.integers(0, 2, size=(1, 16, 16))
    params = graph.parameters()

    def grads_for(weights):
        zero_grads(params)
        taps = forward_all_taps(graph, x)
        cfg = LossConfig(num_stages=2, stage_weights=weights)
        backward(l_sum([taps[s] for s in range(3)], mask, cfg))
        return {p.name: p.tensor.grad.copy() for p in params}

    only_top = grads_for((0.0, 0.0, 1.0))
    zero_grads(params)
    taps = forward_all_taps(graph, x)
    backward(cross_entropy(taps[2], mask))
    direct = {p.name: p.tensor.grad.copy() for p in params}
    for name, g in direct.items():
        assert np.allclose(only_top[name], g, atol=1e-15)


def test_multiclass_stage_losses(rng):
    taps = _random_taps(rng, num_stages=1, channels=3)
    mask = rng.integers(0, 3, size=(2, 8, 8))
    total, per_stage = l_sum_components(taps, mask,
                                        LossConfig(num_stages=1))
    assert total.item() == pytest.approx(sum(per_stage), abs=1e-12)
    assert all(v > 0 for v in per_stage)


def test_tap_count_mismatch_rejected(rng):
    taps = _random_taps(rng, num_stages=1)
    mask = rng.integers(0, 2, size=(2, 8, 8))
    with pytest.raises(ConfigError):
        l_sum(taps, mask, LossConfig(num_stages=2))


def test_tap_resolution_mismatch_rejected(rng):
    taps = _random_taps(rng, num_stages=1)
    mask = rng.integers(0, 2, size=(2, 16, 16))   # expects 8x8 at the top
    with pytest.raises(ShapeError):
        l_sum(taps, mask, LossConfig(num_stages=1))
