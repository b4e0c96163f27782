import numpy as np
import pytest

from csnln import ops
from csnln.attention import correlation_map
from csnln.data import degrade_float, synthetic_textures
from csnln.network import (PAPER, TOY, ModelConfig, forward, head, init_csnln, parameter_report, params_from_arrays,
                           params_to_arrays, preset, step)
from csnln.params import cast_tensors, count_parameters, named_tensors, replace_tensors
from csnln.tensor import GradTape, Tensor, backward

from conftest import randt


def toy(seed=0, **overrides):
    return init_csnln(preset("toy", **overrides), seed=seed, dtype=np.float64)


@pytest.mark.parametrize("scale", [2, 3])
def test_forward_shape(rng, scale):
    params = toy(scale=scale)
    out = forward(randt(rng, 2, 3, 3 * scale, 4 * scale), params)
    assert out.shape == (2, 3, 3 * scale * scale, 4 * scale * scale)


def test_single_recurrence(rng):
    params = toy(recurrence=1)
    assert params.tail.weight.shape[1] == TOY.channels
    assert forward(randt(rng, 1, 3, 6, 6), params).shape == (1, 3, 12, 12)


def test_head_rejects_wrong_channels(rng):
    with pytest.raises(ValueError):
        head(randt(rng, 1, 4, 6, 6), toy())


def test_step_is_pure(rng):
    params = toy()
    L = randt(rng, 1, TOY.channels, 6, 6)
    H1, L1 = step(L, params)
    H2, L2 = step(L, params)
    np.testing.assert_array_equal(H1.data, H2.data)
    np.testing.assert_array_equal(L1.data, L2.data)
    assert H1.shape == (1, TOY.channels, 12, 12) and L1.shape == L.shape


def test_forward_equals_explicit_unroll(rng):
    params = toy()
    x = randt(rng, 1, 3, 6, 6)
    L = head(x, params)
    hidden = []
    for _ in range(TOY.recurrence):
        H, L = step(L, params)
        hidden.append(H)
    expect = params.tail(ops.concat(hidden, axis=1))
    np.testing.assert_array_equal(forward(x, params).data, expect.data)


def test_shared_cell_gradient_is_sum_over_iterations(rng):
    params = toy()
    x = randt(rng, 1, 3, 6, 6)
    target = rng.standard_normal((1, 3, 12, 12))

    with GradTape() as tape:
        loss = ops.l1_loss(forward(x, params), target)
    shared = backward(loss, tape)

    # unroll with an independent copy of the cell weights in each iteration
    copies = [cast_tensors(params.sem, np.float64) for _ in range(TOY.recurrence)]
    with GradTape() as tape:
        L = head(x, params)
        hidden = []
        for sem in copies:
            H, L = step(L, params, sem=sem)
            hidden.append(H)
        loss2 = ops.l1_loss(params.tail(ops.concat(hidden, axis=1)), target)
    split = backward(loss2, tape)

    assert loss.item() == loss2.item()
    for (name, t), *per_copy in zip(named_tensors(params.sem), *(named_tensors(c) for c in copies)):
        total = sum(split[ct] for _, ct in per_copy)
        np.testing.assert_allclose(shared[t], total, atol=1e-12, err_msg=name)


def test_parameter_count_does_not_depend_on_recurrence_except_tail():
    a = parameter_report(init_csnln(preset("toy", recurrence=2)))
    b = parameter_report(init_csnln(preset("toy", recurrence=5)))
    for key in a:
        if key not in ("tail", "total"):
            assert a[key] == b[key], key
    assert b["tail"] - a["tail"] == 3 * TOY.channels * 9 * 3


def test_paper_preset_parameter_count_in_range():
    total = count_parameters(init_csnln(PAPER))
    assert 2_000_000 <= total <= 4_500_000
    assert total == 2_897_539


def test_toy_parameter_count():
    assert count_parameters(init_csnln(TOY)) == 46_067


def test_disabling_cross_scale_removes_parameters():
    full = count_parameters(init_csnln(TOY))
    ablated = init_csnln(TOY.without("csnl"))
    assert ablated.sem.csnl is None
    assert count_parameters(ablated) < full


def test_report_sums_to_total():
    report = parameter_report(init_csnln(TOY))
    assert sum(v for k, v in report.items() if k != "total") == report["total"]


def test_zero_input_and_zero_bias_give_zero_head():
    params = toy()
    assert all(not t.data.any() for n, t in named_tensors(params) if n.startswith("head") and n.endswith("bias"))
    out = head(Tensor(np.zeros((1, 3, 6, 6))), params)
    assert not out.data.any()


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(recurrence=0)
    with pytest.raises(ValueError):
        ModelConfig(channels=8, embed=16)
    with pytest.raises(ValueError):
        preset("huge")


def test_branch_order_is_canonical():
    assert ModelConfig(branches=("csnl", "local")).branches == ("local", "csnl")


def test_arrays_round_trip(rng):
    params = init_csnln(TOY, seed=3)
    back = params_from_arrays(params_to_arrays(params))
    assert back.config == params.config
    for (n1, t1), (n2, t2) in zip(named_tensors(params), named_tensors(back)):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)


def test_init_is_seeded():
    a, b = init_csnln(TOY, seed=1), init_csnln(TOY, seed=1)
    c = init_csnln(TOY, seed=2)
    np.testing.assert_array_equal(a.head1.weight.data, b.head1.weight.data)
    assert not np.array_equal(a.head1.weight.data, c.head1.weight.data)


def test_replace_tensors_leaves_original_untouched():
    params = toy()
    name, t = next(named_tensors(params))
    swapped = replace_tensors(params, {name: Tensor(np.zeros(t.shape))})
    assert params.head1.weight.data.any() and not swapped.head1.weight.data.any()


def test_fresh_cross_scale_attention_is_not_uniform():
    # scores near zero would leave every softmax flat and the branch without gradient
    params = init_csnln(TOY, seed=1)
    lr = degrade_float(synthetic_textures(1, seed=3)[0], 2)[None]
    w = correlation_map(head(Tensor(lr), params), params.sem.csnl, (5, 5)).data
    assert w.max() > 10 / w.size
