import numpy as np
import pytest

from csnln import ops
from csnln.attention import cross_scale_patch
from csnln.params import Conv, activation, init_conv, replace_tensors
from csnln.sem import back_project, branch_isnl, init_sem, mutual_project, projection_geometry, sem_forward
from csnln.tensor import Tensor

from conftest import randt


def make_sem(seed=0, branches=("local", "isnl", "csnl"), scale=2, channels=4):
    return init_sem(np.random.default_rng(seed), channels, 2, scale, grid=(1, 1), branches=branches,
                    dtype=np.float64)


def zeroed(conv: Conv) -> Conv:
    return replace_tensors(conv, {"weight": Tensor(np.zeros(conv.weight.shape)),
                                  "bias": Tensor(np.zeros(conv.bias.shape))})


def test_mutual_project_with_zero_fuse_returns_F_I(rng):
    sem = make_sem()
    F_I, F_C = randt(rng, 1, 4, 8, 8), randt(rng, 1, 4, 8, 8)
    out = mutual_project(F_I, F_C, zeroed(sem.fuse), sem.fuse_act)
    np.testing.assert_array_equal(out.data, F_I.data)


def test_mutual_project_residual_is_conv_of_difference(rng):
    sem = make_sem()
    F_I, F_C = randt(rng, 2, 4, 8, 6), randt(rng, 2, 4, 8, 6)
    out = mutual_project(F_I, F_C, sem.fuse, sem.fuse_act)
    expect = activation(sem.fuse(Tensor(F_I.data - F_C.data)), sem.fuse_act).data
    np.testing.assert_allclose(out.data - F_I.data, expect, atol=1e-12)


def test_mutual_project_shape_mismatch(rng):
    sem = make_sem()
    with pytest.raises(ValueError):
        mutual_project(randt(rng, 1, 4, 8, 8), randt(rng, 1, 4, 8, 6), sem.fuse)


def test_back_project_residual_is_upsampled_error(rng):
    sem = make_sem()
    F_L, F_IC = randt(rng, 1, 4, 5, 6), randt(rng, 1, 4, 10, 12)
    H = back_project(F_L, F_IC, sem.down_proj, sem.up_proj, sem.up_act)
    e = F_L.data - sem.down_proj(F_IC).data
    expect = activation(sem.up_proj(Tensor(e)), sem.up_act).data
    np.testing.assert_allclose(H.data - F_IC.data, expect, atol=1e-12)


def test_back_project_with_zero_up_projection_is_identity(rng):
    sem = make_sem()
    F_IC = randt(rng, 1, 4, 10, 12)
    H = back_project(randt(rng, 1, 4, 5, 6), F_IC, sem.down_proj, zeroed(sem.up_proj), sem.up_act)
    np.testing.assert_array_equal(H.data, F_IC.data)


def test_back_project_size_mismatch(rng):
    sem = make_sem()
    with pytest.raises(ValueError):
        back_project(randt(rng, 1, 4, 4, 6), randt(rng, 1, 4, 10, 12), sem.down_proj, sem.up_proj)


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_sem_output_is_hr(rng, scale):
    L = randt(rng, 2, 4, 3 * scale, 3 * scale)
    H = sem_forward(L, make_sem(scale=scale))
    assert H.shape == (2, 4, 3 * scale * scale, 3 * scale * scale)


def test_without_isnl_and_local_is_cross_scale_branch(rng):
    sem = make_sem(branches=("csnl",))
    L = randt(rng, 1, 4, 8, 8)
    np.testing.assert_array_equal(sem_forward(L, sem).data, cross_scale_patch(L, sem.csnl).data)


def test_without_csnl_and_local_is_in_scale_branch(rng):
    sem = make_sem(branches=("isnl",))
    L = randt(rng, 1, 4, 8, 8)
    np.testing.assert_array_equal(sem_forward(L, sem).data, branch_isnl(L, sem).data)


def test_without_local_is_fused_features(rng):
    sem = make_sem(branches=("isnl", "csnl"))
    L = randt(rng, 1, 4, 8, 8)
    expect = mutual_project(branch_isnl(L, sem), cross_scale_patch(L, sem.csnl), sem.fuse, sem.fuse_act)
    np.testing.assert_array_equal(sem_forward(L, sem).data, expect.data)


def test_single_hr_branch_with_local_back_projects(rng):
    sem = make_sem(branches=("local", "csnl"))
    L = randt(rng, 1, 4, 8, 8)
    F_C = cross_scale_patch(L, sem.csnl)
    expect = back_project(L, F_C, sem.down_proj, sem.up_proj, sem.up_act)
    np.testing.assert_array_equal(sem_forward(L, sem).data, expect.data)


def test_disabled_branches_drop_their_parameters():
    sem = make_sem(branches=("local", "isnl"))
    assert sem.csnl is None and sem.fuse is None and sem.fuse_act is None
    assert sem.isnl is not None and sem.isnl_upscale is not None
    sem = make_sem(branches=("isnl", "csnl"))
    assert not sem.local and sem.down_proj is None and sem.up_proj is None


def test_sem_requires_an_hr_branch():
    with pytest.raises(ValueError):
        make_sem(branches=("local",))
    with pytest.raises(ValueError):
        make_sem(branches=("local", "bogus"))


@pytest.mark.parametrize("scale", [2, 3, 4, 5])
def test_projection_geometry_maps_sizes_exactly(rng, scale):
    k, pad = projection_geometry(scale)
    rng_ = np.random.default_rng(scale)
    down = init_conv(rng_, 2, 2, k, stride=scale, pad=pad, dtype=np.float64)
    up = init_conv(rng_, 2, 2, k, stride=scale, pad=pad, transposed=True, dtype=np.float64)
    for h, w in [(4, 5), (7, 3)]:
        assert down(randt(rng, 1, 2, scale * h, scale * w)).shape == (1, 2, h, w)
        assert up(randt(rng, 1, 2, h, w)).shape == (1, 2, scale * h, scale * w)


def test_projection_geometry_rejects_scale_one():
    with pytest.raises(ValueError):
        projection_geometry(1)


def test_sem_is_differentiable_end_to_end(rng):
    from csnln.tensor import GradTape, backward

    sem = make_sem()
    L = randt(rng, 1, 4, 6, 6, requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.mul(sem_forward(L, sem), 0.5))
    grads = backward(loss, tape)
    assert grads[L].shape == L.shape and np.isfinite(grads[L]).all()
    assert grads[sem.csnl.theta.weight].any()
