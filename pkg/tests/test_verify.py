import numpy as np
import pytest

from csnln import ops
from csnln.verify import GRAD_TOL, gradcheck_cases, random_oracle_setup, run_gradcheck, run_oracle

DIFFERENTIABLE_OPS = {"add", "sub", "mul", "div", "abs", "sum", "mean", "relu", "prelu", "softmax", "l1_loss",
                      "matmul", "reshape", "transpose", "getitem", "concat", "pad", "index_select",
                      "extract_patches", "fold_patches", "conv2d", "conv_transpose2d", "bilinear_resize"}


def test_every_differentiable_op_has_a_case():
    names = set(gradcheck_cases(0))
    assert DIFFERENTIABLE_OPS <= names
    assert {"in_scale_nonlocal", "naive_cross_scale", "cross_scale_pixel", "cross_scale_patch",
            "sem_forward", "network_toy"} <= names


def test_selected_checks_pass():
    results = run_gradcheck(only=["softmax", "conv_transpose2d", "fold_patches"])
    assert [r.name for r in results] == ["softmax", "conv_transpose2d", "fold_patches"]
    assert all(r.passed and r.tolerance == GRAD_TOL for r in results)


def test_broken_op_is_detected_and_restored():
    original = ops.mul
    [res] = run_gradcheck(only=["mul"], broken="mul")
    assert not res.passed and res.error > 1e-3
    assert ops.mul is original
    [res] = run_gradcheck(only=["mul"])
    assert res.passed


def test_break_hook_from_environment(monkeypatch):
    monkeypatch.setenv("CSNLN_GRADCHECK_BREAK", "conv2d")
    [res] = run_gradcheck(only=["conv2d"])
    assert not res.passed


def test_unknown_break_target():
    with pytest.raises(ValueError):
        run_gradcheck(only=["mul"], broken="no_such_op")


def test_oracle_setup_respects_bounds():
    for seed in range(40):
        x, params = random_oracle_setup(seed)
        n, c, h, w = x.shape
        assert n <= 2 and c <= 4 and h <= 12 and w <= 12
        assert params.scale in (2, 3) and params.patch in (1, 3)
        assert params.patch <= min(h // params.scale, w // params.scale)


def test_oracle_run_reports_all_comparisons():
    seen = []
    results = run_oracle(3, report=seen.append, first_seed=5)
    assert seen == results and len(results) == 12
    assert all(r.passed for r in results)
    assert {r.dtype for r in results} == {"float32", "float64"}
    assert any(r.name.startswith("patch(p=1)") for r in results)
    assert any(r.name.startswith("naive(s=1)") for r in results)
    assert max(r.divergence for r in results if r.dtype == "float32") < 1e-5
    assert np.isfinite([r.divergence for r in results]).all()
