import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dcreg import losses as L
from dcreg.intervals import build_partition, index_of

from gradcheck import fd_grad, rel_err, smooth_at


def pair_from_error(E):
    E = np.asarray(E, dtype=np.float64)
    C = np.full(E.shape, 10.0)
    return C, C - E


LIN20 = build_partition("linear", 20, 20.0)


# -- L_reg ------------------------------------------------------------------

def test_reg_value():
    C, Chat = pair_from_error([[1, -2], [0, 3]])
    rep = L.l_reg(C, Chat)
    assert rep.value == 1.5
    np.testing.assert_array_equal(rep.grad, [[-0.25, 0.25], [0.0, -0.25]])


def test_reg_identity():
    C = np.arange(16.0).reshape(4, 4)
    rep = L.l_reg(C, C.copy())
    assert rep.value == 0 and not rep.grad.any()


def test_shape_mismatch():
    with pytest.raises(ValueError):
        L.l_reg(np.zeros((4, 4)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        L.l_dc(np.zeros((4, 4)), np.zeros((4, 3)), LIN20)


# -- classification -----------------------------------------------------------

def test_cls_uniform_logits():
    p = build_partition("linear", 3, 3.0)
    C = np.array([[0.0, 1.5], [3.0, 2.0]])
    rep = L.l_cls(C, np.zeros((2, 2, 4)), p)
    assert rep.value == pytest.approx(math.log(4))


def test_cls_margin_limit():
    p = build_partition("linear", 3, 3.0)
    C = np.array([[0.0, 1.5], [3.0, 2.0]])
    onehot = np.eye(4)[index_of(C, p)]
    values = [L.l_cls(C, m * onehot, p).value for m in (1, 5, 20, 50)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-20


def test_cls_gradient_is_softmax_minus_onehot():
    p = build_partition("linear", 3, 3.0)
    C = np.array([[2.5]])
    logits = np.array([[[0.1, 0.2, -0.3, 0.4]]])
    sm = np.exp(logits) / np.exp(logits).sum()
    rep = L.l_cls(C, logits, p)
    np.testing.assert_allclose(rep.grad, sm - np.eye(4)[3], rtol=1e-12)


def test_cls_rejects_bad_logits():
    with pytest.raises(ValueError):
        L.l_cls(np.zeros((2, 2)), np.zeros((2, 2, 3)), LIN20)
    with pytest.raises(ValueError):
        L.l_cls(np.zeros((1, 1)), np.full((1, 1, 21), np.nan), LIN20)


def test_classify_to_counts():
    p = build_partition("linear", 3, 3.0, [0, 0.7, 1.2, 2.9])
    logits = np.zeros((1, 3, 4))
    logits[0, 0, 0] = 1
    logits[0, 1, 2] = 1
    # third location: all tied -> lowest index
    out = L.classify_to_counts(logits, p)
    np.testing.assert_allclose(out, [[0.0, 1.2, 0.0]])


# -- L_dc ---------------------------------------------------------------------

def test_dc_in_interval_prediction():
    rep = L.l_dc(np.array([[2.5]]), np.array([[2.7]]), LIN20)
    assert rep.value == 0 and not rep.grad.any() and not rep.active_mask.any()


def test_dc_two_patches():
    rep = L.l_dc(np.array([[2.5, 5.2]]), np.array([[2.7, 6.5]]), LIN20)
    assert rep.value == pytest.approx(1.3, abs=1e-12)
    np.testing.assert_array_equal(rep.active_mask, [[False, True]])
    np.testing.assert_array_equal(rep.grad, [[0.0, 1.0]])


def test_dc_upper_boundary_is_in_interval():
    assert L.l_dc(np.array([[2.5]]), np.array([[3.0]]), LIN20).value == 0
    assert L.l_dc(np.array([[2.5]]), np.array([[2.0]]), LIN20).value == 0.5


def test_dc_zero_interval():
    assert L.l_dc(np.array([[0.0]]), np.array([[0.0]]), LIN20).value == 0
    assert L.l_dc(np.array([[0.0]]), np.array([[1e-6]]), LIN20).value == pytest.approx(1e-6)


def test_dc_fine_partition_equals_reg():
    rng = np.random.default_rng(0)
    C = rng.uniform(0, 20, (4, 4))
    Chat = C + rng.choice([-1, 1], (4, 4)) * rng.uniform(0.1, 3, (4, 4))
    fine = build_partition("linear", 100000, 20.0)
    assert L.l_dc(C, Chat, fine).value == L.l_reg(C, Chat).value
    np.testing.assert_array_equal(L.l_dc(C, Chat, fine).grad, L.l_reg(C, Chat).grad)


# -- global count losses -----------------------------------------------------

def test_lc_value_and_uniform_gradient():
    E = np.zeros((4, 4))
    E[0, 0], E[1, 1], E[2, 2] = 3.0, 2.8, -1.0
    C, Chat = pair_from_error(E)
    rep = L.l_c(C, Chat)
    assert rep.value == pytest.approx(0.3)
    np.testing.assert_array_equal(rep.grad, np.full((4, 4), -1 / 16))


def test_lc_zero_error():
    rep = L.l_c(*pair_from_error(np.zeros((4, 4))))
    assert rep.value == 0 and not rep.grad.any()


def test_bias0_example():
    rep = L.l_bias0(*pair_from_error([[3, 2, 1, -2]]))
    assert rep.value == pytest.approx(2.0)
    np.testing.assert_array_equal(rep.active_mask, [[True, True, True, False]])
    np.testing.assert_allclose(rep.grad, [[-1 / 3, -1 / 3, -1 / 3, 0]])


def test_bias0_degenerate():
    rep = L.l_bias0(*pair_from_error([[1, -1, 2, -2]]))
    assert rep.value == 0 and not rep.grad.any()


def test_bias0_same_sign_equals_mean_abs():
    E = -np.array([[0.5, 1.5, 2.0, 4.0]])
    assert L.l_bias0(*pair_from_error(E)).value == pytest.approx(np.abs(E).mean())


def test_select_lambda_example():
    lam, mask = L.select_lambda(np.array([3.0, 2.0, 1.0, -2.0]))
    assert lam == 2.0
    np.testing.assert_array_equal(mask, [True, True, False, False])


def test_select_lambda_negative_global_error():
    lam, mask = L.select_lambda(np.array([-3.0, -2.0, -1.0, 2.0]))
    assert lam == 2.0
    np.testing.assert_array_equal(mask, [True, True, False, False])


def test_select_lambda_single_and_empty():
    lam, mask = L.select_lambda(np.array([0.0, 5.0, 0.0]))
    assert lam == 5.0 and mask.tolist() == [False, True, False]
    lam, mask = L.select_lambda(np.zeros(4))
    assert lam == float("inf") and not mask.any()


def test_bias_lambda_example():
    assert L.l_bias_lambda(*pair_from_error([[3, 2, 1, -2]])).value == pytest.approx(2.5)


def test_bias_lambda_degenerate():
    assert L.l_bias_lambda(*pair_from_error([[1, -1]])).value == 0
    C = np.arange(4.0)
    assert L.l_bias_lambda(C, C.copy()).value == 0


@settings(max_examples=200)
@given(arrays(np.float64, (4, 4), elements=st.floats(-5, 5)))
def test_lambda_loss_dominates_bias0(E):
    C, Chat = pair_from_error(E)
    b0, bl = L.l_bias0(C, Chat), L.l_bias_lambda(C, Chat)
    if b0.active_mask.any() and bl.active_mask.any():
        assert bl.value >= b0.value - 1e-12
    assert b0.value >= 0


@settings(max_examples=200)
@given(arrays(np.float64, (4, 4), elements=st.floats(0, 20)), arrays(np.float64, (4, 4), elements=st.floats(0, 25)))
def test_masked_losses_are_total(C, Chat):
    for name in ("dc", "bias0", "biasLambda"):
        rep = L.l_dc(C, Chat, LIN20) if name == "dc" else L.gc_loss(name, C, Chat)
        assert np.isfinite(rep.value) and np.all(np.isfinite(rep.grad))
        assert not rep.grad[~rep.active_mask].any()
        if not rep.active_mask.any():
            assert rep.value == 0


@settings(max_examples=200)
@given(arrays(np.float64, (4, 4), elements=st.floats(0, 20)), arrays(np.float64, (4, 4), elements=st.floats(0, 25)),
       st.sampled_from(["linear", "log"]), st.integers(1, 60))
def test_dc_gradient_sign(C, Chat, scheme, n):
    p = build_partition(scheme, n, 20.0)
    rep = L.l_dc(C, Chat, p)
    nz = rep.grad != 0
    if nz.any():
        scale = -rep.grad[nz] / np.sign((C - Chat)[nz])
        assert np.all(scale > 0)
        np.testing.assert_allclose(scale, scale[0])


# -- combination ----------------------------------------------------------------

def test_combine_weights_and_linearity():
    rng = np.random.default_rng(1)
    C, Chat = rng.uniform(0, 20, (4, 4)), rng.uniform(0, 20, (4, 4))
    main = L.l_dc(C, Chat, LIN20)
    assert L.combine("dc", "biasLambda", 0.0, C, Chat, LIN20).value == main.value
    both = L.combine("dc", "bias0", 0.7, C, Chat, LIN20)
    gc = L.l_bias0(C, Chat)
    assert both.value == pytest.approx(main.value + 0.7 * gc.value)
    np.testing.assert_allclose(both.grad, main.grad + 0.7 * gc.grad)


def test_combine_zero_gc_equals_main():
    # errors cancel globally, so the global count term is exactly zero
    C, Chat = pair_from_error([[0.4, -0.4, 1.5, -1.5]])
    assert L.l_c(C, Chat).value == 0
    assert L.combine("reg", "c", 1.0, C, Chat).value == L.l_reg(C, Chat).value


def test_combine_rejects_gc_with_classification():
    with pytest.raises(ValueError):
        L.combine("cls", "c", 1.0, np.zeros((1, 1)), np.zeros((1, 1, 21)), LIN20)


def test_dc_needs_partition():
    with pytest.raises(ValueError):
        L.main_loss("dc", np.zeros((1, 1)), np.zeros((1, 1)))


def test_batch_loss_is_mean_of_images():
    rng = np.random.default_rng(2)
    C, Chat = rng.uniform(0, 20, (3, 4, 4)), rng.uniform(0, 20, (3, 4, 4))
    rep = L.batch_loss("reg", "biasLambda", 1.0, C, Chat)
    per = [L.combine("reg", "biasLambda", 1.0, C[b], Chat[b]) for b in range(3)]
    assert rep.value == pytest.approx(np.mean([r.value for r in per]))
    np.testing.assert_allclose(rep.grad[1], per[1].grad / 3)


# -- finite differences ---------------------------------------------------------

@pytest.mark.parametrize("name", ["reg", "dc", "c", "bias0", "biasLambda"])
def test_count_loss_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    p = build_partition("log", 40, 20.0)

    def loss(C, Chat):
        if name in ("reg", "dc"):
            return L.main_loss(name, C, Chat, p)
        return L.gc_loss(name, C, Chat)

    checked = 0
    while checked < 20:
        C = rng.uniform(0, 20, (4, 4))
        Chat = rng.uniform(0, 20, (4, 4))
        if not smooth_at(loss, C, Chat):
            continue
        g = fd_grad(lambda x: loss(C, x).value, Chat)
        assert rel_err(loss(C, Chat).grad, g) < 1e-6
        checked += 1


def test_cls_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    p = build_partition("linear", 5, 20.0)
    for _ in range(20):
        C = rng.uniform(0, 20, (4, 4))
        logits = rng.normal(0, 2, (4, 4, 6))
        g = fd_grad(lambda x: L.l_cls(C, x, p).value, logits)
        assert rel_err(L.l_cls(C, logits, p).grad, g) < 1e-6


def test_robustness_to_small_label_noise():
    rng = np.random.default_rng(3)
    p = build_partition("linear", 20, 20.0)
    C_true = rng.integers(1, 20, (4, 4)) - rng.uniform(0.2, 0.8, (4, 4))
    # noise keeps every count inside its interval
    eps = rng.uniform(-0.15, 0.15, (4, 4))
    C = C_true + eps
    assert np.array_equal(index_of(C, p), index_of(C_true, p))
    assert not L.l_dc(C, C_true, p).grad.any()
    assert np.all(L.l_reg(C, C_true).grad[eps != 0] != 0)
