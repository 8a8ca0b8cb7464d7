import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hexproj.exceptions import DimensionError, InputError, SingularMatrixError, StateError
from hexproj.hexhead import (HexHead, HexMode, HexOutputs, Projection, build_outputs,
                             column_normalize, column_normalize_backward, default_ridge,
                             hex_loss, hex_project, hex_project_kailath, hex_project_ridge,
                             predict)
from hexproj.model import HexModel
from hexproj.netcore import Dense
from oracles import central_diff, gauss_jordan_inverse, lstsq_residual


def pair(rng, n, c, scale=1.0):
    return scale * rng.standard_normal((n, c)), scale * rng.standard_normal((n, c))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10), st.sampled_from([1e-3, 1.0, 1e3]))
def test_projection_residual_properties(seed, c, scale):
    rng = np.random.default_rng(seed)
    F_A, F_G = pair(rng, 32, c, scale)
    F_L = hex_project(F_A, F_G)
    assert np.abs(F_G.T @ F_L).max() <= 1e-8 * scale ** 2 * 32
    np.testing.assert_allclose(hex_project(F_L, F_G), F_L, rtol=0, atol=1e-9 * scale)


def test_projection_matches_normal_equations_oracle():
    rng = np.random.default_rng(0)
    for c in range(2, 8):
        F_A, F_G = pair(rng, 20, c)
        np.testing.assert_allclose(hex_project(F_A, F_G), lstsq_residual(F_A, F_G),
                                   rtol=0, atol=1e-10)


def test_projection_onto_own_span_is_zero():
    rng = np.random.default_rng(1)
    F_G = rng.standard_normal((12, 3))
    F_A = F_G @ rng.standard_normal((3, 3))
    np.testing.assert_allclose(hex_project(F_A, F_G), 0.0, atol=1e-12)


def test_exact_path_signals_small_batches():
    rng = np.random.default_rng(2)
    for n in (2, 5):
        F_A, F_G = pair(rng, n, 5)
        with pytest.raises(SingularMatrixError):
            hex_project(F_A, F_G)
    F_G = np.ones((10, 3))
    with pytest.raises(SingularMatrixError):
        hex_project(rng.standard_normal((10, 3)), F_G)


def test_ridge_and_kailath_agree():
    rng = np.random.default_rng(3)
    for n, c in [(32, 4), (3, 7), (7, 7), (1, 2)]:
        F_A, F_G = pair(rng, n, c)
        for lam in (1e-3, 0.5, 10.0):
            np.testing.assert_allclose(hex_project_ridge(F_A, F_G, lam),
                                       hex_project_kailath(F_A, F_G, lam), rtol=0, atol=1e-10)


def test_ridge_oracle_and_argument_checks():
    rng = np.random.default_rng(4)
    F_A, F_G = pair(rng, 6, 3)
    lam = 0.7
    ref = F_A - F_G @ gauss_jordan_inverse(F_G.T @ F_G + lam * np.eye(3)) @ F_G.T @ F_A
    np.testing.assert_allclose(hex_project_ridge(F_A, F_G, lam), ref, atol=1e-12)
    for bad in (0.0, -1.0):
        with pytest.raises(InputError):
            hex_project_ridge(F_A, F_G, bad)
        with pytest.raises(InputError):
            hex_project_kailath(F_A, F_G, bad)
    with pytest.raises(DimensionError):
        hex_project(np.ones((4, 2)), np.ones((5, 2)))


def test_default_ridge_scale():
    F_G = np.array([[1.0, 0.0], [1.0, 2.0]])
    # Gram diagonal is [2, 4]
    assert default_ridge(F_G) == pytest.approx(3e-4)
    assert default_ridge(np.zeros((3, 2))) == 1.0


@pytest.mark.parametrize("ridge", [None, 0.3])
def test_projection_backward_fd(ridge):
    rng = np.random.default_rng(5)
    n = 8 if ridge is None else 3
    F_A, F_G = pair(rng, n, 4)
    w = rng.standard_normal((n, 4))
    proj = Projection()
    proj.forward(F_A, F_G, ridge)
    gA, gG = proj.backward(w)
    num_A = central_diff(lambda a: float(np.sum(w * Projection().forward(a, F_G, ridge))), F_A)
    num_G = central_diff(lambda g: float(np.sum(w * Projection().forward(F_A, g, ridge))), F_G)
    np.testing.assert_allclose(gA, num_A, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gG, num_G, rtol=1e-6, atol=1e-8)


def test_stop_gradient_blocks_texture_path():
    rng = np.random.default_rng(6)
    F_A, F_G = pair(rng, 8, 3)
    proj = Projection(stop_gradient=True)
    F_L = proj.forward(F_A, F_G)
    gA, gG = proj.backward(np.ones_like(F_L))
    assert not gG.any()
    full = Projection()
    full.forward(F_A, F_G)
    np.testing.assert_allclose(gA, full.backward(np.ones_like(F_L))[0])
    with pytest.raises(StateError):
        Projection().backward(np.ones((2, 2)))


def test_column_normalize():
    R = np.array([[3.0, 0.0, 1e-14], [4.0, 2.0, 0.0]])
    out = column_normalize(R)
    np.testing.assert_allclose(out, [[0.6, 0.0, 0.0], [0.8, 1.0, 0.0]])
    rng = np.random.default_rng(7)
    R = rng.standard_normal((5, 3))
    w = rng.standard_normal((5, 3))
    num = central_diff(lambda r: float(np.sum(w * column_normalize(r))), R)
    np.testing.assert_allclose(column_normalize_backward(w, column_normalize(R), R), num,
                               rtol=1e-6, atol=1e-9)
    np.testing.assert_array_equal(column_normalize_backward(w, np.zeros((5, 3)),
                                                            np.zeros((5, 3))), 0.0)


def test_build_outputs_definitions():
    rng = np.random.default_rng(8)
    dec = Dense(5, 3, rng)
    h, g = rng.standard_normal((4, 2)), rng.standard_normal((4, 3))
    out = build_outputs(h, g, dec)
    W, b = dec.weight, dec.bias
    np.testing.assert_allclose(out.F_A, h @ W[:2] + g @ W[2:] + b)
    np.testing.assert_allclose(out.F_G, g @ W[2:] + b)
    np.testing.assert_allclose(out.F_P, h @ W[:2] + b)
    with pytest.raises(DimensionError):
        build_outputs(h, g[:3], dec)


def test_hex_loss_modes():
    rng = np.random.default_rng(9)
    F = {k: rng.standard_normal((6, 3)) for k in ("F_A", "F_G", "F_P", "F_L")}
    out = HexOutputs(**F)
    y = rng.integers(0, 3, 6)
    l_n, g_n = hex_loss(out, y, "ablation_n")
    assert set(g_n) == {"F_A"}
    l_h, g_h = hex_loss(out, y, HexMode.HEX)
    assert set(g_h) == {"F_L"}
    l_v, g_v = hex_loss(out, y, HexMode.HEX_ADV, lambda_loss=1.0)
    assert set(g_v) == {"F_L", "F_G"}
    assert l_v > l_h
    l_v0, g_v0 = hex_loss(out, y, HexMode.HEX_ADV, lambda_loss=0.0)
    assert l_v0 == l_h and set(g_v0) == {"F_L"}
    with pytest.raises(StateError):
        hex_loss(HexOutputs(F["F_A"], F["F_G"], F["F_P"]), y, "hex")


def test_predict_uses_f_p_or_f_l_with_lowest_index_ties():
    out = HexOutputs(F_A=np.zeros((2, 3)), F_G=np.zeros((2, 3)),
                     F_P=np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]]),
                     F_L=np.array([[0.0, 0.0, 5.0], [9.0, 0.0, 0.0]]))
    np.testing.assert_array_equal(predict(out, "hex"), [0, 1])
    np.testing.assert_array_equal(predict(out, "ablation_n"), [0, 1])
    np.testing.assert_array_equal(predict(out, "hex_all"), [2, 0])


def test_head_falls_back_to_ridge_for_small_batches():
    rng = np.random.default_rng(10)
    head = HexHead(Dense(9, 5, rng))
    out = head.forward(rng.standard_normal((4, 3)), rng.standard_normal((4, 6)))
    assert out.used_ridge
    out = head.forward(rng.standard_normal((16, 3)), rng.standard_normal((16, 6)))
    assert not out.used_ridge
    np.testing.assert_allclose(out.F_G.T @ out.F_L, 0.0, atol=1e-10)
    # F_G = g W_g + b has rank <= 3 when g has two columns: singular for C = 5
    g = np.hstack([rng.standard_normal((16, 2)), np.zeros((16, 4))])
    assert head.forward(rng.standard_normal((16, 3)), g).used_ridge


def test_head_backward_fd():
    rng = np.random.default_rng(11)
    head = HexHead(Dense(5, 3, rng), HexMode.HEX_ADV)
    h, g = rng.standard_normal((9, 2)), rng.standard_normal((9, 3))
    y = rng.integers(0, 3, 9)

    def loss_of(hh, gg):
        head.forward(hh, gg)
        return head.loss(y)[0]

    head.forward(h, g)
    _, grads = head.loss(y)
    dh, dg = head.backward(grads)
    np.testing.assert_allclose(dh, central_diff(lambda v: loss_of(v, g), h), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dg, central_diff(lambda v: loss_of(h, v), g), rtol=1e-5, atol=1e-8)
    with pytest.raises(StateError):
        HexHead(Dense(2, 2, rng)).backward({})


def test_prediction_never_touches_texture_branch():
    rng = np.random.default_rng(12)
    model = HexModel(3, 8, HexMode.HEX, h_width=4, hidden=8, g_width=4, levels=4, rng=rng)
    X = rng.uniform(0, 256, size=(10, 8, 8))
    model.step(X, rng.integers(0, 3, 10))
    block = model.nglcm_block
    before = block.n_forward
    p = model.predict(X)
    assert block.n_forward == before
    h = model.encoder.forward(X.reshape(10, -1) / 255.0)
    F_P = model.head.forward_p(h, 4)
    np.testing.assert_array_equal(p, np.argmax(F_P, axis=1))
    # the same logits come out of the full three-way pass
    np.testing.assert_allclose(model.outputs(X).F_P, F_P, atol=1e-12)


def test_hex_all_predicts_from_projected_logits():
    rng = np.random.default_rng(13)
    model = HexModel(3, 8, HexMode.HEX_ALL, h_width=4, hidden=8, g_width=4, levels=4, rng=rng)
    X = rng.uniform(0, 256, size=(12, 8, 8))
    np.testing.assert_array_equal(model.predict(X), np.argmax(model.outputs(X).F_L, axis=1))
