import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import check_input_grad, check_tree_grads
from sung._ext import compiled_available, fallback, get_backend
from sung.numerics import (
    AdamState, CheckpointError, MlpSpec, NonFiniteError, ParamTree, Tape, TapeError,
    adam_step, forward, gaussian_reparam_sample, init_mlp, load_tensors, load_trees,
    logsumexp, polyak_update, save_tensors, save_trees, soft_clamp, softmax_temp,
)
from sung.numerics import tape as T

needs_ext = pytest.mark.skipif(not compiled_available(), reason="compiled kernels not built")
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# ------------------------------------------------------------ forward / mlp

def test_zero_weights_give_zero_output(rng):
    spec = MlpSpec(3, (8, 8), 2)
    tree = init_mlp(spec, rng)
    tree.flat[:] = 0.0
    assert np.all(forward(tree, spec, rng.normal(size=(5, 3))) == 0.0)


def test_single_linear_layer_hand_value():
    spec = MlpSpec(1, (), 1)
    tree = ParamTree(spec.param_shapes())
    tree.values["l0.w"][...] = [[2.0]]
    tree.values["l0.b"][...] = [1.0]
    assert forward(tree, spec, np.array([3.0])).tolist() == [7.0]


def test_gaussian_head_width(rng):
    spec = MlpSpec(4, (8,), 1, output="gaussian-head")
    assert forward(init_mlp(spec, rng), spec, np.zeros(4)).shape == (2,)


def test_init_bounds(rng):
    spec = MlpSpec(16, (32,), 4)
    tree = init_mlp(spec, rng)
    assert np.abs(tree.values["l0.w"]).max() <= 1 / math.sqrt(16)
    assert np.abs(tree.values["l1.w"]).max() <= 1 / math.sqrt(32)


def test_bad_specs_rejected():
    with pytest.raises(ValueError):
        MlpSpec(0, (4,), 1)
    with pytest.raises(ValueError):
        MlpSpec(2, (4,), 1, activation="gelu")
    with pytest.raises(ValueError):
        MlpSpec(2, (4,), 1, output="softmax")


def test_forward_input_dim_checked(rng):
    spec = MlpSpec(3, (4,), 1)
    with pytest.raises(ValueError):
        forward(init_mlp(spec, rng), spec, np.zeros((2, 4)))


# ----------------------------------------------------------------- backward

def test_square_derivative():
    tape = Tape()
    x = tape.watch(np.array(3.0))
    tape.backward(T.square(x))
    assert x.grad == pytest.approx(6.0)


def test_constant_has_zero_gradient():
    tape = Tape()
    x = tape.watch(np.array([1.0, 2.0]))
    out = T.add(T.sum_(T.mul(x, 0.0)), 5.0)
    tape.backward(out)
    assert np.all(x.grad == 0.0)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
@pytest.mark.parametrize("output", ["identity", "tanh-squash", "gaussian-head"])
def test_mlp_gradients_match_finite_differences(activation, output):
    rng = np.random.default_rng(7)
    spec = MlpSpec(5, (12, 9), 3, activation, output)
    tree = init_mlp(spec, rng)
    x = rng.normal(size=(6, 5))
    target = rng.normal(size=(6, spec.final_dim))

    def loss(tape):
        return T.mean(T.square(T.sub(forward(tree, spec, x, tape), target)))

    assert check_tree_grads(loss, [tree], rng) < 1e-4


@pytest.mark.parametrize("name,fn,domain", [
    ("exp", T.exp, (-2, 2)),
    ("log", T.log, (0.5, 3)),
    ("tanh", T.tanh, (-2, 2)),
    ("softplus", T.softplus, (-5, 5)),
    ("abs", T.abs_, (0.2, 3)),
    ("square", T.square, (-3, 3)),
])
def test_elementwise_gradients(name, fn, domain):
    rng = np.random.default_rng(1)
    x = rng.uniform(*domain, size=(4, 3))
    assert check_input_grad(lambda v: T.sum_(fn(v)), x) < 1e-6


def test_logsumexp_and_reductions_gradients(rng):
    x = rng.normal(size=(5, 7))
    w = rng.normal(size=(5,))
    assert check_input_grad(lambda v: T.sum_(T.mul(T.logsumexp(v, axis=1), w)), x) < 1e-6
    assert check_input_grad(lambda v: T.mean(T.mul(T.sum_(v, axis=0), w[:1])), x) < 1e-6


def test_matmul_concat_getitem_gradients(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    assert check_input_grad(lambda v: T.sum_(T.square(T.matmul(v, b))), a) < 1e-6
    assert check_input_grad(lambda v: T.sum_(T.square(T.concat([v, T.mul(v, 2.0)], axis=1))), a) < 1e-6
    assert check_input_grad(lambda v: T.sum_(T.square(v[:, 1:])), a) < 1e-6
    assert check_input_grad(lambda v: T.sum_(T.square(T.repeat_rows(v, 3))), a) < 1e-6


def test_div_minimum_gradients(rng):
    x = rng.uniform(0.5, 2.0, size=(6,))
    y = rng.uniform(0.5, 2.0, size=(6,))
    assert check_input_grad(lambda v: T.sum_(T.div(y, v)), x) < 1e-6
    assert check_input_grad(lambda v: T.sum_(T.minimum(v, y)), x) < 1e-6


def test_broadcast_gradient_summed(rng):
    b = rng.normal(size=(3,))
    x = rng.normal(size=(4, 3))
    assert check_input_grad(lambda v: T.sum_(T.square(T.add(x, v))), b) < 1e-6


def test_nonfinite_raises():
    with pytest.raises(NonFiniteError):
        T.log(np.array([-1.0]))


def test_tape_misuse():
    tape = Tape()
    x = tape.watch(np.ones(3))
    with pytest.raises(TapeError):
        tape.backward(x * 2.0)   # not scalar
    loss = T.sum_(x)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)
    with pytest.raises(TapeError):
        Tape().backward(loss)


def test_gradients_accumulate_into_tree(rng):
    spec = MlpSpec(2, (4,), 1)
    tree = init_mlp(spec, rng)
    x = rng.normal(size=(3, 2))
    grads = []
    for _ in range(2):
        tape = Tape()
        tape.backward(T.mean(forward(tree, spec, x, tape)))
        grads.append(tree.flat_grad.copy())
    assert np.allclose(grads[1], 2 * grads[0])


# --------------------------------------------------------------------- adam

def _tree_with_grad(rng, g=None):
    tree = ParamTree([("w", (3, 2)), ("b", (2,))])
    tree.flat[:] = rng.normal(size=tree.size)
    tree.flat_grad[:] = rng.normal(size=tree.size) if g is None else g
    tree.mark_grad()
    return tree


def test_adam_first_step_is_sign(rng):
    tree = _tree_with_grad(rng)
    before = tree.flat.copy()
    g = tree.flat_grad.copy()
    adam_step(AdamState.for_tree(tree, 1e-3), tree)
    assert np.allclose(tree.flat - before, -1e-3 * np.sign(g), atol=1e-9)


def test_adam_zero_gradient_no_change(rng):
    tree = _tree_with_grad(rng, g=0.0)
    before = tree.flat.copy()
    adam_step(AdamState.for_tree(tree, 1e-3), tree)
    assert np.array_equal(tree.flat, before)


def test_adam_deterministic(rng):
    a = _tree_with_grad(np.random.default_rng(3))
    b = _tree_with_grad(np.random.default_rng(3))
    sa, sb = AdamState.for_tree(a, 1e-2), AdamState.for_tree(b, 1e-2)
    for _ in range(2):
        adam_step(sa, a)
        adam_step(sb, b)
    assert a == b


def test_adam_needs_gradient(rng):
    tree = _tree_with_grad(rng)
    tree.zero_grad()
    with pytest.raises(RuntimeError):
        adam_step(AdamState.for_tree(tree, 1e-3), tree)


def test_adam_closed_form_two_steps():
    tree = ParamTree([("w", (1,))])
    tree.flat[:] = 1.0
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    state = AdamState.for_tree(tree, lr)
    gs = [0.5, -2.0]
    m = v = 0.0
    p = 1.0
    for t, g in enumerate(gs, 1):
        tree.flat_grad[:] = g
        tree.mark_grad()
        adam_step(state, tree)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert tree.flat[0] == pytest.approx(p, abs=1e-14)


# ------------------------------------------------------------------- polyak

def _pair(rng):
    a = ParamTree([("w", (4, 3)), ("b", (3,))])
    b = ParamTree([("w", (4, 3)), ("b", (3,))])
    a.flat[:] = rng.normal(size=a.size)
    b.flat[:] = rng.normal(size=b.size)
    return a, b


def test_polyak_extremes(rng):
    tgt, src = _pair(rng)
    before = tgt.flat.copy()
    polyak_update(tgt, src, 0.0)
    assert np.array_equal(tgt.flat, before)
    polyak_update(tgt, src, 1.0)
    assert np.array_equal(tgt.flat, src.flat)


def test_polyak_hand_value():
    tgt = ParamTree([("w", (2,))])
    src = ParamTree([("w", (2,))])
    src.flat[:] = 1.0
    polyak_update(tgt, src, 0.5)
    assert tgt.flat.tolist() == [0.5, 0.5]


def test_polyak_two_steps_closed_form(rng):
    tgt, src = _pair(rng)
    t0, s = tgt.flat.copy(), src.flat.copy()
    tau = 5e-3
    polyak_update(tgt, src, tau)
    polyak_update(tgt, src, tau)
    expected = (1 - tau) ** 2 * t0 + (1 - (1 - tau) ** 2) * s
    assert np.max(np.abs(tgt.flat - expected)) < 1e-12


def test_polyak_rejects_bad_input(rng):
    tgt, src = _pair(rng)
    with pytest.raises(ValueError):
        polyak_update(tgt, src, 1.5)
    with pytest.raises(ValueError):
        polyak_update(tgt, ParamTree([("w", (2,))]), 0.1)


# --------------------------------------------------------- small functions

def test_softmax_examples():
    assert np.allclose(softmax_temp([1, 1, 1], 1.0), [1 / 3] * 3, atol=1e-15)
    assert np.allclose(softmax_temp([0, math.log(2)], 1.0), [1 / 3, 2 / 3], atol=1e-15)
    assert np.allclose(softmax_temp([2, 4, 6], 2.0), softmax_temp([1, 2, 3], 1.0), atol=1e-15)
    with pytest.raises(ValueError):
        softmax_temp([1, 2], 0.0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(0.05, 20), st.floats(0.1, 10))
def test_softmax_properties(logits, alpha, c):
    p = softmax_temp(logits, alpha)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.max(np.abs(p - softmax_temp(logits * c, alpha * c))) < 1e-12


def test_logsumexp_examples():
    assert logsumexp([3.5]) == 3.5
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([1e4, 1e4]) == pytest.approx(1e4 + math.log(2))
    with pytest.raises(ValueError):
        logsumexp([])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(-100, 100))
def test_logsumexp_properties(v, c):
    lse = logsumexp(v)
    assert lse >= v.max()
    assert abs(logsumexp(v + c) - (lse + c)) < 1e-12 * max(1.0, abs(lse + c))


def test_reparam_examples(rng):
    m = rng.normal(size=(3, 2))
    assert np.array_equal(gaussian_reparam_sample(m, rng.normal(size=(3, 2)), np.zeros((3, 2))), m)
    out = gaussian_reparam_sample(np.zeros(1), np.zeros(1), np.array([1.5]))
    assert out.tolist() == [1.5]
    with pytest.raises(ValueError):
        gaussian_reparam_sample(np.zeros(2), np.zeros(3), np.zeros(2))


def test_reparam_log_std_gradient(rng):
    mean = rng.normal(size=(4, 2))
    noise = rng.normal(size=(4, 2))
    log_std = rng.normal(size=(4, 2)) * 0.3
    err = check_input_grad(lambda v: T.sum_(T.square(gaussian_reparam_sample(mean, v, noise))), log_std)
    assert err < 1e-6


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
def test_soft_clamp_bounds(x):
    y = soft_clamp(x, -5.0, 2.0)
    assert np.all(y >= -5.0) and np.all(y <= 2.0)


# ------------------------------------------------------- ParamTree / ckpt

def test_param_tree_views_and_copy(rng):
    tree = ParamTree([("a", (2, 3)), ("b", (4,))])
    tree.values["a"][...] = 1.0
    assert tree.flat[:6].tolist() == [1.0] * 6
    clone = tree.copy()
    clone.values["b"][...] = 7.0
    assert np.all(tree.values["b"] == 0.0)
    assert tree.same_layout(clone) and not tree == clone


def test_checkpoint_roundtrip(tmp_path, rng):
    spec = MlpSpec(3, (5,), 2)
    trees = {"net": init_mlp(spec, rng), "other": init_mlp(spec, rng)}
    path = tmp_path / "x.ckpt"
    save_trees(path, trees)
    fresh = {"net": init_mlp(spec, rng), "other": init_mlp(spec, rng)}
    load_trees(path, fresh)
    assert fresh["net"] == trees["net"] and fresh["other"] == trees["other"]


def test_checkpoint_errors(tmp_path, rng):
    path = tmp_path / "x.ckpt"
    save_tensors(path, {"t": np.arange(6.0).reshape(2, 3)})
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"X" + raw[1:])
    with pytest.raises(CheckpointError, match="bad magic"):
        load_tensors(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_tensors(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_tensors(tmp_path / "long")
    spec = MlpSpec(3, (5,), 2)
    save_trees(path, {"net": init_mlp(spec, rng)})
    with pytest.raises(CheckpointError):
        load_trees(path, {"net": init_mlp(MlpSpec(3, (6,), 2), rng)})
    with pytest.raises(CheckpointError):
        load_trees(path, {"other": init_mlp(spec, rng)})


# ------------------------------------------------------ kernel equivalence

@needs_ext
@pytest.mark.parametrize("act", [0, 1, 2])
def test_dense_kernels_agree(act):
    rng = np.random.default_rng(act)
    cy = get_backend("cython")
    x = rng.normal(size=(33, 17))
    w = rng.normal(size=(17, 9))
    b = rng.normal(size=9)
    y_py = fallback.dense_forward(x, w, b, act)
    y_cy = cy.dense_forward(x, w, b, act)
    assert np.allclose(y_py, y_cy, rtol=1e-13, atol=1e-13)
    gy = rng.normal(size=y_py.shape)
    for need_dx in (True, False):
        for need_dw in (True, False):
            got_py = fallback.dense_backward(x, w, y_py, gy, act, need_dx, need_dw)
            got_cy = cy.dense_backward(x, w, y_cy, gy, act, need_dx, need_dw)
            for a, c in zip(got_py, got_cy):
                assert (a is None) == (c is None)
                if a is not None:
                    assert np.allclose(a, c, rtol=1e-12, atol=1e-12)


@needs_ext
def test_adam_polyak_kernels_agree():
    rng = np.random.default_rng(0)
    cy = get_backend("cython")
    n = 101
    p, g, m, v = (rng.normal(size=n) for _ in range(4))
    v = np.abs(v)
    outs = []
    for mod in (fallback, cy):
        pp, mm, vv = p.copy(), m.copy(), v.copy()
        mod.adam_update(pp, g, mm, vv, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
        outs.append((pp, mm, vv))
    for a, c in zip(*outs):
        assert np.allclose(a, c, rtol=1e-13, atol=1e-15)
    t1, t2 = p.copy(), p.copy()
    fallback.polyak_update(t1, g, 0.3)
    cy.polyak_update(t2, g, 0.3)
    assert np.allclose(t1, t2, rtol=1e-15, atol=1e-15)


@needs_ext
def test_kernels_reject_bad_shapes():
    cy = get_backend("cython")
    with pytest.raises(ValueError):
        cy.dense_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2), 0)
    with pytest.raises(ValueError):
        cy.polyak_update(np.zeros(3), np.zeros(4), 0.1)


def test_backend_names():
    assert get_backend("python") is fallback
    with pytest.raises(ValueError):
        get_backend("fortran")
