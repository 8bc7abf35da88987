import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stagnate_lab.net_core import (Architecture, ParamSpace, ParamTuple, ShapeError, SpectralNormError, backprop,
                                   forward, forward_batch, l21_batch, loss_value, norm_21, norm_F, norm_L21,
                                   norm_spectral, per_sample_grads, project_space, value_and_grad_batch)

TOY = Architecture((1, 1, 1), "relu")


def toy(a1, a2):
    return ParamTuple.from_flat(TOY, [a1, a2])


@st.composite
def architectures(draw, max_width=4, max_depth=3, act=None):
    depth = draw(st.integers(1, max_depth))
    widths = [draw(st.integers(1, max_width)) for _ in range(depth)] + [1]
    activation = act or draw(st.sampled_from(["identity", "relu"]))
    return Architecture(tuple(widths), activation)


@st.composite
def params_of(draw, arch_strategy=architectures()):
    arch = draw(arch_strategy)
    seed = draw(st.integers(0, 2**32 - 1))
    return ParamTuple.random(arch, np.random.default_rng(seed))


def fd_grad(params, x, y, h=1e-6):
    flat = params.flat()
    out = np.empty_like(flat)
    for j in range(len(flat)):
        e = np.zeros_like(flat)
        e[j] = h
        fp = forward(x, ParamTuple.from_flat(params.arch, flat + e))
        fm = forward(x, ParamTuple.from_flat(params.arch, flat - e))
        out[j] = (loss_value(y, fp) - loss_value(y, fm)) / (2 * h)
    return out


def min_preactivation(params, x):
    h = np.asarray(x, float)
    worst = math.inf
    for a in params.layers[:-1]:
        z = a @ h
        worst = min(worst, float(np.min(np.abs(z))))
        h = np.maximum(z, 0)
    return worst


# ----------------------------------------------------------- architecture

def test_architecture_counts():
    a = Architecture((3, 4, 2, 1))
    assert a.depth == 3 and a.h0 == 3 and a.hbar == 4
    assert a.D == 12 + 8 + 2
    assert a.shapes == [(4, 3), (2, 4), (1, 2)]


@pytest.mark.parametrize("widths", [(2, 3), (1,), (0, 1), (2, -1, 1)])
def test_architecture_rejects_bad_widths(widths):
    with pytest.raises(ShapeError):
        Architecture(widths)


def test_architecture_rejects_unknown_activation():
    with pytest.raises(ShapeError):
        Architecture((1, 1), "tanh")


@given(params_of())
def test_D_matches_element_count(p):
    assert sum(a.size for a in p.layers) == p.arch.D == p.flat().size


def test_param_tuple_shape_and_finiteness_checks():
    with pytest.raises(ShapeError):
        ParamTuple(TOY, (np.ones((1, 1)),))
    with pytest.raises(ShapeError):
        ParamTuple(TOY, (np.ones((2, 1)), np.ones((1, 2))))
    with pytest.raises(ValueError):
        toy(np.nan, 1.0)


def test_param_tuple_is_immutable():
    p = toy(1.0, 2.0)
    with pytest.raises(ValueError):
        p.layers[0][0, 0] = 5.0


# ---------------------------------------------------------------- forward

def test_forward_examples():
    assert forward([0.5], toy(1, 1)) == 0.5
    assert forward([-0.5], toy(1, 1)) == 0.0
    lin = ParamTuple(Architecture((2, 1)), (np.array([[3.0, 4.0]]),))
    assert forward([1, 1], lin) == 7.0


def test_forward_rejects_wrong_input_length():
    with pytest.raises(ShapeError):
        forward([1.0, 2.0], toy(1, 1))


@given(params_of(), st.integers(0, 2**32 - 1))
def test_forward_batch_matches_forward(p, seed):
    X = np.random.default_rng(seed).standard_normal((5, p.arch.h0))
    out = forward_batch(p.arch, [a[None] for a in p.layers], X)[0]
    np.testing.assert_allclose(out, [forward(x, p) for x in X], rtol=1e-12, atol=1e-12)


@given(params_of(), st.integers(0, 2**32 - 1))
def test_forward_is_lipschitz_in_input(p, seed):
    rng = np.random.default_rng(seed)
    x, x2 = rng.standard_normal((2, p.arch.h0))
    lip = np.prod([norm_spectral(a) for a in p.layers])
    assert abs(forward(x, p) - forward(x2, p)) <= lip * np.linalg.norm(x - x2) * (1 + 1e-9) + 1e-12


# --------------------------------------------------------------- backprop

def test_backprop_toy_example():
    g = backprop(toy(1, 1), [0.5], 1.0)
    np.testing.assert_allclose(g.flat(), [-0.5, -0.5], atol=1e-15)
    np.testing.assert_allclose(g.flat(), fd_grad(toy(1, 1), [0.5], 1.0), atol=1e-8)


def test_backprop_zero_input_gives_zero_first_layer_gradient():
    g = backprop(toy(0.7, 1.3), [0.0], 0.0)
    assert g.layers[0][0, 0] == 0.0


def test_relu_subgradient_at_zero_is_one():
    # a1 = 0 puts the hidden preactivation exactly at the kink
    g = backprop(toy(0.0, 1.0), [1.0], 1.0)
    # d/da1 = 2 (f - y) * a2 * 1{0 >= 0} * x = 2 * (0 - 1) * 1 * 1
    assert g.flat()[0] == -2.0


@given(params_of(), st.integers(0, 2**32 - 1))
def test_backprop_matches_finite_differences(p, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(p.arch.h0), float(rng.standard_normal())
    if p.arch.activation == "relu" and min_preactivation(p, x) < 1e-3:
        return
    g = backprop(p, x, y).flat()
    fd = fd_grad(p, x, y)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


@given(params_of(), st.integers(0, 2**32 - 1))
def test_batch_gradients_match_backprop(p, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((6, p.arch.h0)), rng.standard_normal(6)
    ps = per_sample_grads(p, X, Y)
    direct = np.stack([backprop(p, x, y).flat() for x, y in zip(X, Y)])
    np.testing.assert_allclose(ps, direct, rtol=1e-10, atol=1e-12)
    vals, grads = value_and_grad_batch(p.arch, [a[None] for a in p.layers], X, Y)
    np.testing.assert_allclose(np.concatenate([g[0].ravel() for g in grads]), direct.mean(axis=0),
                               rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(vals[0], np.mean([loss_value(y, forward(x, p)) for x, y in zip(X, Y)]))


# ------------------------------------------------------------------ norms

def test_norm_examples():
    col = ParamTuple(Architecture((1, 2, 1), "identity"), (np.array([[3.0], [4.0]]), np.array([[1.0, 0.0]])))
    assert norm_21(col.layers[0]) == 5.0
    single = ParamTuple(Architecture((2, 1)), (np.array([[3.0, 4.0]]),))
    assert norm_F(single) == 5.0
    # two columns of norm 3 and 4
    assert norm_L21(single) == 7.0
    eye = np.eye(2)
    assert norm_21(eye) == 2.0
    assert math.isclose(np.linalg.norm(eye), math.sqrt(2))
    assert math.isclose(norm_spectral(eye), 1.0, rel_tol=1e-10)
    assert math.isclose(norm_spectral(np.diag([2.0, 1.0])), 2.0, rel_tol=1e-10)


def test_norm_of_single_column():
    m = np.array([[3.0], [4.0]])
    assert norm_21(m) == 5.0 and math.isclose(norm_spectral(m), 5.0, rel_tol=1e-10)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_spectral_norm_matches_svd_and_bounded_by_frobenius(h, w, seed):
    a = np.random.default_rng(seed).standard_normal((h, w))
    s = norm_spectral(a)
    assert abs(s - np.linalg.svd(a, compute_uv=False)[0]) <= 1e-6 * s
    assert s <= np.linalg.norm(a) * (1 + 1e-12)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_spectral_equals_frobenius_for_rank_one(h, w, seed):
    rng = np.random.default_rng(seed)
    a = np.outer(rng.standard_normal(h), rng.standard_normal(w))
    assert math.isclose(norm_spectral(a), np.linalg.norm(a), rel_tol=1e-9)


def test_spectral_nonconvergence_is_an_error():
    a = np.diag([1.0, 0.999999])
    with pytest.raises(SpectralNormError):
        norm_spectral(a, tol=1e-15, max_iter=3)


def test_spectral_zero_matrix():
    assert norm_spectral(np.zeros((2, 3))) == 0.0


@given(params_of(architectures()))
def test_norm_sandwich_literal_when_input_width_is_not_largest(p):
    arch = p.arch
    if arch.h0 > arch.hbar:
        return
    f, l21 = norm_F(p), norm_L21(p)
    assert f <= l21 * (1 + 1e-12)
    assert l21 <= math.sqrt(arch.depth * arch.hbar) * f * (1 + 1e-12)


@given(params_of())
def test_norm_sandwich_with_widest_input_side(p):
    arch = p.arch
    f, l21 = norm_F(p), norm_L21(p)
    assert f <= l21 * (1 + 1e-12)
    assert l21 <= math.sqrt(arch.depth * max(arch.widths[:-1])) * f * (1 + 1e-12)


def test_norm_sandwich_upper_side_fails_when_h0_exceeds_hbar():
    # one 1x4 layer: hbar = 1 but the L21 norm is the l1 norm of four entries
    p = ParamTuple(Architecture((4, 1)), (np.ones((1, 4)),))
    assert norm_L21(p) == 4.0
    assert norm_L21(p) > math.sqrt(p.arch.depth * p.arch.hbar) * norm_F(p)


@given(params_of(), st.integers(0, 2**32 - 1))
def test_l21_batch_matches_norm(p, seed):
    flat = np.random.default_rng(seed).standard_normal((4, p.arch.D))
    ref = [norm_L21(ParamTuple.from_flat(p.arch, r)) for r in flat]
    np.testing.assert_allclose(l21_batch(p.arch, flat), ref, rtol=1e-12)


# ------------------------------------------------------------- projection

def test_projection_examples():
    small = ParamTuple(Architecture((1, 1)), (np.array([[0.5]]),))
    assert project_space(small, ParamSpace(1.0)) is small
    two_i = ParamTuple(Architecture((2, 2, 1), "identity"), (2 * np.eye(2), np.zeros((1, 2))))
    out = project_space(two_i, ParamSpace(2.0))
    np.testing.assert_allclose(out.layers[0], math.sqrt(2) * np.eye(2), rtol=1e-15)
    assert math.isclose(norm_F(out), 2.0, rel_tol=1e-15)
    z = ParamTuple.zeros(TOY)
    assert project_space(z, ParamSpace(0.3)) == z


@given(params_of(), st.floats(0.01, 10))
def test_projection_lands_inside(p, r):
    space = ParamSpace(r)
    assert space.contains(project_space(p, space))


def test_param_space_contains_zero_and_rejects_bad_radius():
    assert ParamSpace(1.0).contains(ParamTuple.zeros(TOY))
    with pytest.raises(ValueError):
        ParamSpace(0.0)


# -------------------------------------------------- arithmetic and serialization

@given(params_of(), st.floats(-5, 5))
def test_arithmetic_is_elementwise(p, c):
    q = ParamTuple.from_flat(p.arch, np.arange(p.arch.D, dtype=float))
    np.testing.assert_array_equal((p + q).flat(), p.flat() + q.flat())
    np.testing.assert_array_equal((p - q).flat(), p.flat() - q.flat())
    np.testing.assert_array_equal((c * p).flat(), c * p.flat())
    assert math.isclose(p.inner(q), float(p.flat() @ q.flat()), rel_tol=1e-12, abs_tol=1e-12)


@given(architectures(), st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=40,
                                 max_size=40))
def test_json_round_trip_is_bit_exact(arch, vals):
    flat = np.array(vals[:arch.D]) if arch.D <= 40 else np.zeros(arch.D)
    p = ParamTuple.from_flat(arch, flat)
    q = ParamTuple.from_json(p.to_json())
    assert q.arch == arch
    assert q.flat().tobytes() == p.flat().tobytes()
    json.loads(p.to_json())
