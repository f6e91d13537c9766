import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointflow import autograd as ag
from jointflow import flows
from jointflow.flows import (CouplingLayer, FlowModel, binary_mask, channelwise_mask, checkerboard_mask, compress,
                             decompress, factor_in, factor_out, image_model, load_model, make_coupling_block_3d,
                             plan_routing, save_model, squeeze, toy_model, unsqueeze, vector_model)

from oracles import checkerboard_loops, fd_logdet, squeeze_loops

NONTRIVIAL_3D = {(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 0)}


def _zero_params(model_or_layer):
    for p in model_or_layer.parameters():
        p.value = np.zeros_like(p.value)


# -- masks ----------------------------------------------------------------------


def test_checkerboard_pattern_matches_loops():
    for parity in (0, 1):
        m = checkerboard_mask((4, 6, 3), parity)
        np.testing.assert_array_equal(m.pattern, checkerboard_loops(4, 6, 3, parity))
        assert m.shape1 == m.shape2 == (2, 3, 6)


def test_checkerboard_compresses_2x2_into_two_1x1x2():
    img = np.arange(4.0).reshape(2, 2, 1)
    a, b = compress(img, checkerboard_mask((2, 2, 1)))
    assert a.shape == b.shape == (1, 1, 2)
    assert sorted(a.ravel()) == [0.0, 3.0] and sorted(b.ravel()) == [1.0, 2.0]


def test_channelwise_halves_channels():
    img = np.arange(4.0).reshape(1, 1, 4)
    a, b = compress(img, channelwise_mask((1, 1, 4)))
    np.testing.assert_array_equal(a.ravel(), [0, 1])
    np.testing.assert_array_equal(b.ravel(), [2, 3])
    a, b = compress(img, channelwise_mask((1, 1, 4), parity=1))
    np.testing.assert_array_equal(a.ravel(), [2, 3])


@pytest.mark.parametrize("mask", [
    binary_mask([1, 0, 1, 1, 0]),
    checkerboard_mask((4, 4, 2), 0),
    checkerboard_mask((2, 6, 1), 1),
    channelwise_mask((2, 2, 4), 0),
    channelwise_mask((4, 2, 2), 1),
], ids=lambda m: f"{m.kind}-{m.shape}-{m.parity}")
def test_mask_split_is_lossless(mask):
    m1, m2 = mask.matrices()
    stacked = np.vstack([m1, m2])
    # a 0/1 matrix with one 1 per row and column is a permutation
    assert np.all(stacked.sum(axis=0) == 1) and np.all(stacked.sum(axis=1) == 1)
    assert m1.shape[0] > 0 and m2.shape[0] > 0
    u = np.random.default_rng(0).normal(size=(3,) + mask.shape)
    a, b = compress(u, mask)
    np.testing.assert_array_equal(a.reshape(3, -1), u.reshape(3, -1) @ m1.T)
    np.testing.assert_array_equal(decompress(a, b, mask), u)
    np.testing.assert_array_equal(mask.pattern.reshape(-1)[mask.idx1], True)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=12).filter(lambda p: any(p) and not all(p)),
       st.integers(1, 4))
def test_binary_compress_roundtrip(pattern, batch):
    mask = binary_mask(pattern)
    u = np.arange(batch * len(pattern), dtype=float).reshape(batch, -1)
    a, b = compress(u, mask)
    assert a.shape[-1] == sum(pattern) and b.shape[-1] == len(pattern) - sum(pattern)
    np.testing.assert_array_equal(decompress(a, b, mask), u)


def test_mask_errors():
    with pytest.raises(ValueError):
        binary_mask([1, 1, 1])
    with pytest.raises(ValueError):
        checkerboard_mask((3, 4, 1))
    with pytest.raises(ValueError):
        channelwise_mask((2, 2, 3))
    with pytest.raises(ValueError):
        compress(np.zeros((2, 4)), binary_mask([1, 0, 1]))
    with pytest.raises(ValueError):
        flows.make_mask("diagonal", (3,))


# -- coupling layers ----------------------------------------------------------


def test_zero_networks_give_identity_coupling():
    layer = CouplingLayer(binary_mask([1, 0, 1]), 8, 2, np.random.default_rng(0))
    _zero_params(layer)
    layer.scale_gain.value = np.array(1.0)
    u = np.random.default_rng(1).normal(size=(5, 3))
    v, ld = layer.forward(u)
    np.testing.assert_array_equal(v.value, u)
    np.testing.assert_array_equal(ld.value, 0.0)
    back, ld_inv = layer.inverse(u)
    np.testing.assert_array_equal(back.value, u)
    np.testing.assert_array_equal(ld_inv.value, 0.0)


def test_constant_log_two_scaling():
    layer = CouplingLayer(binary_mask([1, 0]), 4, 1, np.random.default_rng(0))
    _zero_params(layer)
    layer.scale_gain.value = np.array(1.0)
    layer.scale_net.biases[-1].value = np.array([np.arctanh(np.log(2.0))])
    u = np.array([[0.3, -1.25]])
    v, ld = layer.forward(u)
    np.testing.assert_allclose(v.value, [[0.3, -2.5]], rtol=1e-15)
    assert ld.value[0] == pytest.approx(np.log(2.0), rel=1e-15)


def _random_layer(seed, pattern=(0, 1, 1), gain=0.8):
    return CouplingLayer(binary_mask(list(pattern)), 16, 2, np.random.default_rng(seed), gain)


@pytest.mark.parametrize("pattern", sorted(NONTRIVIAL_3D))
def test_coupling_logdet_matches_numerical_jacobian(pattern):
    rng = np.random.default_rng(sum(pattern) + 10 * pattern[0])
    layer = _random_layer(7, pattern)
    with ag.no_grad():
        for _ in range(10):
            u = rng.normal(size=3)
            ref = fd_logdet(lambda p: layer.forward(p[None])[0].value[0], u)
            assert layer.forward(u[None])[1].value[0] == pytest.approx(ref, abs=1e-5)


def test_coupling_round_trip_and_logdet_negation():
    layer = _random_layer(3)
    u = np.random.default_rng(4).normal(size=(1000, 3)) * 2
    with ag.no_grad():
        v, ld = layer.forward(u)
        back, ld_inv = layer.inverse(v.value)
    assert np.max(np.abs(back.value - u)) < 1e-6
    np.testing.assert_array_equal(ld.value + ld_inv.value, 0.0)


def test_log_scale_is_bounded_by_learned_gain():
    layer = _random_layer(5, gain=3.0)
    layer.scale_gain.value = np.array(0.7)
    u = np.random.default_rng(0).normal(size=(500, 3)) * 10
    with ag.no_grad():
        s, _ = layer.scale_shift(ag.take(ag.as_node(u), layer.mask.idx1))
    assert np.all(np.abs(s.value) <= 0.7)


def test_coupling_rejects_wrong_shape():
    with pytest.raises(ValueError):
        _random_layer(0).forward(np.zeros((2, 4)))


def test_coupling_block_3d_masks():
    orders = set()
    for seed in range(6):
        layers = make_coupling_block_3d(seed, width=4, depth=1)
        pats = [tuple(int(v) for v in layer.mask.pattern) for layer in layers]
        assert len(pats) == 6 and set(pats) == NONTRIVIAL_3D
        orders.add(tuple(pats))
    assert len(orders) > 1
    assert len(toy_model(4, width=4, depth=1).couplings) == 24


# -- squeeze and factor-out --------------------------------------------------


def test_squeeze_matches_loops_and_inverts():
    img = np.random.default_rng(0).normal(size=(4, 6, 3))
    sq = squeeze(img)
    assert sq.shape == (2, 3, 12)
    np.testing.assert_array_equal(sq, squeeze_loops(img))
    np.testing.assert_array_equal(unsqueeze(sq), img)


def test_squeeze_4x4_is_a_permutation():
    sq = squeeze(np.arange(16.0).reshape(4, 4, 1))
    assert sq.shape == (2, 2, 4)
    assert sorted(sq.ravel()) == list(range(16))


def test_squeeze_jacobian_determinant_has_unit_magnitude():
    # brute-force 4x4 Jacobian of the linear map on a 2x2x1 image
    jac = np.stack([squeeze(e.reshape(2, 2, 1)).ravel() for e in np.eye(4)], axis=1)
    assert abs(np.linalg.det(jac)) == 1.0


def test_squeeze_rejects_odd_extent():
    with pytest.raises(ValueError):
        squeeze(np.zeros((3, 4, 1)))
    with pytest.raises(ValueError):
        unsqueeze(np.zeros((2, 2, 3)))


def test_factor_equal_split_with_odd_remainder_to_z():
    is_cond = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1], dtype=bool)
    r = plan_routing(is_cond, 8)
    assert r.to_z.size == 4 and r.to_y.size == 4
    assert not np.any(is_cond[r.to_z]) and np.all(is_cond[r.to_y])
    r = plan_routing(is_cond, 5)
    assert r.to_z.size == 3 and r.to_y.size == 2
    r = plan_routing(is_cond, 0)
    np.testing.assert_array_equal(r.keep, np.arange(10))


def test_factor_round_trip_is_exact():
    is_cond = np.arange(12) % 3 == 0
    r = plan_routing(is_cond, 6)
    state = np.random.default_rng(0).normal(size=(4, 12))
    cont, z, y = factor_out(state, r)
    assert cont.shape[1] + z.shape[1] + y.shape[1] == 12
    np.testing.assert_array_equal(factor_in(cont, z, y, r).value, state)


def test_factor_rejects_bad_routing():
    r = plan_routing(np.array([0, 0, 1, 1], dtype=bool), 2)
    with pytest.raises(ValueError, match="cover"):
        factor_out(np.zeros((1, 5)), r)
    with pytest.raises(ValueError):
        plan_routing(np.array([0, 1, 1, 1], dtype=bool), 4)


# -- composed models -----------------------------------------------------------


def test_identity_model():
    m = toy_model(2, width=8, depth=2)
    _zero_params(m)
    u = np.random.default_rng(0).normal(size=(20, 3))
    out, ld = m.transform(u)
    np.testing.assert_array_equal(out, u)
    np.testing.assert_array_equal(ld, 0.0)


def test_squeeze_and_factor_contribute_no_volume():
    event = (4, 4, 2)
    cond = np.zeros(event, dtype=bool)
    cond[..., 1] = True
    m = FlowModel(event, cond, [{"type": "squeeze"}, {"type": "factor"}, {"type": "squeeze"}], 4, 1,
                  x_shape=(4, 4, 1), y_shape=(4, 4, 1))
    u = np.random.default_rng(0).normal(size=(3, 32))
    out, ld = m.transform(u)
    np.testing.assert_array_equal(ld, 0.0)
    np.testing.assert_array_equal(np.sort(out, axis=1), np.sort(u, axis=1))
    back, _ = m.inverse_transform(out)
    np.testing.assert_array_equal(back, u)


def test_toy_model_round_trip_24_layers():
    m = toy_model(4, width=32, depth=3, seed=1)
    m.randomize(np.random.default_rng(2), 0.5)
    u = np.random.default_rng(3).normal(size=(10_000, 3)) * 1.5
    out, _ = m.transform(u)
    back, _ = m.inverse_transform(out)
    assert np.max(np.abs(back - u)) < 1e-5
    z = np.random.default_rng(4).normal(size=(10_000, 3))
    x, _ = m.inverse_transform(z)
    again, _ = m.transform(x)
    assert np.max(np.abs(again - z)) < 1e-5


def test_image_model_round_trip_and_element_count():
    m = image_model(8, layout=("block", "squeeze", "block", "factor", "block"), width=32, depth=2, seed=0)
    m.randomize(np.random.default_rng(1), 0.3)
    u = np.random.default_rng(2).normal(size=(200, m.dim))
    out, ld = m.transform(u)
    assert out.shape == u.shape and ld.shape == (200,)
    back, ld_inv = m.inverse_transform(out)
    assert np.max(np.abs(back - u)) < 1e-4
    np.testing.assert_allclose(ld + ld_inv, 0.0, atol=1e-9)


@pytest.mark.parametrize("build", [
    lambda: toy_model(1, width=16, depth=2, seed=3),
    lambda: vector_model(5, n_layers=4, width=16, depth=2, seed=1),
    lambda: image_model(2, layout=("block", "block"), width=16, depth=2, seed=2),
], ids=["toy-3d", "vector-5d", "image-2x2"])
def test_model_logdet_matches_numerical_jacobian(build):
    m = build()
    assert m.dim <= 8
    rng = np.random.default_rng(0)
    m.randomize(rng, 0.4)
    for _ in range(5):
        u = rng.normal(size=m.dim)
        ref = fd_logdet(lambda p: m.transform(p[None])[0][0], u)
        assert m.transform(u[None])[1][0] == pytest.approx(ref, abs=1e-4)


def test_model_input_shape_checked():
    with pytest.raises(ValueError, match="expects input"):
        toy_model(1, width=4, depth=1).forward(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        FlowModel((3,), [0, 0, 1], [{"type": "shuffle"}])


def test_join_split_layout():
    m = image_model(4, layout=("block",), width=4, depth=1)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 4, 4, 1)), rng.normal(size=(2, 4, 4, 1))
    packed = m.join(x, y)
    assert packed.shape == (2, 32)
    xs, ys = m.split(packed)
    np.testing.assert_array_equal(xs, x)
    np.testing.assert_array_equal(ys, y)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    m = image_model(4, layout=("block", "squeeze", "block", "factor", "block"), width=8, depth=1, seed=5)
    m.randomize(np.random.default_rng(0), 0.3)
    m.meta["phases"] = ["precondition"]
    path = save_model(m, tmp_path / "m.npz")
    loaded = load_model(path)
    u = np.random.default_rng(1).normal(size=(16, m.dim))
    a, la = m.transform(u)
    b, lb = loaded.transform(u)
    assert a.tobytes() == b.tobytes() and la.tobytes() == lb.tobytes()
    assert loaded.topology() == m.topology()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, __topology__=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError, match="not a flow checkpoint"):
        load_model(path)


def test_get_set_state():
    m = toy_model(1, width=4, depth=1)
    state = m.get_state()
    m.randomize(np.random.default_rng(0))
    m.set_state(state)
    for p, v in zip(m.parameters(), state):
        np.testing.assert_array_equal(p.value, v)
    with pytest.raises(ValueError):
        m.set_state(state[:-1])


def test_all_masks_of_three_inputs_enumerated():
    pats = {p for p in itertools.product([0, 1], repeat=3) if 0 < sum(p) < 3}
    assert pats == NONTRIVIAL_3D
