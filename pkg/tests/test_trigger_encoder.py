import numpy as np
import pytest

from argex import tensor as T
from argex.errors import SchemaError
from argex.trigger_encoder import TriggerEncoder, TriggerEncoderConfig


def _encoder(**kw):
    store = T.ParameterStore()
    cfg = TriggerEncoderConfig(**{"n_types": 3, "d_tok": 4, "d_type": 5, "d_ind": 6, "d_model": 7, **kw})
    return store, TriggerEncoder(store, cfg, np.random.default_rng(0))


def _mask(L, a, b):
    m = np.zeros((1, L), dtype=bool)
    m[0, a : b + 1] = True
    return m


B = T.Tensor(np.random.default_rng(1).normal(size=(1, 3, 4)))


def test_block_widths():
    _, enc = _encoder()
    seq = enc.encode(B, _mask(3, 1, 1), [0])
    assert seq.C.shape == (1, 3, 4 + 5 + 6 + 4)


def test_singleton_trigger_embedding_is_its_token():
    _, enc = _encoder()
    C = enc.encode(B, _mask(3, 1, 1), [0]).C.data[0]
    h = C[:, enc.block_slices()["trigger"]]
    for t in range(3):
        np.testing.assert_array_equal(h[t], B.data[0, 1])


def test_indicator_pattern():
    _, enc = _encoder()
    C = enc.encode(B, _mask(3, 1, 1), [2]).C.data[0]
    ind = C[:, enc.block_slices()["indicator"]]
    np.testing.assert_array_equal(ind[0], ind[2])
    assert np.any(ind[0] != ind[1])
    assert len({row.tobytes() for row in ind}) == 2


def test_type_change_only_touches_type_block():
    _, enc = _encoder()
    a = enc.encode(B, _mask(3, 0, 1), [0]).C.data
    b = enc.encode(B, _mask(3, 0, 1), [1]).C.data
    diff = np.any(a != b, axis=(0, 1))
    sl = enc.block_slices()["type"]
    assert diff[sl].all()
    assert not diff[: sl.start].any() and not diff[sl.stop :].any()


def test_identity_projection():
    store, enc = _encoder(d_model=19)
    store["trigger.proj.W"].data[...] = np.eye(19)
    store["trigger.proj.b"].data[...] = 0.0
    seq = enc.encode(B, _mask(3, 2, 2), [0])
    np.testing.assert_array_equal(enc.project(seq).data, seq.C.data)


def test_zero_input_without_bias():
    _, enc = _encoder(projection_bias=False)
    C = T.Tensor(np.zeros((1, 3, 19)))
    assert not enc.project(C).data.any()


def test_gradients_reach_type_and_indicator_tables():
    store, enc = _encoder()
    U0 = enc.project(enc.encode(B, _mask(3, 1, 2), [1]))
    store.zero_grad()
    T.backward(T.tensor_sum(T.mul(U0, U0)))
    assert np.any(store["trigger.type"].grad[1] != 0)
    assert not store["trigger.type"].grad[[0, 2]].any()
    assert np.all(np.any(store["trigger.indicator"].grad != 0, axis=1))


def test_max_pool_ignores_order_inside_trigger():
    _, enc = _encoder()
    data = np.random.default_rng(2).normal(size=(1, 4, 4))
    swapped = data.copy()
    swapped[0, [1, 2]] = swapped[0, [2, 1]]
    sl = enc.block_slices()["trigger"]
    a = enc.encode(T.Tensor(data), _mask(4, 1, 2), [0]).C.data[0, 0, sl]
    b = enc.encode(T.Tensor(swapped), _mask(4, 1, 2), [0]).C.data[0, 0, sl]
    np.testing.assert_array_equal(a, b)


def test_trigger_changes_representation():
    _, enc = _encoder()
    a = enc.project(enc.encode(B, _mask(3, 0, 0), [0])).data
    b = enc.project(enc.encode(B, _mask(3, 2, 2), [0])).data
    assert np.any(a != b)


def test_unknown_type():
    _, enc = _encoder()
    with pytest.raises(SchemaError):
        enc.encode(B, _mask(3, 0, 0), [3])


def test_blocks_can_be_disabled():
    _, enc = _encoder(use_type=False, use_indicator=False, use_trigger_embedding=False)
    assert enc.encode(B, _mask(3, 0, 0), [0]).C.shape == (1, 3, 4)
