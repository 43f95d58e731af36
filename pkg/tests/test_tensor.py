import zlib

import numpy as np
import pytest

from argex import tensor as T
from argex.errors import CheckpointError, DegenerateMaskError, DimensionError, GradientError

from gradcheck import REL_TOL, numeric_grad, rel_error


def _check(build, inputs, rng):
    """Compare autodiff against finite differences for loss = sum(build(*inputs) * R)."""
    params = [T.parameter(x.copy()) for x in inputs]
    out = build(*params)
    R = rng.normal(size=out.shape)

    def loss_value():
        fresh = [T.Tensor(p.data) for p in params]
        return float((build(*fresh).data * R).sum())

    loss = T.tensor_sum(T.mul(out, T.Tensor(R)))
    T.backward(loss)
    worst = 0.0
    for p in params:
        num = numeric_grad(loss_value, p.data)
        worst = max(worst, rel_error(p.grad, num))
    return worst


def _shape(rng, n, lo=1, hi=5):
    return tuple(int(v) for v in rng.integers(lo, hi, size=n))


OP_CASES = {
    "add": lambda rng: (lambda a, b: T.add(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
    "mul": lambda rng: (lambda a, b: T.mul(a, b), [rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4))]),
    "matmul_2d": None,
    "batched_matmul": None,
    "concat": lambda rng: (
        lambda a, b: T.concat([a, b], axis=-1),
        [rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 4))],
    ),
    "embedding_lookup": None,
    "masked_softmax": None,
    "layer_norm": lambda rng: (
        lambda x, g, b: T.layer_norm(x, g, b),
        [rng.normal(size=(2, 3, 5)), rng.normal(size=5), rng.normal(size=5)],
    ),
    "relu": lambda rng: (lambda a: T.relu(a), [rng.normal(size=(4, 5))]),
    "sigmoid": lambda rng: (lambda a: T.sigmoid(a), [rng.normal(size=(4, 5)) * 3]),
    "max_pool": None,
    "mean_pool": None,
    "cross_entropy": None,
    "bce_with_logits": None,
    "transpose_reshape": lambda rng: (
        lambda a: T.reshape(T.transpose(a, (0, 2, 1)), (-1,)),
        [rng.normal(size=(2, 3, 4))],
    ),
    "expand_slice": lambda rng: (
        lambda a: T.slice_axis(T.expand(a, (3, 4, 5)), 1, 1, 3),
        [rng.normal(size=(3, 1, 5))],
    ),
    "scale_sub": lambda rng: (lambda a, b: T.sub(T.scale(a, 2.5), b), [rng.normal(size=(3,)), rng.normal(size=(3,))]),
    "dropout_train": None,
}


def _case(name, rng):
    if name == "matmul_2d":
        n, k, m = _shape(rng, 3)
        lead = _shape(rng, int(rng.integers(0, 2)))
        return (lambda a, b: T.matmul(a, b)), [rng.normal(size=lead + (n, k)), rng.normal(size=(k, m))]
    if name == "embedding_lookup":
        V, d = _shape(rng, 2, 2, 6)
        ids = rng.integers(0, V, size=_shape(rng, 2))
        return (lambda t: T.embedding_lookup(t, ids)), [rng.normal(size=(V, d))]
    if name == "masked_softmax":
        shape = _shape(rng, 2) + (int(rng.integers(2, 6)),)
        mask = rng.random(shape) < 0.6
        mask[..., 0] = True
        return (lambda x: T.masked_softmax(x, mask)), [rng.normal(size=shape)]
    if name == "max_pool":
        B, Tn, S, d = _shape(rng, 4, 1, 5)
        mask = rng.random((B, S, Tn)) < 0.5
        mask[..., int(rng.integers(Tn))] = True
        return (lambda x: T.max_pool_over_positions(x, mask)), [rng.normal(size=(B, Tn, d))]
    if name == "mean_pool":
        B, Tn, S, d = _shape(rng, 4, 1, 5)
        mask = rng.random((B, S, Tn)) < 0.5
        mask[..., 0] = True
        return (lambda x: T.mean_pool_over_positions(x, mask)), [rng.normal(size=(B, Tn, d))]
    if name == "cross_entropy":
        shape = _shape(rng, 2)
        C = int(rng.integers(2, 6))
        tgt = rng.integers(0, C, size=shape)
        w = (rng.random(shape) < 0.8).astype(float)
        red = "mean" if rng.random() < 0.5 else "sum"
        return (lambda x: T.cross_entropy(x, tgt, w, reduction=red)), [rng.normal(size=shape + (C,))]
    if name == "bce_with_logits":
        shape = _shape(rng, 2)
        tgt = (rng.random(shape) < 0.5).astype(float)
        w = (rng.random(shape) < 0.8).astype(float)
        return (lambda x: T.binary_cross_entropy_with_logits(x, tgt, w)), [rng.normal(size=shape) * 2]
    if name == "dropout_train":
        seed = int(rng.integers(1 << 30))
        return (lambda x: T.dropout(x, 0.3, True, np.random.default_rng(seed))), [rng.normal(size=(3, 4))]
    if name == "batched_matmul":
        B, n, k, m = _shape(rng, 4)
        return (lambda a, b: T.matmul(a, b)), [rng.normal(size=(B, n, k)), rng.normal(size=(B, k, m))]
    build, inputs = OP_CASES[name](rng)
    return build, inputs


ALL_OPS = list(OP_CASES)


@pytest.mark.parametrize("name", ALL_OPS)
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(20):
        build, inputs = _case(name, rng)
        assert _check(build, inputs, rng) < REL_TOL


def test_masked_softmax_examples():
    p = T.masked_softmax(T.Tensor(np.ones(3)), [True, False, True]).data
    assert p.tolist() == [0.5, 0.0, 0.5]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 7)) * 10
    mask = rng.random((50, 7)) < 0.5
    mask[:, 3] = True
    p = T.masked_softmax(T.Tensor(x), mask).data
    assert np.all(p[~mask] == 0.0)
    assert np.allclose(p.sum(-1), 1.0, atol=1e-9, rtol=0)


def test_masked_softmax_degenerate_row():
    with pytest.raises(DegenerateMaskError):
        T.masked_softmax(T.Tensor(np.zeros((2, 3))), np.array([[True, False, False], [False] * 3]))


def test_dropout_eval_identity_and_sigmoid():
    x = T.Tensor(np.arange(6.0))
    assert T.dropout(x, 0.1, train=False) is x
    assert float(T.sigmoid(T.Tensor(np.zeros(1))).data[0]) == 0.5


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))


def test_linear_backward_outer_product():
    x = np.array([1.0, -2.0, 3.0])
    W = T.parameter(np.ones((2, 3)))
    loss = T.tensor_sum(T.matmul(W, T.Tensor(x[:, None])))
    T.backward(loss)
    assert np.array_equal(W.grad, np.tile(x, (2, 1)))


def test_backward_constants_get_no_grad():
    a = T.Tensor(np.ones(3))
    b = T.parameter(np.ones(3))
    T.backward(T.tensor_sum(T.mul(a, b)))
    assert a.grad is None
    assert b.grad is not None


def test_backward_rejects_non_scalar_and_replay():
    w = T.parameter(np.ones(3))
    with pytest.raises(GradientError):
        T.backward(T.scale(w, 2.0))
    loss = T.tensor_sum(T.scale(w, 2.0))
    T.backward(loss)
    with pytest.raises(GradientError):
        T.backward(loss)


def test_two_backward_passes_accumulate():
    w = T.parameter(np.ones(2))
    for _ in range(2):
        T.backward(T.tensor_sum(T.scale(w, 3.0)))
    assert w.grad.tolist() == [6.0, 6.0]


def test_adam_zero_grad_leaves_params():
    store = T.ParameterStore()
    p = store.add("w", np.array([1.0, -2.0]))
    opt = T.Adam(store, lr=0.1)
    store.zero_grad()
    opt.step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_hand_computed():
    # m1 = 0.1, v1 = 0.001 -> mhat = 1, vhat = 1 -> update = -lr * 1 / (1 + eps)
    store = T.ParameterStore()
    p = store.add("w", np.array([0.0]))
    opt = T.Adam(store, lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-12)
    assert p.grad.tolist() == [0.0]
    p.grad = np.array([1.0])
    opt.step()
    assert opt.t == 2


def test_adam_missing_grad_names_parameter():
    store = T.ParameterStore()
    store.add("decoder.w", np.zeros(2))
    with pytest.raises(GradientError, match="decoder.w"):
        T.Adam(store).step()


def test_checkpoint_roundtrip_and_shape_validation(tmp_path):
    rng = np.random.default_rng(3)
    store = T.ParameterStore()
    store.add("a", rng.normal(size=(2, 3)))
    store.add("b", rng.normal(size=(4,)))
    path = tmp_path / "m.ckpt"
    store.save(path, meta={"seed": 3})
    other = T.ParameterStore()
    other.add("a", np.zeros((2, 3)))
    other.add("b", np.zeros(4))
    assert other.load(path) == {"seed": 3}
    assert np.array_equal(other["a"].data, store["a"].data)
    wrong = T.ParameterStore()
    wrong.add("a", np.zeros((3, 2)))
    wrong.add("b", np.zeros(4))
    with pytest.raises(CheckpointError):
        wrong.load(path)
