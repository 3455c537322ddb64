import numpy as np
import pytest

from interactnav.learn import tape as T
from interactnav.learn.check import NumericError, grad_check
from interactnav.learn.layers import LSTM, MLP, Dense
from interactnav.learn.params import CheckpointError, ParamStore, adam_step


def _store(rng, **shapes):
    s = ParamStore()
    for k, shp in shapes.items():
        s.add(k, rng.normal(size=shp))
    return s


def _probe(rng, shape):
    return rng.normal(size=shape)


def test_dense_examples():
    x = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(T.dense(x, np.eye(3), np.zeros(3)).data, x)
    b = np.array([0.5, -1.0])
    np.testing.assert_array_equal(T.dense(np.zeros((1, 3)), np.ones((3, 2)), b).data[0], b)
    with pytest.raises(T.ShapeError):
        T.dense(x, np.ones((2, 2)))
    with pytest.raises(T.ShapeError):
        T.dense(x, np.ones((3, 2)), np.ones(3))


def test_lstm_examples():
    H = 4
    x, h, c = np.zeros((2, 3)), np.zeros((2, H)), np.zeros((2, H))
    h2, c2 = T.lstm_cell(x, h, c, np.zeros((3, 4 * H)), np.zeros((H, 4 * H)), np.zeros(4 * H))
    assert not h2.data.any() and not c2.data.any()
    rng = np.random.default_rng(0)
    c = rng.normal(size=(2, H))
    b = np.zeros(4 * H)
    b[:H] = -1e3  # input gate closed
    b[H:2 * H] = 1e3  # forget gate open
    _, c2 = T.lstm_cell(rng.normal(size=(2, 3)), rng.normal(size=(2, H)), c,
                        np.zeros((3, 4 * H)), np.zeros((H, 4 * H)), b)
    np.testing.assert_array_equal(c2.data, c)
    with pytest.raises(T.ShapeError):
        T.lstm_cell(x, h, c, np.zeros((2, 4 * H)), np.zeros((H, 4 * H)), b)


def test_softmax_xent_examples():
    loss, p = T.softmax_xent(np.zeros((1, 2)), np.array([[1.0, 0.0]]))
    assert loss.data == pytest.approx(np.log(2.0), abs=1e-15)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    loss, _ = T.softmax_xent(np.array([[60.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert loss.data < 1e-20
    logits = T.Tensor(np.array([[0.3, -1.2, 0.4]]), requires_grad=True)
    onehot = np.array([[0.0, 0.0, 1.0]])
    loss, p = T.softmax_xent(logits, onehot)
    loss.backward()
    np.testing.assert_allclose(logits.grad, p - onehot, atol=1e-15)
    with pytest.raises(T.ShapeError):
        T.softmax_xent(np.zeros((2, 1)), np.ones((2, 1)))


PRIMS = {
    "dense": (dict(x=(3, 5), W=(5, 4), b=(4,)), lambda s: T.dense(s["x"], s["W"], s["b"])),
    "matmul": (dict(a=(2, 3, 4), b=(4, 2)), lambda s: T.matmul(s["a"], s["b"])),
    "add_bcast": (dict(a=(3, 4), b=(4,)), lambda s: T.add(s["a"], s["b"])),
    "mul_bcast": (dict(a=(3, 4), b=(3, 1)), lambda s: T.mul(s["a"], s["b"])),
    "sub": (dict(a=(3, 4), b=(3, 4)), lambda s: T.sub(s["a"], s["b"])),
    "reciprocal": (dict(a=(5,)), lambda s: T.reciprocal(T.add(T.square(s["a"]), 1.0))),
    "tanh": (dict(a=(3, 4)), lambda s: T.tanh(s["a"])),
    "sigmoid": (dict(a=(3, 4)), lambda s: T.sigmoid(s["a"])),
    "exp": (dict(a=(3, 4)), lambda s: T.exp(s["a"])),
    "log": (dict(a=(3, 4)), lambda s: T.log(T.add(T.square(s["a"]), 0.5))),
    "relu": (dict(a=(3, 4)), lambda s: T.relu(s["a"])),
    "leaky_relu": (dict(a=(3, 4)), lambda s: T.leaky_relu(s["a"])),
    "elu": (dict(a=(3, 4)), lambda s: T.elu(s["a"])),
    "tsum": (dict(a=(3, 4, 2)), lambda s: T.tsum(s["a"], axis=1, keepdims=True)),
    "tmean": (dict(a=(3, 4, 2)), lambda s: T.tmean(s["a"], axis=(0, 2))),
    "reshape": (dict(a=(3, 4)), lambda s: T.reshape(s["a"], (2, 6))),
    "transpose": (dict(a=(2, 3, 4)), lambda s: T.transpose(s["a"], (2, 0, 1))),
    "getitem": (dict(a=(4, 5)), lambda s: T.getitem(s["a"], (slice(1, 3), [0, 2, 2]))),
    "concat": (dict(a=(2, 3), b=(2, 2)), lambda s: T.concat([s["a"], s["b"]], axis=-1)),
    "stack": (dict(a=(2, 3), b=(2, 3)), lambda s: T.stack([s["a"], s["b"]], axis=1)),
    "masked_softmax": (dict(a=(3, 4)),
                       lambda s: T.masked_softmax(s["a"], np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1.0]]))),
    "log_softmax": (dict(a=(3, 4)), lambda s: T.log_softmax(s["a"])),
    "l2_normalize": (dict(a=(3, 4)), lambda s: T.l2_normalize(s["a"])),
    "bce": (dict(a=(3, 4)), lambda s: T.bce_with_logits(s["a"], (np.arange(12).reshape(3, 4) % 2))),
    "xent": (dict(a=(3, 4)), lambda s: T.softmax_xent(s["a"], np.eye(4)[[0, 3, 1]])[0]),
    "lstm": (dict(x=(2, 3), h=(2, 5), c=(2, 5), Wx=(3, 20), Wh=(5, 20), b=(20,)),
             lambda s: T.stack(T.lstm_cell(s["x"], s["h"], s["c"], s["Wx"], s["Wh"], s["b"]))),
    "where": (dict(a=(3, 4), b=(3, 4)), lambda s: T.where(np.eye(3, 4), s["a"], s["b"])),
}


@pytest.mark.parametrize("name", sorted(PRIMS))
def test_primitive_gradients(name):
    shapes, fn = PRIMS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    s = _store(rng, **shapes)
    out_shape = fn(s).shape
    probe = _probe(rng, out_shape)
    rep = grad_check(lambda: T.tsum(T.mul(fn(s), probe)), s, tolerance=1e-4)
    assert rep.passed, rep.errors


def test_linear_loss_exact():
    rng = np.random.default_rng(1)
    s = _store(rng, a=(4, 3))
    c = rng.normal(size=(4, 3))
    rep = grad_check(lambda: T.tsum(T.mul(s["a"], c)), s)
    assert rep.max_error < 1e-10


def test_grad_check_flags_corrupted_backward():
    rng = np.random.default_rng(2)
    s = _store(rng, a=(3,), b=(3,))

    def bad_square(a):
        return T._node(a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    rep = grad_check(lambda: T.add(T.tsum(bad_square(s["a"])), T.tsum(T.square(s["b"]))), s)
    assert rep.failing() == ["a"]


def test_grad_check_non_finite():
    s = ParamStore()
    s.add("a", np.array([-1.0]))
    with pytest.raises(NumericError), np.errstate(invalid="ignore"):
        grad_check(lambda: T.tsum(T.log(s["a"])), s)


def test_layers_gradcheck():
    rng = np.random.default_rng(3)
    s = ParamStore()
    mlp = MLP(s, "mlp", [4, 6, 6, 2], rng)
    lstm = LSTM(s, "lstm", 2, 5, rng)
    xs = rng.normal(size=(3, 2, 4))
    mask = np.array([[1, 1], [1, 0], [0, 1.0]])

    def loss():
        h, c = lstm.zero_state((2,))
        outs, _ = lstm.run(mlp(xs), h, c, mask)
        return T.tsum(T.square(T.stack(outs)))

    assert grad_check(loss, s).passed


def test_forward_replay_is_exact():
    rng = np.random.default_rng(4)
    s = ParamStore()
    d = Dense(s, "d", 3, 2, rng)
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(d(x).data, d(x).data)


def test_init_deterministic_and_bounded():
    a, b = ParamStore(), ParamStore()
    LSTM(a, "l", 3, 8, np.random.default_rng(7))
    LSTM(b, "l", 3, 8, np.random.default_rng(7))
    assert a.digest() == b.digest()
    assert np.abs(a["l.Wx"].data).max() <= 1 / np.sqrt(8)
    np.testing.assert_array_equal(a["l.b"].data[8:16], 1.0)


def test_adam_examples():
    s = ParamStore()
    s.add("w", np.array([1.0, -2.0]))
    s["w"].grad = np.zeros(2)
    adam_step(s, 0.1)
    np.testing.assert_array_equal(s["w"].data, [1.0, -2.0])
    s = ParamStore()
    s.add("w", np.array([1.0, -2.0]))
    s["w"].grad = np.array([3.0, -0.5])
    adam_step(s, 0.1, eps=0.0)
    np.testing.assert_allclose(s["w"].data, [0.9, -1.9], atol=1e-12)
    assert s["w"].grad is None


def test_adam_quadratic_bowl():
    s = ParamStore()
    s.add("w", np.array([1.0]))
    for _ in range(500):
        w = s["w"]
        T.tsum(T.square(w)).backward()
        adam_step(s, 1e-2)
    assert abs(s["w"].data[0]) < 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    s = ParamStore()
    MLP(s, "m", [3, 4, 2], rng)
    for p in s.params.values():
        p.grad = rng.normal(size=p.shape)
    adam_step(s, 1e-3)
    s.freeze("m.1")
    blob = s.to_bytes("abc")
    s2, header = ParamStore.from_bytes(blob)
    assert s2.to_bytes("abc") == blob
    assert header["config_digest"] == "abc" and s2.step == 1 and s2.frozen == s.frozen
    s.save(tmp_path / "c.ckpt", "abc")
    s3, _ = ParamStore.load(tmp_path / "c.ckpt")
    assert s3.digest() == s.digest()
    with pytest.raises(CheckpointError):
        ParamStore.from_bytes(b"garbage!" + blob[8:])
    with pytest.raises(CheckpointError):
        ParamStore.from_bytes(blob + b"\0")


def test_store_contracts():
    s = ParamStore()
    s.add("a", np.zeros(2))
    with pytest.raises(KeyError):
        s.add("a", np.zeros(2))
    with pytest.raises(CheckpointError):
        s.load_values({"a": np.zeros(3)})
    s.freeze("a")
    T.tsum(T.square(T.add(s["a"], 1.0))).backward()
    assert s["a"].grad is None
