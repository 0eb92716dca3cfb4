import numpy as np
import pytest

from elp.exceptions import InvalidParam, NumericsError, ShapeError
from elp import nncore as nn
from elp.nncore import Tensor

from conftest import gradcheck

TOL = 1e-4


def _r(rng, *shape):
    return rng.normal(size=shape)


OPS = {
    "add": (lambda a, b: nn.add(a, b), lambda r: [_r(r, 3, 4), _r(r, 3, 4)]),
    "add_broadcast": (lambda a, b: a + b, lambda r: [_r(r, 3, 4), _r(r, 4)]),
    "sub": (lambda a, b: a - b, lambda r: [_r(r, 3, 4), _r(r, 3, 4)]),
    "mul": (lambda a, b: nn.mul(a, b), lambda r: [_r(r, 3, 4), _r(r, 3, 4)]),
    "div": (lambda a, b: a / b, lambda r: [_r(r, 3, 4), 2.0 + r.random((3, 4))]),
    "matmul": (lambda a, b: nn.matmul(a, b), lambda r: [_r(r, 3, 4), _r(r, 4, 5)]),
    "matmul_batched": (lambda a, b: a @ b, lambda r: [_r(r, 2, 3, 4), _r(r, 4, 2)]),
    "elu": (lambda a: nn.elu(a), lambda r: [_r(r, 3, 4)]),
    "relu": (lambda a: nn.relu(a), lambda r: [_r(r, 3, 4)]),
    "softmax": (lambda a: nn.softmax(a), lambda r: [_r(r, 3, 4)]),
    "layernorm": (lambda a, g, b: nn.layernorm(a, g, b), lambda r: [_r(r, 3, 4), _r(r, 4), _r(r, 4)]),
    "conv1d": (lambda a, w, b: nn.conv1d(a, w, b), lambda r: [_r(r, 3, 4), _r(r, 3, 4, 2), _r(r, 2)]),
    "conv1d_batched": (lambda a, w: nn.conv1d(a, w), lambda r: [_r(r, 2, 5, 3), _r(r, 3, 3, 4)]),
    "maxpool1d": (lambda a: nn.maxpool1d(a), lambda r: [_r(r, 3, 4)]),
    "maxpool1d_long": (lambda a: nn.maxpool1d(a), lambda r: [_r(r, 2, 7, 3)]),
    "concat": (lambda a, b: nn.concat([a, b], axis=0), lambda r: [_r(r, 3, 4), _r(r, 2, 4)]),
    "slice": (lambda a: a[1:, ::2], lambda r: [_r(r, 3, 4)]),
    "reshape": (lambda a: a.reshape(4, 3), lambda r: [_r(r, 3, 4)]),
    "transpose": (lambda a: a.transpose(1, 0), lambda r: [_r(r, 3, 4)]),
    "sum": (lambda a: a.sum(axis=0), lambda r: [_r(r, 3, 4)]),
    "mean": (lambda a: a.mean(axis=-1, keepdims=True), lambda r: [_r(r, 3, 4)]),
    "broadcast_to": (lambda a: nn.broadcast_to(a, (3, 4)), lambda r: [_r(r, 1, 4)]),
    "take_rows": (lambda a: nn.take_rows(a, np.array([2, 0])), lambda r: [_r(r, 3, 4)]),
    "put_rows": (lambda a, v: nn.put_rows(a, np.array([1]), v), lambda r: [_r(r, 3, 4), _r(r, 1, 4)]),
    "masked_fill": (
        lambda a: nn.masked_fill(a, np.triu(np.ones((3, 4), bool), 1), -5.0),
        lambda r: [_r(r, 3, 4)],
    ),
    "mse_loss": (lambda a, b: nn.mse_loss(a, b), lambda r: [_r(r, 3, 4), _r(r, 3, 4)]),
    "dropout_eval": (
        lambda a: nn.dropout(a, 0.5, np.random.default_rng(0), training=False),
        lambda r: [_r(r, 3, 4)],
    ),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    op, make = OPS[name]
    arrays = make(np.random.default_rng(7))
    assert gradcheck(op, arrays) < TOL


def test_dropout_train_gradient_uses_same_mask():
    x = np.random.default_rng(0).normal(size=(3, 4))
    # a freshly seeded generator per call reproduces the mask for the oracle
    op = lambda a: nn.dropout(a, 0.3, np.random.default_rng(5), training=True)
    assert gradcheck(op, [x]) < TOL


def test_softmax_uniform_and_normalised(rng):
    out = nn.softmax(Tensor(np.zeros(3))).data
    np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-15)
    rows = nn.softmax(Tensor(rng.normal(scale=10, size=(50, 7)))).data
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(rows > 0)


def test_matmul_identity(rng):
    x = rng.normal(size=(4, 5))
    np.testing.assert_array_equal(nn.matmul(Tensor(np.eye(4)), Tensor(x)).data, x)


def test_shape_errors():
    with pytest.raises(ShapeError):
        nn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        nn.conv1d(Tensor(np.ones((5, 2))), Tensor(np.ones((3, 3, 1))))
    with pytest.raises(ShapeError):
        nn.mse_loss(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_conv_same_padding_and_pool_lengths():
    for length in range(1, 12):
        x = Tensor(np.ones((length, 2)))
        assert nn.conv1d(x, Tensor(np.ones((3, 2, 4)))).shape == (length, 4)
        assert nn.maxpool1d(x).shape == (-(-length // 2), 2)


def test_mse_loss_values():
    assert nn.mse_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
    assert nn.mse_loss(Tensor([1.0, -1.0]), Tensor([0.0, 0.0])).item() == 1.0
    pred = Tensor([3.0, 0.0], requires_grad=True)
    nn.mse_loss(pred, Tensor([1.0, 1.0])).backward()
    np.testing.assert_allclose(pred.grad, [2.0, -1.0])


def test_composite_backward_equals_jacobian_product(rng):
    """Chain rule on a 3-op graph against explicitly multiplied per-op Jacobians."""
    x0 = rng.normal(size=(2, 3))
    w0 = rng.normal(size=(3, 2))

    def f1(x):
        return x @ w0

    def f2(y):
        return np.where(y > 0, y, np.expm1(y))

    def f3(z):
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def jac(f, x, h=1e-6):
        fx = f(x)
        J = np.zeros((fx.size, x.size))
        for i in range(x.size):
            d = np.zeros(x.size)
            d[i] = h
            J[:, i] = (f(x + d.reshape(x.shape)) - f(x - d.reshape(x.shape))).ravel() / (2 * h)
        return J

    y = f1(x0)
    z = f2(y)
    chain = jac(f3, z) @ jac(f2, y) @ jac(f1, x0)  # 4 x 6
    v = rng.normal(size=(2, 2))
    expected = (v.ravel() @ chain).reshape(x0.shape)

    x = Tensor(x0, requires_grad=True)
    out = nn.softmax(nn.elu(nn.matmul(x, Tensor(w0))))
    out.backward(v)
    np.testing.assert_allclose(x.grad, expected, rtol=1e-6, atol=1e-8)


def test_shared_subgraph_accumulates(rng):
    a = Tensor(rng.normal(size=(3,)), requires_grad=True)
    b = a * a + a
    (b * b).sum().backward()
    x = a.data
    np.testing.assert_allclose(a.grad, 2 * (x * x + x) * (2 * x + 1))


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(2), requires_grad=True)
    with nn.no_grad():
        b = a * 2
    assert not b.requires_grad and b._parents == ()


def test_debug_numerics_raises():
    with nn.debug_numerics(), np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(NumericsError):
            Tensor(np.array([1.0, 0.0])) / Tensor(np.array([0.0, 0.0]))


def test_determinism_of_forward_and_backward():
    def run():
        rng = np.random.default_rng(3)
        lin = nn.Linear(4, 3, rng)
        x = Tensor(rng.normal(size=(5, 4)))
        out = nn.dropout(nn.elu(lin(x)), 0.2, rng, training=True)
        out.sum().backward()
        return out.data, lin.weight.grad

    (o1, g1), (o2, g2) = run(), run()
    assert o1.tobytes() == o2.tobytes() and g1.tobytes() == g2.tobytes()


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = {"w": np.array([1.0, -2.0])}
        state = nn.AdamState()
        for _ in range(5):
            nn.adam_step(p, {"w": np.zeros(2)}, state, lr=1e-2)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_constant_gradient_descends(self):
        p = {"w": np.array([0.0, 0.0])}
        state = nn.AdamState()
        for _ in range(100):
            nn.adam_step(p, {"w": np.array([0.5, -3.0])}, state, lr=1e-2)
        assert p["w"][0] < 0 < p["w"][1]
        assert state.step == 100

    def test_single_step_matches_reference(self):
        # hand-rolled scalar Adam, written independently of adam_step
        b1, b2, eps, lr, g, p0 = 0.9, 0.999, 1e-8, 1e-4, 1.0, 1.0
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        mhat = m / (1 - b1)
        vhat = v / (1 - b2)
        expected = p0 - lr * mhat / (vhat**0.5 + eps)
        p = {"w": np.array([p0])}
        nn.adam_step(p, {"w": np.array([g])}, nn.AdamState(), lr=lr)
        assert abs(p["w"][0] - expected) < 1e-12

    def test_module_optimizer_reduces_loss(self, rng):
        lin = nn.Linear(3, 1, rng)
        x = Tensor(rng.normal(size=(20, 3)))
        y = Tensor(x.data @ np.array([[1.0], [-2.0], [0.5]]))
        opt = nn.Adam(lin.parameters(), lr=0.05)
        first = None
        for _ in range(200):
            opt.zero_grad()
            loss = nn.mse_loss(lin(x), y)
            loss.backward()
            opt.step()
            first = first if first is not None else loss.item()
        assert loss.item() < 1e-2 * first


@pytest.mark.parametrize("epoch,expected", [(0, 1e-4), (1, 5e-5), (3, 1.25e-5)])
def test_lr_schedule(epoch, expected):
    assert nn.lr_schedule(epoch, 1e-4) == pytest.approx(expected, rel=1e-15)


def test_lr_schedule_rejects_negative_epoch():
    with pytest.raises(InvalidParam):
        nn.lr_schedule(-1)


def test_checkpoint_round_trip(tmp_path, rng):
    state = {"a.weight": rng.normal(size=(3, 2)), "b": rng.normal(size=(4,))}
    path = tmp_path / "w.npz"
    nn.save_checkpoint(path, state)
    loaded = nn.load_checkpoint(path)
    assert set(loaded) == set(state)
    for k in state:
        assert loaded[k].tobytes() == state[k].tobytes()


def test_module_state_dict_round_trip(rng):
    a, b = nn.Linear(3, 2, rng), nn.Linear(3, 2, rng)
    b.load_state_dict(a.state_dict())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
