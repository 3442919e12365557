import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from masksum import numerics as nx
from masksum.numerics import Tensor


def fd_check(build, inputs, h=1e-5):
    """Max relative error between backprop and central differences over all inputs."""
    for t in inputs:
        t.grad = None
    build().backward()

    def f():
        with nx.no_grad():
            return build().item()

    worst = 0.0
    for t in inputs:
        num = nx.numerical_gradient(f, t.data, h)
        worst = max(worst, nx.relative_error(t.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nx.matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_hand():
    assert nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(nx.DimensionError, match=r"\(3, 4\).*\(3, 2\)"):
        nx.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 2))))


def test_matmul_gradcheck(rng):
    a = nx.parameter(rng.normal(size=(3, 4)))
    b = nx.parameter(rng.normal(size=(4, 2)))
    w = rng.normal(size=(3, 2))
    assert fd_check(lambda: (nx.matmul(a, b) * w).sum(), [a, b]) < 1e-6


def test_batched_matmul_gradcheck(rng):
    a = nx.parameter(rng.normal(size=(2, 3, 4)))
    b = nx.parameter(rng.normal(size=(4, 5)))
    w = rng.normal(size=(2, 3, 5))
    assert fd_check(lambda: (a @ b * w).sum(), [a, b]) < 1e-6


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax_lastdim(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    out = nx.softmax_lastdim(Tensor([0.0, -10000.0])).data
    assert out[0] > 1 - 1e-12 and out[1] < 1e-4
    x = np.array([1.0, 2.0, 3.0])
    brute = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(nx.softmax_lastdim(Tensor(x)).data, brute, rtol=0, atol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(nx.NumericError):
        nx.softmax_lastdim(Tensor([0.0, np.inf]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(x, c):
    p = nx.softmax_lastdim(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(nx.softmax_lastdim(Tensor(x + c)).data, p, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-10, 10)).filter(lambda a: np.all(a.std(axis=-1) > 1e-3)))
def test_layernorm_standardizes(x):
    d = x.shape[-1]
    y = nx.layernorm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d))).data
    assert np.all(np.abs(y.mean(axis=-1)) < 1e-9)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)


def test_backward_sum():
    w = nx.parameter([1.0, 2.0, 3.0])
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, [1, 1, 1])


def test_backward_square():
    w = nx.parameter([1.0, 2.0])
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, [2, 4])


def test_backward_nonscalar_rejected():
    w = nx.parameter([1.0, 2.0])
    with pytest.raises(nx.BackwardError):
        (w * 2.0).backward()


def test_backward_twice_rejected():
    w = nx.parameter([1.0, 2.0])
    loss = (w * w).sum()
    loss.backward()
    with pytest.raises(nx.BackwardError):
        loss.backward()


def test_mlp_gradcheck(rng):
    x = rng.normal(size=(5, 4))
    w1 = nx.parameter(rng.normal(size=(4, 6)))
    b1 = nx.parameter(rng.normal(size=6))
    w2 = nx.parameter(rng.normal(size=(6, 3)))
    b2 = nx.parameter(rng.normal(size=3))
    targets = np.array([0, 2, 1, 1, 0])

    def loss():
        h = nx.tanh(Tensor(x) @ w1 + b1)
        return nx.cross_entropy(h @ w2 + b2, targets)

    assert fd_check(loss, [w1, b1, w2, b2]) < 1e-5


@pytest.mark.parametrize("name", ["add", "sub", "mul", "div", "relu", "gelu", "tanh", "exp", "log",
                                  "pow", "softmax", "log_softmax", "layernorm", "embedding",
                                  "cross_entropy", "cross_entropy_ignore", "concat", "reshape",
                                  "transpose", "index", "mean", "sum_axis"])
def test_op_gradients(name, rng):
    a = nx.parameter(rng.normal(size=(3, 4)))
    b = nx.parameter(rng.normal(size=(3, 4)))
    bias = nx.parameter(rng.normal(size=4))
    pos = nx.parameter(rng.uniform(0.5, 2.0, size=(3, 4)))
    w = rng.normal(size=(3, 4))
    builders = {
        "add": (lambda: ((a + bias) * w).sum(), [a, bias]),
        "sub": (lambda: ((a - b) * w).sum(), [a, b]),
        "mul": (lambda: ((a * b) * w).sum(), [a, b]),
        "div": (lambda: ((a / pos) * w).sum(), [a, pos]),
        "relu": (lambda: (nx.relu(a) * w).sum(), [a]),
        "gelu": (lambda: (nx.gelu(a) * w).sum(), [a]),
        "tanh": (lambda: (nx.tanh(a) * w).sum(), [a]),
        "exp": (lambda: (nx.exp(a) * w).sum(), [a]),
        "log": (lambda: (nx.log(pos) * w).sum(), [pos]),
        "pow": (lambda: ((pos ** 1.5) * w).sum(), [pos]),
        "softmax": (lambda: (nx.softmax_lastdim(a) * w).sum(), [a]),
        "log_softmax": (lambda: (nx.log_softmax_lastdim(a) * w).sum(), [a]),
        "layernorm": (lambda: (nx.layernorm(a, pos[0], bias) * w).sum(), [a, pos, bias]),
        "embedding": (lambda: (nx.embedding_lookup(a, [2, 0, 2]) * w).sum(), [a]),
        "cross_entropy": (lambda: nx.cross_entropy(a, [1, 3, 0]), [a]),
        "cross_entropy_ignore": (lambda: nx.cross_entropy(a, [1, -100, 0], ignore_index=-100), [a]),
        "concat": (lambda: (nx.concat([a, b], axis=1) * np.tile(w, 2)).sum(), [a, b]),
        "reshape": (lambda: (a.reshape(4, 3) * w.reshape(4, 3)).sum(), [a]),
        "transpose": (lambda: (a.transpose(1, 0) * w.T).sum(), [a]),
        "index": (lambda: (a[np.array([0, 2, 2])] * w).sum(), [a]),
        "mean": (lambda: (a * w).mean(), [a]),
        "sum_axis": (lambda: (a.sum(axis=0) * w[0]).sum(), [a]),
    }
    build, inputs = builders[name]
    assert fd_check(build, inputs) < 1e-5


def test_cross_entropy_ignored_rows_get_zero_grad(rng):
    logits = nx.parameter(rng.normal(size=(3, 5)))
    nx.cross_entropy(logits, [1, -100, 4], ignore_index=-100).backward()
    np.testing.assert_array_equal(logits.grad[1], 0.0)


def test_cross_entropy_all_ignored_errors():
    with pytest.raises(ValueError):
        nx.cross_entropy(Tensor(np.zeros((2, 3))), [-100, -100], ignore_index=-100)


def test_gradient_linearity_exact(rng):
    w = nx.parameter(rng.normal(size=(4, 3)))
    x1, x2 = rng.normal(size=(2, 4)), rng.normal(size=(5, 4))

    def f1():
        return (nx.tanh(Tensor(x1) @ w) ** 2).sum()

    def f2():
        return nx.gelu(Tensor(x2) @ w).sum()

    (f1() + f2()).backward()
    together = w.grad.copy()
    w.grad = None
    f1().backward()
    g1 = w.grad.copy()
    w.grad = None
    f2().backward()
    g2 = w.grad.copy()
    np.testing.assert_array_equal(together, g1 + g2)


def test_no_grad_records_nothing():
    w = nx.parameter([1.0])
    with nx.no_grad():
        y = w * 3.0
    assert not y.requires_grad


def test_adam_zero_grad_leaves_params():
    p = nx.parameter([1.0, -2.0])
    opt = nx.Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr():
    p = nx.parameter([3.0])
    opt = nx.Adam({"p": p}, lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    # bias-corrected m_hat / sqrt(v_hat) = 1 on the first step
    np.testing.assert_allclose(p.data, [3.0 - 0.1 / (1 + 1e-8)], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(p.grad, [1.0])
    assert opt.step_count == 1


def test_adam_quadratic_bowl():
    w = nx.parameter([5.0])
    opt = nx.Adam({"w": w}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
    assert abs(w.data[0]) < 0.1


def test_adam_missing_grads_named():
    a, b = nx.parameter([1.0]), nx.parameter([2.0])
    opt = nx.Adam({"alpha": a, "beta": b})
    a.grad = np.ones(1)
    with pytest.raises(nx.BackwardError, match="beta"):
        opt.step()


def test_checkpoint_bit_exact_roundtrip(tmp_path, rng):
    params = {"w": nx.parameter(rng.normal(size=(3, 2))), "scalar": nx.parameter(np.array(np.pi)),
              "ünï": nx.parameter(rng.normal(size=(2, 2, 2)) * 1e-300)}
    path = tmp_path / "p.ckpt"
    nx.save_parameters(path, params, {"note": "x=1"})
    arrays, header = nx.load_parameters(path)
    assert header == {"note": "x=1"}
    for k, p in params.items():
        assert arrays[k].tobytes() == p.data.tobytes()
        assert arrays[k].shape == p.shape
    # saving again gives identical bytes
    path2 = tmp_path / "q.ckpt"
    restored = {k: nx.parameter(v) for k, v in arrays.items()}
    nx.save_parameters(path2, restored, header)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_layout(tmp_path):
    import struct
    path = tmp_path / "p.ckpt"
    nx.save_parameters(path, {"ab": nx.parameter([[1.5, -2.0]])})
    blob = path.read_bytes()
    assert struct.unpack_from("<II", blob) == (1, 0)
    assert struct.unpack_from("<I", blob, 8) == (2,)
    assert blob[12:14] == b"ab"
    assert struct.unpack_from("<III", blob, 14) == (2, 1, 2)
    assert struct.unpack_from("<2d", blob, 26) == (1.5, -2.0)
