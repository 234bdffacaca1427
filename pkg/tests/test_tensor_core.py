import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mapcon import losses
from mapcon.tensor_core import (AdamState, NonFiniteError, Tape, Tensor, TensorError, adam_step,
                                backward, finite_difference_check, op_forward, ops, strict_mode)
from mapcon.tensor_core.ops import KERNELS


def grad_of(f, x):
    leaf = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    with Tape():
        out = f(leaf)
        g = backward(out, wrt=[leaf])
    return np.array(g[leaf])


# -- op_forward examples ------------------------------------------------------

def test_relu_example():
    assert np.array_equal(op_forward("relu", [Tensor([-1.0, 0.0, 2.0])]).values, [0, 0, 2])


def test_pointwise_linear_identity(rng):
    x = rng.normal(size=(7, 4))
    y = op_forward("pointwise_linear", [Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))])
    assert np.array_equal(y.values, x)


def test_instance_norm_two_points():
    y = ops.instance_norm(Tensor([[1.0], [3.0]])).values[:, 0]
    expected = np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5)
    assert np.allclose(y, expected, atol=1e-12)


def test_unknown_kind_rejected():
    with pytest.raises(TensorError, match="bogus"):
        op_forward("bogus", [Tensor([1.0])])


def test_shape_error_names_op_and_extents():
    with pytest.raises(TensorError) as exc:
        ops.pointwise_linear(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 5))), Tensor(np.ones(5)))
    assert exc.value.op == "pointwise_linear"
    assert "(3, 2)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_matmul_shape_error():
    with pytest.raises(TensorError, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_strict_mode_rejects_nan():
    x = Tensor([1.0, np.nan])
    ops.relu(x)  # permissive by default
    with strict_mode():
        with pytest.raises(NonFiniteError):
            ops.relu(x)


def test_recorded_only_when_grad_required():
    with Tape() as tape:
        ops.relu(Tensor([1.0]))
        assert len(tape.nodes) == 0
        ops.relu(Tensor([1.0], requires_grad=True))
        assert len(tape.nodes) > 0


def test_conv1d_k3_zero_padding():
    x = np.arange(4.0)[:, None]
    w = np.array([1.0, 10.0, 100.0]).reshape(3, 1, 1)
    y = ops.conv1d_k3(Tensor(x), Tensor(w), Tensor([0.0])).values[:, 0]
    # tap 0 reads the previous point, tap 2 the next
    assert np.allclose(y, [0 + 0 + 100, 0 + 10 + 200, 1 + 20 + 300, 2 + 30 + 0])


# -- backward examples ----------------------------------------------------------

def test_backward_mean_all():
    g = grad_of(ops.mean_all, np.ones((2, 3)))
    assert np.allclose(g, 1 / 6)


def test_backward_stop_gradient_factor():
    g = grad_of(lambda x: ops.mean_all(ops.mul(ops.stop_gradient(x), x)), [2.0])
    assert np.array_equal(g, [2.0])


def test_backward_relu_sum():
    g = grad_of(lambda x: ops.sum_axis(ops.relu(x)), [-1.0, 2.0])
    assert np.array_equal(g, [0.0, 1.0])


def test_relu_subgradient_at_zero():
    assert np.array_equal(grad_of(lambda x: ops.sum_axis(ops.relu(x)), [0.0]), [0.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = ops.relu(x)
        with pytest.raises(TensorError, match="scalar"):
            backward(y)


def test_backward_requires_tape():
    with pytest.raises(TensorError, match="tape"):
        backward(Tensor(1.0))


def test_stop_gradient_blocks_exactly(rng):
    x = rng.normal(size=(5, 3))
    g = grad_of(lambda t: ops.add(ops.mean_all(ops.exp(ops.stop_gradient(t))), ops.mean_all(t)), x)
    # only the unblocked mean contributes
    assert np.array_equal(g, np.full_like(x, 1.0 / x.size))


def test_shared_leaf_accumulates():
    g = grad_of(lambda x: ops.sum_axis(ops.add(ops.mul(x, x), x)), [3.0])
    assert np.allclose(g, [7.0])


def test_replay_is_bitwise(rng):
    x = rng.normal(size=(6, 4)).astype(np.float32)
    w = rng.normal(size=(4, 4)).astype(np.float32)

    def f(t):
        return ops.mean_all(ops.instance_norm(ops.relu(ops.pointwise_linear(t, Tensor(w), Tensor(np.zeros(4, np.float32))))))
    a, b = grad_of(f, x), grad_of(f, x)
    assert a.tobytes() == b.tobytes()


# -- adam examples ------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    new, st1 = adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    assert np.array_equal(new["w"].values, p["w"].values)
    assert st1.step == 1


def test_adam_first_step_hand_value():
    p = {"w": Tensor(np.array([0.0]), requires_grad=True)}
    new, _ = adam_step(p, {"w": np.array([1.0])}, AdamState(), 0.1)
    assert np.allclose(new["w"].values, [-0.1], atol=1e-6)


def test_adam_identical_params_identical_updates():
    p = {"a": Tensor([0.5]), "b": Tensor([0.5])}
    new, _ = adam_step(p, {"a": np.array([0.3]), "b": np.array([0.3])}, AdamState(), 0.01)
    assert new["a"].values.tobytes() == new["b"].values.tobytes()


def test_adam_errors():
    p = {"w": Tensor([0.0])}
    with pytest.raises(TensorError, match="missing gradient"):
        adam_step(p, {}, AdamState(), 0.1)
    with pytest.raises(TensorError, match="learning rate"):
        adam_step(p, {"w": np.zeros(1)}, AdamState(), 0.0)


def test_adam_step_counter_increases():
    p = {"w": Tensor([0.0])}
    st0 = AdamState()
    for k in range(3):
        p, st1 = adam_step(p, {"w": np.ones(1)}, st0, 0.1)
        assert st1.step == st0.step + 1
        st0 = st1


# -- finite differences -----------------------------------------------------------------

def test_fd_mean_square(rng):
    rep = finite_difference_check(lambda x: ops.mean_all(ops.mul(x, x)), rng.normal(size=(4, 3)))
    assert rep.max_rel_error <= 1e-6 and rep.passed


def test_fd_constant():
    rep = finite_difference_check(lambda x: Tensor(3.0), np.ones(4))
    assert rep.max_abs_error == 0.0 and rep.passed


def test_fd_rec_loss(rng):
    gt = Tensor(rng.normal(size=(8, 3)))
    rep = finite_difference_check(lambda x: losses.rec_loss(x, gt), rng.normal(size=(8, 3)))
    assert rep.max_rel_error <= 1e-4


@pytest.mark.filterwarnings("ignore:invalid value encountered in log")
def test_fd_nonfinite_names_coordinate():
    with pytest.raises(TensorError, match=r"\(1,\)"):
        finite_difference_check(lambda x: ops.sum_axis(ops.log(x)), np.array([1.0, 1e-7]), h=1e-5)


def test_fd_detects_wrong_gradient():
    def bad(x):
        x = ops.as_tensor(x)
        return ops._emit("bad", np.sum(x.values ** 2), (x,), lambda g: (g * x.values,))
    rep = finite_difference_check(bad, np.array([1.0, 2.0]))
    assert not rep.passed


@pytest.mark.parametrize("shape", [(2, 3), (5, 1), (7, 4)])
@pytest.mark.parametrize("kind", ["instance_norm", "l2_norm_rows", "sigmoid", "exp", "transpose"])
def test_unary_kernels_three_shapes(kind, shape, rng):
    x = rng.normal(size=shape)
    probe = Tensor(rng.normal(size=KERNELS[kind](Tensor(x)).shape))
    rep = finite_difference_check(lambda t: ops.sum_axis(ops.mul(KERNELS[kind](t), probe)), x)
    assert rep.max_rel_error <= 1e-4


# -- properties ------------------------------------------------------------------------------

@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 5)),
              elements=st.floats(-50, 50)))
def test_instance_norm_statistics(x):
    var = x.var(axis=0)
    if np.any(var < 1e-3):
        return
    y = ops.instance_norm(Tensor(x)).values
    assert np.all(np.abs(y.mean(axis=0)) <= 1e-6)
    assert np.all(np.abs(y.var(axis=0) - 1.0) <= 1e-4 + 1e-5 / var)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)), elements=st.floats(-5, 5)))
def test_gradient_shape_matches_values(x):
    g = grad_of(lambda t: ops.mean_all(ops.mul(t, t)), x)
    assert g.shape == x.shape


def test_tensor_immutable():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.values[0] = 2.0


def test_tape_topological_order(rng):
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    with Tape() as tape:
        y = ops.mean_all(ops.relu(ops.mul(x, x)))
        backward(y)
    for nid, node in enumerate(tape.nodes):
        assert all(p is None or p < nid for p in node.parents)
