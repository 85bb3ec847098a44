import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcbir.nncore import (
    Adam,
    CheckpointError,
    GraphError,
    LayerSpec,
    NonFiniteGradientError,
    OptimizerConfig,
    Parameter,
    ShapeError,
    Tensor,
    build_network,
    conv2d,
    frozen,
    grad_check,
    grad_check_fn,
    instance_norm,
    load_checkpoint,
    maximum,
    no_grad,
    optimizer_step,
    relative_error,
    save_checkpoint,
)
from pcbir.nncore.tensor import conv_output_size


def test_relu_forward():
    out = Tensor([-1.0, 0.0, 2.0]).relu()
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_identity_1x1_conv_is_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 5, 5)))
    w = np.zeros((3, 3, 1, 1), dtype=np.float32)
    w[np.arange(3), np.arange(3)] = 1.0
    out = conv2d(x, Tensor(w), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_same_padding_shape():
    net = build_network([LayerSpec("conv2d", 4, kernel=3, padding=1)], (1, 8, 8), np.random.default_rng(0))
    assert net(np.zeros((1, 1, 8, 8))).shape == (1, 4, 8, 8)
    assert net.output_shape == (4, 8, 8)


@given(st.integers(1, 40), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2))
def test_conv_output_size_formula(size, kernel, stride, pad):
    expected = (size + 2 * pad - kernel) // stride + 1
    assert conv_output_size(size, kernel, stride, pad) == expected
    spec = LayerSpec("conv2d", 1, kernel=kernel, stride=stride, padding=pad)
    if expected < 1:
        with pytest.raises(ShapeError):
            build_network([spec], (1, size, size), np.random.default_rng(0))
    else:
        assert build_network([spec], (1, size, size), np.random.default_rng(0)).output_shape == (1, expected, expected)


def test_shape_mismatch_names_layer():
    net = build_network([LayerSpec("conv2d", 2)], (1, 6, 6), np.random.default_rng(0), name="toy")
    with pytest.raises(ShapeError, match="toy.0.conv2d"):
        net(np.zeros((1, 3, 6, 6)))


def test_kernel_larger_than_input_rejected():
    with pytest.raises(ShapeError):
        build_network([LayerSpec("conv2d", 2, kernel=5)], (1, 3, 3), np.random.default_rng(0))


def test_linear_gradient():
    w = Parameter(np.array([1.0, -2.0, 3.0]))
    x = np.array([0.5, 4.0, -1.0], dtype=np.float32)
    (w * x).sum().backward()
    np.testing.assert_array_equal(w.grad, x)


def test_square_gradient():
    w = Parameter(np.array(5.0))
    ((w - 3.0) ** 2).mean().backward()
    assert w.grad == pytest.approx(4.0)


def test_backward_accumulates():
    w = Parameter(np.array(2.0))
    (w * 3.0).backward()
    (w * 3.0).backward()
    assert w.grad == pytest.approx(6.0)


def test_backward_without_graph_rejected():
    with pytest.raises(GraphError):
        Tensor([1.0]).sum().backward()
    w = Parameter(np.array(1.0))
    with no_grad():
        y = w * 2.0
    with pytest.raises(GraphError):
        y.backward()


def test_frozen_parameters_receive_no_gradient():
    a, b = Parameter(np.array(1.0)), Parameter(np.array(2.0))
    with frozen([b]):
        loss = a * b
    loss.backward()
    assert a.grad == pytest.approx(2.0)
    assert b.grad is None


def test_maximum_routes_gradient():
    a = Parameter(np.array([1.0, 5.0]))
    maximum(a, 3.0).sum().backward()
    np.testing.assert_array_equal(a.grad, [0.0, 1.0])


def test_instance_norm_statistics():
    x = Tensor(np.random.default_rng(1).normal(3.0, 2.0, size=(2, 3, 6, 6)))
    y = instance_norm(x).data
    np.testing.assert_allclose(y.mean(axis=(2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=(2, 3)), 1.0, atol=1e-3)


def _toy_net(seed=0):
    specs = [LayerSpec("conv2d", 3, kernel=3, padding=1), LayerSpec("instance_norm"), LayerSpec("relu"),
             LayerSpec("residual_block", 3), LayerSpec("transposed_conv2d", 2, kernel=3, stride=2, padding=1,
                                                       output_padding=1),
             LayerSpec("leaky_relu", slope=0.2), LayerSpec("conv2d", 1, kernel=1), LayerSpec("tanh"),
             LayerSpec("sigmoid")]
    return build_network(specs, (2, 5, 5), np.random.default_rng(seed), init_std=None)


def test_forward_deterministic():
    x = np.random.default_rng(3).normal(size=(2, 2, 5, 5))
    a, b = _toy_net(0)(x).data, _toy_net(0)(x).data
    assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_no_nan_on_bounded_inputs(seed):
    rng = np.random.default_rng(seed)
    specs = [LayerSpec("conv2d", 3, kernel=3, padding=1), LayerSpec("instance_norm"), LayerSpec("relu"),
             LayerSpec("residual_block", 3), LayerSpec("conv2d", 1, kernel=1), LayerSpec("tanh")]
    net = build_network(specs, (2, 5, 5), rng)
    out = net(rng.uniform(-10, 10, size=(1, 2, 5, 5)).astype(np.float32))
    assert np.all(np.isfinite(out.data))


def test_dtype_is_float32():
    net = _toy_net()
    assert all(p.dtype == np.float32 for p in net.parameters())
    assert net(np.zeros((1, 2, 5, 5))).dtype == np.float32


# -- optimizer --

def test_adam_defaults():
    cfg = OptimizerConfig()
    assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.999, 1e-8)


def test_adam_zero_grad_is_identity():
    p = Parameter(np.array([0.3, -1.2]))
    p.grad = np.zeros(2, dtype=np.float32)
    before = p.data.copy()
    optimizer_step([p], OptimizerConfig(learning_rate=0.1), 1)
    assert p.data.tobytes() == before.tobytes()


def test_adam_first_step():
    # m_hat = 1, v_hat = 1  =>  1 - 0.1 * 1 / (1 + 1e-8)
    p = Parameter(np.array(1.0))
    p.grad = np.array(1.0, dtype=np.float32)
    optimizer_step([p], OptimizerConfig(learning_rate=0.1), 1)
    assert float(p.data) == pytest.approx(0.9, abs=1e-6)
    assert p.grad == 1.0


def test_adam_identical_params_stay_identical():
    a, b = Parameter(np.array([0.5, 2.0])), Parameter(np.array([0.5, 2.0]))
    opt = Adam([a, b], OptimizerConfig(learning_rate=0.05))
    for g in ([1.0, -3.0], [0.2, 0.1]):
        a.grad = b.grad = np.array(g, dtype=np.float32)
        opt.step()
    assert a.data.tobytes() == b.data.tobytes()


def test_adam_rejects_non_finite():
    p = Parameter(np.array([1.0]), name="w")
    p.grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NonFiniteGradientError, match="'w'"):
        optimizer_step([p], OptimizerConfig(), 1)
    with pytest.raises(ValueError):
        optimizer_step([p], OptimizerConfig(), 0)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(beta1=1.0), dict(beta2=0.0), dict(epsilon=0)])
def test_optimizer_config_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizerConfig(**kwargs)


# -- gradient checking --

def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1]))[0] == pytest.approx(0.1 / 1.1)


def test_grad_check_linear_layer():
    net = build_network([LayerSpec("conv2d", 3, kernel=1)], (4, 2, 2), np.random.default_rng(0), init_std=0.5)
    report = grad_check(net, np.random.default_rng(1).normal(size=(2, 4, 2, 2)))
    assert report.worst < 1e-4


def test_grad_check_frozen_parameter_is_zero_error():
    a, b = Parameter(np.array([1.0, 2.0]), name="a"), Parameter(np.array([3.0]), name="b")
    report = grad_check_fn(lambda: (a * 2.0).sum(), [a, b])
    assert report.max_rel_error["b"] == 0.0
    assert report.passed


def test_grad_check_two_layer_conv_net():
    specs = [LayerSpec("conv2d", 3, kernel=3, padding=1), LayerSpec("tanh"), LayerSpec("conv2d", 2, kernel=3)]
    net = build_network(specs, (1, 4, 4), np.random.default_rng(0), init_std=0.5)
    report = grad_check(net, np.random.default_rng(2).normal(size=(1, 1, 4, 4)))
    assert report.worst < 1e-2


def test_grad_check_detects_wrong_gradient():
    w = Parameter(np.array([1.5]), name="w")
    tensor_mod = __import__("importlib").import_module("pcbir.nncore.tensor")

    def bad_loss():
        out = tensor_mod.Tensor._make(w.data ** 2, (w,), lambda g: (g * 3.0 * w.data,))  # true grad is 2w
        return out.sum()

    report = grad_check_fn(bad_loss, [w])
    assert not report.passed


def test_grad_check_restores_parameters():
    net = _toy_net()
    before = {k: p.data.copy() for k, p in net.named_parameters().items()}
    grad_check(net, np.random.default_rng(0).normal(size=(1, 2, 5, 5)))
    for k, p in net.named_parameters().items():
        assert p.dtype == np.float32
        assert p.data.tobytes() == before[k].tobytes()


def test_grad_check_skips_kink_crossings():
    # |w| at w = 1e-4 with eps = 1e-3 straddles the kink at 0
    w = Parameter(np.array([1e-4, 0.7]), name="w")
    report = grad_check_fn(lambda: w.abs().sum(), [w])
    assert report.skipped["w"] == 1
    assert report.passed
    unguarded = grad_check_fn(lambda: w.abs().sum(), [w], skip_kinks=False)
    assert not unguarded.passed


# -- checkpoints --

def test_checkpoint_round_trip(tmp_path):
    net = _toy_net()
    params = net.named_parameters()
    for p in params.values():
        p.first_moment = p.first_moment + 0.25
    path = save_checkpoint(tmp_path / "a.ckpt", params, step_index=7, meta={"k": 1})
    ckpt = load_checkpoint(path)
    assert ckpt.step_index == 7 and ckpt.optimizer_state and ckpt.meta == {"k": 1}
    other = _toy_net(seed=5)
    ckpt.restore(other.named_parameters())
    for name, p in other.named_parameters().items():
        assert p.data.tobytes() == params[name].data.tobytes()
        assert np.all(p.first_moment == 0.25)


def test_checkpoint_bytes_deterministic(tmp_path):
    a = save_checkpoint(tmp_path / "a.ckpt", _toy_net().named_parameters()).read_bytes()
    b = save_checkpoint(tmp_path / "b.ckpt", _toy_net().named_parameters()).read_bytes()
    assert a == b


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    path = save_checkpoint(tmp_path / "a.ckpt", {"w": Parameter(np.zeros(3))})
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path).restore({"w": Parameter(np.zeros(4))})
    with pytest.raises(CheckpointError, match="lacks"):
        load_checkpoint(path).restore({"v": Parameter(np.zeros(3))})
