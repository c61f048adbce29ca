import numpy as np
import pytest

from diffcore import dc_ops as ops
from diffcore.dc_optim import Adam, adam_step
from diffcore.dc_tape import backward, no_record, record_forward
from diffcore.dc_tensor import Parameter, Tensor
from utils.errors import DegenerateTargetError, NonFiniteError, ShapeError

H_FD = 1e-5
TRIALS = 20


def _param(rng, shape, name, complex_=False):
    data = rng.standard_normal(shape)
    if complex_:
        data = data + 1j * rng.standard_normal(shape)
    return Parameter(data, name, dtype=np.complex128 if complex_ else np.float64)


def _numeric_grad(loss_fn, p: Parameter) -> np.ndarray:
    grad = np.zeros_like(p.data)
    parts = [1.0, 1j] if np.iscomplexobj(p.data) else [1.0]
    with no_record():
        for idx in np.ndindex(p.data.shape):
            for unit in parts:
                original = p.data[idx]
                p.data[idx] = original + H_FD * unit
                up = loss_fn().item()
                p.data[idx] = original - H_FD * unit
                down = loss_fn().item()
                p.data[idx] = original
                grad[idx] += unit * (up - down) / (2 * H_FD)
    return grad


def _analytic_grad(loss_fn, params):
    for p in params:
        p.zero_grad()
    with record_forward() as tape:
        loss = loss_fn()
        backward(tape, loss)
    return [p.grad.copy() for p in params]


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def _check(loss_fn, params):
    for p, g in zip(params, _analytic_grad(loss_fn, params)):
        assert _rel_err(g, _numeric_grad(loss_fn, p)) < 1e-4, p.name


def _weighted_sum(t: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum_all(ops.mul(t, Tensor(weights)))


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_ops_match_finite_differences(op):
    rng = np.random.default_rng(0)
    fn = getattr(ops, op)
    for trial in range(TRIALS):
        a, b = _param(rng, (3, 3), "a"), _param(rng, (3, 3), "b")
        R = rng.standard_normal((3, 3))
        _check(lambda: _weighted_sum(fn(a, b), R), [a, b])


@pytest.mark.parametrize("op", ["relu", "gelu"])
def test_activations_match_finite_differences(op):
    rng = np.random.default_rng(1)
    fn = getattr(ops, op)
    for trial in range(TRIALS):
        x = _param(rng, (3, 3), "x")
        x.data[np.abs(x.data) < 1e-3] = 0.5
        R = rng.standard_normal((3, 3))
        _check(lambda: _weighted_sum(fn(x), R), [x])


def test_scale_and_reductions_match_finite_differences():
    rng = np.random.default_rng(2)
    for trial in range(TRIALS):
        x = _param(rng, (3, 3), "x")
        R = rng.standard_normal((3, 3))
        _check(lambda: _weighted_sum(ops.scale(x, 1.7), R), [x])
        _check(lambda: ops.mean(ops.mul(x, Tensor(R))), [x])


def test_pointwise_matches_finite_differences():
    rng = np.random.default_rng(3)
    for trial in range(TRIALS):
        x = _param(rng, (2, 3, 3, 3), "x")
        w = _param(rng, (2, 3), "w")
        b = _param(rng, (2,), "b")
        R = rng.standard_normal((2, 2, 3, 3))
        _check(lambda: _weighted_sum(ops.pointwise(x, w, b), R), [x, w, b])


def test_losses_match_finite_differences():
    rng = np.random.default_rng(4)
    for trial in range(TRIALS):
        p = _param(rng, (2, 3, 3), "p")
        t = _param(rng, (2, 3, 3), "t")
        _check(lambda: ops.mse(p, t), [p, t])
        _check(lambda: ops.relative_l2(p, t), [p, t])


def test_spectral_conv_matches_finite_differences():
    rng = np.random.default_rng(5)
    for trial in range(TRIALS):
        h = _param(rng, (1, 2, 8, 8), "h")
        weight = _param(rng, (2, 2, 4, 2), "weight", complex_=True)
        R = rng.standard_normal((1, 2, 8, 8))
        _check(lambda: _weighted_sum(ops.spectral_conv(h, weight, 2, 2), R), [h, weight])


def test_rfft2_irfft2_chain_matches_finite_differences():
    rng = np.random.default_rng(6)
    for trial in range(TRIALS):
        x = _param(rng, (4, 4), "x")
        R = rng.standard_normal((4, 4))
        mask = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))

        def loss():
            z = ops.rfft2(x)
            filtered = ops.mul(z, Tensor(mask))
            return _weighted_sum(ops.irfft2(filtered, (4, 4)), R)

        _check(loss, [x])


def test_add_zero_is_identity():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 3)))
    assert np.array_equal(ops.add(x, Tensor(np.zeros((3, 3)))).data, x.data)


def test_fft_round_trip_and_parseval():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((8, 8)))
    z = ops.rfft2(x)
    back = ops.irfft2(z, (8, 8))
    assert np.max(np.abs(back.data - x.data)) / np.max(np.abs(x.data)) < 1e-10

    weights = np.full(5, 2.0)
    weights[0] = weights[-1] = 1.0
    energy = np.sum(weights * np.abs(z.data) ** 2)
    assert np.isclose(energy, 64 * np.sum(x.data ** 2), rtol=1e-12)


def test_rfft2_rejects_odd_grid():
    with pytest.raises(ShapeError):
        ops.rfft2(Tensor(np.zeros((5, 4))))


def test_mean_gradient():
    x = Parameter(np.arange(4.0), "x")
    with record_forward() as tape:
        grads = backward(tape, ops.mean(x))
    assert np.allclose(grads["x"], [0.25, 0.25, 0.25, 0.25])


def test_relative_l2_gradient_vanishes_at_target():
    rng = np.random.default_rng(8)
    t = rng.standard_normal((2, 4))
    p = Parameter(t.copy(), "p")
    with record_forward() as tape:
        loss = ops.relative_l2(p, Tensor(t))
        grads = backward(tape, loss)
    assert loss.item() == 0.0
    assert np.array_equal(grads["p"], np.zeros_like(t))


def test_relative_l2_rejects_zero_target():
    with pytest.raises(DegenerateTargetError):
        ops.relative_l2(Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4))))


def test_unreachable_parameter_gets_zero_gradient():
    a = Parameter(np.ones(3), "a")
    b = Parameter(np.ones(3), "b")
    with record_forward() as tape:
        ops.scale(b, 2.0)
        grads = backward(tape, ops.sum_all(a))
    assert np.array_equal(grads["b"], np.zeros(3))
    assert np.array_equal(grads["a"], np.ones(3))


def test_backward_rejects_non_scalar_loss():
    x = Parameter(np.ones(3), "x")
    with record_forward() as tape:
        out = ops.scale(x, 2.0)
        with pytest.raises(ShapeError):
            backward(tape, out)


def test_backward_is_linear():
    rng = np.random.default_rng(9)
    x = _param(rng, (3, 3), "x")
    R1, R2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    l1 = lambda: _weighted_sum(ops.gelu(x), R1)
    l2 = lambda: ops.mean(ops.mul(x, ops.relu(x)))
    g1 = _analytic_grad(l1, [x])[0]
    g2 = _analytic_grad(l2, [x])[0]
    combined = _analytic_grad(lambda: ops.add(ops.scale(l1(), 2.0), ops.scale(l2(), -3.0)), [x])[0]
    assert np.max(np.abs(combined - (2.0 * g1 - 3.0 * g2))) < 1e-10


def test_non_finite_results_raise():
    with pytest.raises(NonFiniteError):
        ops.scale(Tensor(np.array([1e308])), 1e10)


@pytest.mark.parametrize("op", [ops.relu, ops.gelu])
def test_activations_reject_nan_inputs(op):
    with pytest.raises(NonFiniteError):
        op(Tensor(np.array([1.0, np.nan, -2.0])))


def test_gradients_are_deterministic():
    def run():
        rng = np.random.default_rng(10)
        x = _param(rng, (1, 2, 8, 8), "x")
        w = _param(rng, (2, 2, 4, 2), "w", complex_=True)
        return _analytic_grad(lambda: ops.mean(ops.spectral_conv(x, w, 2, 2)), [x, w])

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_first_adam_step_moves_by_learning_rate():
    p = Parameter(np.zeros(1), "p", dtype=np.float64)
    p.grad[...] = 2.0
    adam_step([p], lr=1e-3)
    assert np.isclose(p.data[0], -1e-3, rtol=1e-6)
    assert np.array_equal(p.grad, np.zeros(1))


def test_adam_with_zero_gradient_leaves_parameters():
    p = Parameter(np.arange(4.0), "p")
    before = p.data.copy()
    Adam([p]).step()
    assert np.array_equal(p.data, before)
    adam_step([])


def test_adam_updates_complex_parts_independently():
    p = Parameter(np.zeros(1, dtype=np.complex128), "w")
    p.grad[...] = 1.0 - 1.0j
    adam_step([p], lr=1e-3)
    assert np.isclose(p.data[0].real, -1e-3, rtol=1e-6)
    assert np.isclose(p.data[0].imag, 1e-3, rtol=1e-6)
