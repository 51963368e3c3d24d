"""Optimizer tests."""
import numpy as np
import pytest


def test_step() -> None:
    """Test Adadelta update values."""
    from msdial import AdadeltaState, Tensor, step

    param = Tensor([1.0, -2.0], requires_grad=True)
    state = AdadeltaState([(2,)])
    param.grad = np.zeros(2)
    step([param], state)
    assert param.data.tolist() == [1.0, -2.0]
    assert not state.square_avg[0].any()
    assert not state.acc_delta[0].any()

    param.grad = np.array([1.0, -1.0])
    step([param], state)
    assert param.data == pytest.approx([1.0 - 0.0031623, -2.0 + 0.0031623], abs=1e-7)
    assert param.grad is None
    assert state.square_avg[0] == pytest.approx([0.1, 0.1])

    # Updates move against the gradient
    rng = np.random.default_rng(0)
    for _ in range(10):
        grad = rng.normal(size=2)
        before = param.data.copy()
        param.grad = grad.copy()
        step([param], state)
        assert np.all(np.sign(param.data - before) == -np.sign(grad))


def test_step_errors() -> None:
    """Test parameters without gradient."""
    from msdial import AdadeltaState, Tensor, step
    from msdial.exceptions import GraphError

    params = [Tensor([1.0], requires_grad=True), Tensor([2.0], requires_grad=True)]
    params[0].grad = np.ones(1)
    with pytest.raises(GraphError):
        step(params, AdadeltaState([(1,), (1,)]))
    assert params[0].data.tolist() == [1.0]

    with pytest.raises(ValueError):
        AdadeltaState([(1,)], rho=1.0)

    with pytest.raises(ValueError):
        AdadeltaState([(1,)], eps=0.0)


def test_adadelta() -> None:
    """Test optimizer minimizing a quadratic."""
    from msdial import Adadelta, Tape, Tensor

    param = Tensor([3.0, -4.0], requires_grad=True)
    optimizer = Adadelta([param], lr=1.0, eps=1e-2)
    start = float((param.data**2).sum())
    for _ in range(50):
        with Tape():
            (param * param).sum().backward()
        optimizer.step()
        assert param.grad is None
    assert float((param.data**2).sum()) < start

    param.grad = np.ones(2)
    optimizer.zero_grad()
    assert param.grad is None
