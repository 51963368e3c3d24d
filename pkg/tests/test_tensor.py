"""Tensor engine tests."""
from math import log as ln

import numpy as np
import pytest


def test_elementwise() -> None:
    """Test elementwise operations values."""
    from msdial import elementwise

    assert elementwise("relu", [-1.0, 0.0, 2.0]).data.tolist() == [0.0, 0.0, 2.0]
    assert elementwise("add", [1.0, 2.0], [3.0, 4.0]).data.tolist() == [4.0, 6.0]
    assert elementwise("sub", [1.0, 2.0], [3.0, 4.0]).data.tolist() == [-2.0, -2.0]
    assert elementwise("mul", [1.0, 2.0], [3.0, 4.0]).data.tolist() == [3.0, 8.0]
    assert elementwise("neg", [1.0]).data.tolist() == [-1.0]
    assert elementwise("exp", [0.0]).data.tolist() == [1.0]
    assert elementwise("log", [1.0]).data.tolist() == [0.0]


def test_elementwise_errors() -> None:
    """Test elementwise operations errors."""
    from msdial import elementwise
    from msdial.exceptions import DomainError, GraphError, ShapeError

    with pytest.raises(ShapeError) as error:
        elementwise("add", np.ones((2, 3)), np.ones((3, 2)))
    assert "(2, 3)" in str(error.value) and "(3, 2)" in str(error.value)
    assert error.value.shapes == ((2, 3), (3, 2))

    with pytest.raises(DomainError):
        elementwise("log", [1.0, 0.0])

    with pytest.raises(DomainError):
        elementwise("log", [-1.0])

    with pytest.raises(GraphError):
        elementwise("pow", [1.0], [2.0])

    with pytest.raises(GraphError):
        elementwise("add", [1.0])

    with pytest.raises(GraphError):
        elementwise("relu", [1.0], [2.0])


def test_broadcast() -> None:
    """Test length-1 axis broadcasting and its gradients."""
    from msdial import Tape, Tensor

    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor([[10.0, 20.0, 30.0]], requires_grad=True)
    with Tape():
        out = a * b + 1.0
        out.sum().backward()
    assert out.shape == (2, 3)
    assert b.grad.tolist() == [[3.0, 5.0, 7.0]]
    assert a.grad.tolist() == [[10.0, 20.0, 30.0], [10.0, 20.0, 30.0]]


def test_matmul() -> None:
    """Test matrix product."""
    from msdial import matmul, grad_check
    from msdial.exceptions import ShapeError

    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert matmul(np.eye(2), m).data.tolist() == m.tolist()
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]

    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))

    rng = np.random.default_rng(0)
    b = rng.normal(size=(3, 3))
    report = grad_check(lambda a: matmul(a, b).sum(), rng.normal(size=(3, 3)))
    assert report.max_rel_err < 1e-6
    assert not report.has_nan


def test_conv2d() -> None:
    """Test convolution."""
    from msdial import conv2d, grad_check
    from msdial.exceptions import ShapeError

    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 1, 4, 5))
    out = conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    assert np.array_equal(out.data, x)

    out = conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out.data.tolist() == [[[[9.0]]]]

    out = conv2d(np.zeros((1, 3, 32, 32)), np.zeros((4, 3, 5, 5)), np.ones(4), 2, 2)
    assert out.shape == (1, 4, 16, 16)
    assert np.all(out.data == 1.0)

    with pytest.raises(ShapeError):
        conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)), np.zeros(1))

    with pytest.raises(ShapeError):
        conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 1, 3, 3)), np.zeros(1))

    x = rng.normal(size=(1, 1, 4, 4))
    weights = rng.normal(size=(1, 1, 3, 3))
    report = grad_check(
        lambda w: (conv2d(x, w, np.zeros(1)) * weights).sum(),
        rng.normal(size=(1, 1, 2, 2)),
    )
    assert report.max_rel_err < 1e-5

    w = rng.normal(size=(2, 2, 3, 3))
    weights = rng.normal(size=(2, 2, 3, 3))
    report = grad_check(
        lambda x: (conv2d(x, w, np.zeros(2), stride=2, padding=1) * weights).sum(),
        rng.normal(size=(2, 2, 5, 5)),
    )
    assert report.max_rel_err < 1e-5


def test_log_softmax() -> None:
    """Test log-softmax."""
    from msdial import log_softmax
    from msdial.exceptions import ShapeError

    out = log_softmax([[0.0, 0.0]])
    assert out.data == pytest.approx([[-ln(2.0), -ln(2.0)]], abs=1e-15)

    out = log_softmax([[1000.0, 0.0]])
    assert np.isfinite(out.data).all()
    assert out.data == pytest.approx([[0.0, -1000.0]])

    rows = np.random.default_rng(0).normal(scale=5.0, size=(16, 7))
    sums = np.exp(log_softmax(rows).data).sum(axis=1)
    assert np.all(np.abs(sums - 1.0) < 1e-12)

    with pytest.raises(ShapeError):
        log_softmax([[1.0]])

    with pytest.raises(ShapeError):
        log_softmax([1.0, 2.0])


def test_backward() -> None:
    """Test gradient accumulation in leaves."""
    from msdial import Tape, Tensor, backward
    from msdial.exceptions import GraphError, ShapeError

    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape():
        x.sum().backward()
    assert x.grad.tolist() == [1.0, 1.0, 1.0]

    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        loss = (x * x).sum()
        backward(loss)
    assert x.grad.tolist() == [2.0, 4.0]

    # Repeated calls accumulate
    backward(loss)
    assert x.grad.tolist() == [4.0, 8.0]
    x.zero_grad()
    assert x.grad is None

    with Tape():
        with pytest.raises(ShapeError):
            backward(x * x)

    with pytest.raises(GraphError):
        backward(Tensor(1.0))


def test_tape() -> None:
    """Test operations recording."""
    from msdial import Tape, Tensor, no_grad

    x = Tensor([1.0, 2.0], requires_grad=True)
    constant = Tensor([3.0, 4.0])
    with Tape() as tape:
        y = x * constant
        z = y.exp().sum()
        constant * constant
    assert [entry.kind for entry in tape.entries] == ["mul", "exp", "sum"]
    assert len(tape) == 3
    assert x.is_leaf
    assert not z.is_leaf
    for position, entry in enumerate(tape.entries):
        for tensor in entry.inputs:
            if not tensor.is_leaf:
                assert tape.entries.index(
                    next(e for e in tape.entries if e.output is tensor)
                ) < position

    with Tape() as tape:
        with no_grad():
            x * x
    assert len(tape) == 0
    assert Tape.current() is None

    # Without tape, nothing is recorded and no gradient can be computed
    assert (x * x).is_leaf


def test_composite_gradient() -> None:
    """Test gradient of a composite of every operation."""
    from msdial import Tensor, grad_check, log_softmax
    from msdial._tensor import exp, log, matmul, relu, reshape, slice_rows

    rng = np.random.default_rng(1)
    w = rng.normal(size=(4, 3))

    def composite(x: Tensor) -> Tensor:
        """Scalar function of every differentiable operation."""
        hidden = relu(matmul(x, w)) + exp(x * 0.1).sum(axis=1).reshape(-1, 1)
        log_probs = log_softmax(hidden - 0.5)
        smooth = log(exp(log_probs) + 1.0).mean()
        return smooth + reshape(slice_rows(log_probs, 1, 3), (6,)).sum()

    report = grad_check(composite, rng.normal(size=(4, 4)))
    assert report.max_rel_err < 1e-4
    assert not report.has_nan


def test_grad_check_report() -> None:
    """Test gradient check on trivial and non-differentiable functions."""
    from msdial import grad_check
    from msdial._tensor import relu

    report = grad_check(lambda x: x.sum(), np.random.default_rng(0).normal(size=5))
    assert report.max_rel_err < 1e-8
    assert report.worst_index is not None
    assert "GradCheckReport" in repr(report)

    report = grad_check(lambda x: relu(x).sum(), [0.0, 1.0])
    assert report.non_comparable == ((0,),)
    assert report.max_rel_err < 1e-8
    assert report.worst_index == (1,)

    report = grad_check(lambda x: (x * float("nan")).sum(), [1.0])
    assert report.has_nan
