"""Layers tests."""
import numpy as np
import pytest


def test_bn_forward_train() -> None:
    """Test batch normalization with batch statistics."""
    from msdial import BatchNormState, bn_forward
    from msdial.exceptions import SegmentError

    state = BatchNormState(1)
    out = bn_forward([[1.0], [3.0]], state, "train")
    assert out.data.ravel() == pytest.approx([-0.99999, 0.99999], abs=1e-5)

    # Running statistics move by one momentum step from (0, 1)
    assert state.running_mean.tolist() == pytest.approx([0.2])
    assert state.running_var.tolist() == pytest.approx([0.9 + 0.1 * 2.0])
    assert state.num_batches_seen == 1

    state = BatchNormState(1)
    state.beta.data[:] = 0.5  # type: ignore
    out = bn_forward([[5.0], [5.0], [5.0]], state, "train")
    assert out.data.ravel().tolist() == [0.5, 0.5, 0.5]

    with pytest.raises(SegmentError):
        bn_forward([[1.0]], BatchNormState(1), "train")


def test_bn_forward_eval() -> None:
    """Test batch normalization with running statistics."""
    from msdial import BatchNormState, bn_forward
    from msdial.exceptions import ShapeError

    x = np.random.default_rng(0).normal(size=(4, 3))
    out = bn_forward(x, BatchNormState(3), "eval")
    assert np.allclose(out.data, x, atol=1e-4)

    with pytest.raises(ShapeError):
        bn_forward(x, BatchNormState(2), "eval")

    with pytest.raises(ShapeError):
        bn_forward(np.ones(3), BatchNormState(3), "eval")

    with pytest.raises(ValueError):
        BatchNormState(3, momentum=0.0)


def test_dial_forward_train() -> None:
    """Test each domain is standardized by its own statistics."""
    from msdial import DialLayer, DomainSegments, dial_forward_train

    x = np.array([[0.0], [2.0], [10.0], [14.0]])
    segments = DomainSegments.from_counts([2, 2])
    layer = DialLayer(1, 2)
    out = dial_forward_train(x, segments, layer).data.ravel()
    assert out == pytest.approx([-1.0, 1.0, -1.0, 1.0], abs=1e-5)

    layer = DialLayer(1, 2)
    layer.shared_gamma.data[:] = 2.0
    layer.shared_beta.data[:] = 1.0
    out = dial_forward_train(x, segments, layer).data.ravel()
    assert out == pytest.approx([-1.0, 3.0, -1.0, 3.0], abs=1e-4)

    # Each domain statistics are updated from its own segment only
    assert layer.per_domain[0].running_mean.tolist() == pytest.approx([0.1])
    assert layer.per_domain[1].running_mean.tolist() == pytest.approx([1.2])
    assert layer.per_domain[0].gamma is None


def test_dial_forward_train_errors() -> None:
    """Test invalid domain segments."""
    from msdial import DialLayer, DomainSegments, dial_forward_train
    from msdial.exceptions import SegmentError

    x = np.ones((6, 2))
    layer = DialLayer(2, 3)
    with pytest.raises(SegmentError):
        dial_forward_train(x, DomainSegments.from_counts([3, 3]), layer)

    with pytest.raises(SegmentError):
        dial_forward_train(x, DomainSegments.from_counts([2, 3, 1]), layer)

    with pytest.raises(SegmentError):
        dial_forward_train(x, DomainSegments.from_counts([2, 2, 1]), layer)

    with pytest.raises(SegmentError):
        DomainSegments([(0, 0, 2), (1, 3, 2)])

    with pytest.raises(SegmentError):
        DomainSegments([(1, 0, 2), (0, 2, 2)])

    with pytest.raises(SegmentError):
        DomainSegments([])

    with pytest.raises(SegmentError):
        DialLayer(2, 0)


def test_dial_canonical_alignment() -> None:
    """Test per-segment statistics of the output over random configurations."""
    from msdial import DialLayer, DomainSegments, dial_forward_train

    rng = np.random.default_rng(0)
    for _ in range(100):
        domains = int(rng.integers(2, 6))
        channels = int(rng.integers(1, 5))
        counts = [int(count) for count in rng.integers(8, 17, domains)]
        spatial = (3, 2) if rng.random() < 0.3 else ()
        x = np.concatenate(
            [
                rng.normal(
                    rng.uniform(-100.0, 100.0),
                    rng.uniform(3.0, 10.0),
                    (count, channels, *spatial),
                )
                for count in counts
            ]
        )
        segments = DomainSegments.from_counts(counts)
        out = dial_forward_train(x, segments, DialLayer(channels, domains)).data
        axes = (0, 2, 3) if spatial else (0,)
        for start, stop in segments.bounds():
            rows = out[start:stop]
            assert np.all(np.abs(rows.mean(axis=axes)) < 1e-9)
            assert np.all(np.abs(rows.var(axis=axes) - 1.0) < 1e-4)


def test_dial_single_domain_reduction() -> None:
    """Test a single domain alignment layer behaves like batch normalization."""
    from msdial import (
        BatchNormState,
        DialLayer,
        DomainSegments,
        bn_forward,
        dial_forward_train,
    )

    rng = np.random.default_rng(1)
    x = rng.normal(2.0, 3.0, (8, 3, 2, 2))
    state = BatchNormState(3)
    state.gamma.data[:] = rng.uniform(0.5, 2.0, 3)  # type: ignore
    state.beta.data[:] = rng.normal(size=3)  # type: ignore
    layer = DialLayer.from_batchnorm(state, 1)
    expected = bn_forward(x, state, "train").data
    out = dial_forward_train(x, DomainSegments.single(8), layer).data
    assert np.max(np.abs(out - expected)) < 1e-12
    assert np.array_equal(layer.per_domain[0].running_var, state.running_var)


def test_dial_row_order() -> None:
    """Test rows permuted inside their segment are permuted in the output."""
    from msdial import DialLayer, DomainSegments, dial_forward_train

    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 4))
    segments = DomainSegments.from_counts([4, 6])
    order = np.concatenate([rng.permutation(4), 4 + rng.permutation(6)])
    expected = dial_forward_train(x, segments, DialLayer(4, 2)).data
    shuffled = dial_forward_train(x[order], segments, DialLayer(4, 2)).data
    inverse = np.argsort(order)
    assert np.allclose(shuffled[inverse], expected, rtol=0.0, atol=1e-12)


def test_dial_forward_eval() -> None:
    """Test inference uses the requested domain statistics."""
    from msdial import (
        BatchNormState,
        DialLayer,
        DomainSegments,
        bn_forward,
        dial_forward_eval,
        dial_forward_train,
    )
    from msdial.exceptions import SegmentError

    rng = np.random.default_rng(3)
    layer = DialLayer(2, 3)
    x = rng.normal(size=(5, 2))
    with pytest.raises(SegmentError):
        dial_forward_eval(x, 2, layer)

    with pytest.raises(SegmentError):
        dial_forward_eval(x, 3, layer)

    batch = rng.normal(size=(9, 2))
    dial_forward_train(batch, DomainSegments.from_counts([3, 3, 3]), layer)
    target = layer.per_domain[2]
    assert target.running_mean == pytest.approx(0.1 * batch[6:].mean(axis=0))

    state = BatchNormState(2)
    state.running_mean = target.running_mean.copy()
    state.running_var = target.running_var.copy()
    state.gamma.data[:] = layer.shared_gamma.data  # type: ignore
    state.beta.data[:] = layer.shared_beta.data  # type: ignore
    expected = bn_forward(x, state, "eval").data
    assert np.array_equal(dial_forward_eval(x, 2, layer).data, expected)

    # Other domains statistics do not interfere
    layer.per_domain[0].running_mean += 100.0
    assert np.array_equal(dial_forward_eval(x, 2, layer).data, expected)


def test_dropout_forward() -> None:
    """Test inverted dropout."""
    from msdial import dropout_forward
    from msdial.exceptions import GraphError

    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    assert np.array_equal(dropout_forward(x, 0.0, "train", rng).data, x)
    assert np.array_equal(dropout_forward(x, 0.0, "eval").data, x)
    assert np.array_equal(dropout_forward(x, 0.7, "eval").data, x)

    ones = np.ones(100_000)
    out = dropout_forward(ones, 0.5, "train", rng).data
    assert abs(np.mean(out != 0.0) - 0.5) < 0.01
    assert abs(out.mean() - 1.0) < 0.01
    assert set(np.unique(out).tolist()) == {0.0, 2.0}

    with pytest.raises(ValueError):
        dropout_forward(x, 1.0, "train", rng)

    with pytest.raises(GraphError):
        dropout_forward(x, 0.5, "train")


def test_layer_gradients() -> None:
    """Test gradients through batch statistics pass the finite difference check."""
    from msdial import (
        BatchNormState,
        DialLayer,
        DomainSegments,
        Tensor,
        bn_forward,
        dial_forward_train,
        grad_check,
    )

    rng = np.random.default_rng(4)
    weights = rng.normal(size=(8, 3))
    report = grad_check(
        lambda x: (bn_forward(x, BatchNormState(3), "train") * weights).sum(),
        rng.normal(size=(8, 3)),
    )
    assert report.max_rel_err < 1e-4

    segments = DomainSegments.from_counts([3, 2, 3])
    weights = rng.normal(size=(8, 2, 2, 2))
    report = grad_check(
        lambda x: (dial_forward_train(x, segments, DialLayer(2, 3)) * weights).sum(),
        rng.normal(size=(8, 2, 2, 2)),
    )
    assert report.max_rel_err < 1e-4

    layer = DialLayer(3, 2)
    x = rng.normal(size=(6, 3))
    weights = rng.normal(size=(6, 3))
    segments = DomainSegments.from_counts([3, 3])

    def affine_loss(gamma: Tensor) -> Tensor:
        """Loss as a function of the shared scale."""
        layer.shared_gamma = gamma
        return (dial_forward_train(x, segments, layer) * weights).sum()

    report = grad_check(affine_loss, rng.uniform(0.5, 2.0, 3))
    assert report.max_rel_err < 1e-4


def test_domain_segments() -> None:
    """Test segments construction."""
    from msdial import DomainSegments

    segments = DomainSegments.from_counts([2, 3, 4])
    assert segments.rows == 9
    assert segments.domain_ids == (0, 1, 2)
    assert segments.bounds() == [(0, 2), (2, 5), (5, 9)]
    assert len(segments) == 3
    assert segments == DomainSegments([(0, 0, 2), (1, 2, 3), (2, 5, 4)])
    assert DomainSegments.single(5, 3).domain_ids == (3,)
    assert "DomainSegments" in repr(segments)
