"""Model graph tests."""
from pathlib import Path

import numpy as np
import pytest
from conftest import batchnorm_model, feature_spec

GOLDEN = Path(__file__).parent / "golden"


def test_build_digit_model() -> None:
    """Test the digit recognition network."""
    from msdial import ArchitectureSpec, build_digit_model

    spec = ArchitectureSpec(task="digits", classes=10, sources=3, in_channels=1)
    model = build_digit_model(spec, np.random.default_rng(0))
    assert model.count("conv") == 3
    assert model.count("fc") == 3
    final = model.nodes[model.classifier_index]
    assert final is model.nodes[-1]
    assert final.kind == "fc"
    assert final.layer.out_features == 10

    logits = model.forward(np.zeros((1, 1, 32, 32)), 0)
    assert logits.shape == (1, 10)
    assert np.isfinite(logits.data).all()

    expected = (
        (1 * 64 * 25 + 64)
        + (64 * 64 * 25 + 64)
        + (64 * 128 * 25 + 128)
        + (128 * 4 * 4 * 2048 + 2048)
        + (2048 * 1024 + 1024)
        + (1024 * 10 + 10)
    )
    assert model.parameter_count() == expected


def test_build_feature_mlp() -> None:
    """Test the pre-computed features network."""
    from msdial import (
        ArchitectureSpec,
        build_digit_model,
        build_feature_mlp,
        build_model,
    )
    from msdial.exceptions import GraphError

    rng = np.random.default_rng(0)
    model = build_feature_mlp(
        ArchitectureSpec(task="features", classes=31, sources=2), rng
    )
    widths = [
        (node.layer.in_features, node.layer.out_features)
        for node in model
        if node.kind == "fc"
    ]
    assert widths == [(2048, 1000), (1000, 500), (500, 100), (100, 31)]

    model = build_model(ArchitectureSpec(task="features", classes=65, sources=3), rng)
    assert model.nodes[model.classifier_index].layer.out_features == 65
    logits = model.forward(np.zeros((1, 2048)), 0)
    assert logits.shape == (1, 65)
    assert np.isfinite(logits.data).all()

    with pytest.raises(GraphError):
        build_feature_mlp(ArchitectureSpec(task="digits", classes=10, sources=1), rng)

    with pytest.raises(GraphError):
        build_digit_model(ArchitectureSpec(task="features", classes=10, sources=1), rng)


def test_architecture_spec() -> None:
    """Test architecture validation."""
    from msdial import ArchitectureSpec
    from msdial.exceptions import ValidationError

    spec = ArchitectureSpec(task="features", classes=2, sources=1)
    assert spec.domain_count == 2

    with pytest.raises(ValidationError):
        ArchitectureSpec(task="features", classes=1, sources=1)

    with pytest.raises(ValidationError):
        ArchitectureSpec(task="features", classes=2, sources=0)

    with pytest.raises(ValidationError):
        ArchitectureSpec(task="features", classes=2, sources=1, hidden=())

    with pytest.raises(ValidationError):
        ArchitectureSpec(task="images", classes=2, sources=1)


def test_insert_ms_dial_digit_model() -> None:
    """Test an alignment layer follows every layer but the final classifier."""
    from msdial import ArchitectureSpec, build_digit_model, insert_ms_dial

    spec = ArchitectureSpec(task="digits", classes=10, sources=3, in_channels=1)
    model = build_digit_model(spec, np.random.default_rng(0))
    rewritten = insert_ms_dial(model, 4)
    assert rewritten.count("dial") == 5
    assert rewritten.count("dial") == model.count("conv") + model.count("fc") - 1
    assert model.count("dial") == 0
    assert rewritten.describe() == (GOLDEN / "digit_model_dial.txt").read_text()

    before = [
        param.data
        for node in model
        if node.kind in ("conv", "fc")
        for param in node.layer.parameters()
    ]
    after = [
        param.data
        for node in rewritten
        if node.kind in ("conv", "fc")
        for param in node.layer.parameters()
    ]
    assert len(before) == len(after) == 12
    for original, copied in zip(before, after):
        assert np.array_equal(original, copied)
        assert original is not copied

    again = insert_ms_dial(rewritten, 4)
    assert again.describe() == rewritten.describe()


def test_insert_ms_dial_batchnorm() -> None:
    """Test batch normalization layers are replaced with affine copied."""
    from msdial import insert_ms_dial
    from msdial.exceptions import GraphError

    model = batchnorm_model(np.random.default_rng(1))
    assert model.count("batchnorm") == 4
    rewritten = insert_ms_dial(model, 3)
    assert rewritten.count("dial") == 4
    assert rewritten.count("batchnorm") == 0
    assert len(rewritten) == len(model)

    originals = [node.layer.state for node in model if node.kind == "batchnorm"]
    dials = [node.layer.layer for node in rewritten if node.kind == "dial"]
    for state, dial in zip(originals, dials):
        assert np.array_equal(dial.shared_gamma.data, state.gamma.data)
        assert np.array_equal(dial.shared_beta.data, state.beta.data)
        assert dial.domain_count == 3
        assert dial.channels == state.channels

    assert insert_ms_dial(rewritten, 3).count("dial") == 4

    with pytest.raises(GraphError):
        insert_ms_dial(model, 1)


def test_describe() -> None:
    """Test the text description against the golden file."""
    from msdial import build_model, insert_ms_dial

    model = build_model(feature_spec(), np.random.default_rng(0))
    assert model.describe().splitlines()[-1] == "fc in=4 out=3 final"
    rewritten = insert_ms_dial(model, 3)
    assert rewritten.describe() == (GOLDEN / "feature_mlp_dial.txt").read_text()


def test_forward_routing() -> None:
    """Test training segments and inference domains routing."""
    from msdial import DomainSegments, build_model, insert_ms_dial
    from msdial.exceptions import SegmentError

    rng = np.random.default_rng(2)
    model = build_model(feature_spec(dropout_fc=0.0), rng)
    batch = rng.normal(size=(6, 5))
    segments = DomainSegments.from_counts([3, 3])

    # Without alignment layers, train and eval agree when dropout is disabled
    train = model.forward(batch, segments, "train").data
    evaluated = np.concatenate(
        [model.forward(batch[:3], 0).data, model.forward(batch[3:], 1).data]
    )
    assert np.allclose(train, evaluated, rtol=0.0, atol=1e-12)

    dial_model = insert_ms_dial(model, 3)
    batch = rng.normal(size=(9, 5))
    logits = dial_model.forward(
        batch, DomainSegments.from_counts([3, 3, 3]), "train", rng
    )
    assert logits.shape == (9, 3)

    target = dial_model.forward(batch[6:], 2).data
    source = dial_model.forward(batch[6:], 0).data
    for node in dial_model:
        if node.kind == "dial":
            node.layer.layer.per_domain[0].running_mean += 10.0
    assert np.array_equal(dial_model.forward(batch[6:], 2).data, target)
    assert not np.array_equal(dial_model.forward(batch[6:], 0).data, source)

    with pytest.raises(SegmentError):
        dial_model.forward(batch, 0, "train")

    with pytest.raises(SegmentError):
        dial_model.forward(batch, segments, "eval")


def test_forward_stop() -> None:
    """Test activations entering a node."""
    from msdial import build_model
    from msdial.exceptions import GraphError

    rng = np.random.default_rng(3)
    model = build_model(feature_spec(), rng)
    batch = rng.normal(size=(4, 5))
    features = model.forward(batch, 0, stop=model.classifier_index)
    assert features.shape == (4, 4)
    assert np.all(features.data >= 0.0)
    assert np.array_equal(model.forward(batch, 0, stop=0).data, batch)
    assert model.forward(batch, 0, stop=len(model)).shape == (4, 3)

    with pytest.raises(GraphError):
        model.forward(batch, 0, stop=len(model) + 1)


def test_single_domain_model_reduction() -> None:
    """Test single domain alignment layers reproduce batch normalization."""
    from msdial import DialLayer, DomainSegments, LayerNode
    from msdial._layers import BatchNorm, Dial

    rng = np.random.default_rng(4)
    model = batchnorm_model(rng)
    dial_model = model.copy()
    dial_model.nodes = [
        LayerNode(Dial(DialLayer.from_batchnorm(node.layer.state, 1)))
        if isinstance(node.layer, BatchNorm)
        else node
        for node in dial_model.nodes
    ]
    batch = rng.normal(size=(7, 5))
    segments = DomainSegments.single(7)
    expected = model.forward(batch, segments, "train").data
    out = dial_model.forward(batch, segments, "train").data
    assert np.max(np.abs(out - expected)) < 1e-12

    expected = model.forward(batch, 0).data
    out = dial_model.forward(batch, 0).data
    assert np.max(np.abs(out - expected)) < 1e-12


def test_model_graph_errors() -> None:
    """Test graph construction errors."""
    from msdial import LayerNode, ModelGraph
    from msdial._layers import Linear
    from msdial.exceptions import GraphError

    rng = np.random.default_rng(0)
    with pytest.raises(GraphError):
        ModelGraph([LayerNode(Linear(2, 2, rng))], feature_spec())

    with pytest.raises(GraphError):
        ModelGraph(
            [
                LayerNode(Linear(2, 2, rng), is_final_classifier=True),
                LayerNode(Linear(2, 2, rng), is_final_classifier=True),
            ],
            feature_spec(),
        )
