import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgaug.beat import Beat
from ecgaug.clf import (
    ClfTrainConfig, ResidualBlock, ResNetSpec, build_resnet, predict, predict_labels, train_classifier,
)
from ecgaug.engine import functional as F
from ecgaug.engine.tensor import Tensor, backward

T = np.linspace(0, 1, 256)


def two_class_set(n=50, seed=0, shuffle_labels=False):
    rng = np.random.default_rng(seed)
    beats = []
    for k in range(n):
        freq = 3 if k % 2 else 5
        x = np.tanh(np.sin(2 * np.pi * freq * T + rng.uniform(0, 6)) + rng.normal(0, 0.3, 256))
        beats.append(Beat(x, "N" if k % 2 else "j"))
    if shuffle_labels:
        labels = rng.permutation([b.label for b in beats])
        beats = [Beat(b.samples, lab) for b, lab in zip(beats, labels)]
    return beats


@pytest.fixture(scope="module")
def overfit():
    beats = two_class_set()
    return beats, train_classifier(beats, ClfTrainConfig(epochs=200, batch_size=16, classes=("N", "j")))


def test_layer_counts():
    assert ResNetSpec(desk_scale=False).n_layers == 34
    assert ResNetSpec().n_layers == 10
    with pytest.raises(ValueError):
        ResNetSpec(n_classes=1)


def test_full_depth_shape_walk():
    rows = build_resnet(ResNetSpec(desk_scale=False)).trace(np.zeros((16, 256)))
    assert rows[-1] == ("head", (16, 7))
    assert sum("projection" in name for name, _ in rows) == 3
    assert len([r for r in rows if r[0].startswith("block")]) == 16


def test_zeroed_branch_is_identity():
    block = ResidualBlock(8, 8, 1)
    x = np.random.default_rng(1).standard_normal((3, 8, 20))
    for p in block.branch.parameters():
        p.data[...] = 0.0
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_projection_block_changes_shape():
    block = ResidualBlock(8, 16, 2)
    assert block(Tensor(np.ones((2, 8, 20)))).shape == (2, 16, 10)


def test_gradient_reaches_stem():
    net = build_resnet(ResNetSpec(n_classes=3), seed=2)
    x = np.random.default_rng(3).standard_normal((4, 1, 256))
    backward(F.cross_entropy(net(x), [0, 1, 2, 1]))
    assert np.any(net.stem.weight.grad != 0)


def test_overfit_smoke(overfit):
    beats, model = overfit
    assert max(h["train_accuracy"] for h in model.history) >= 0.95
    assert predict_labels(model, beats) == [b.label for b in beats]


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10_000))
def test_predict_rows_are_distributions(overfit, n, seed):
    _, model = overfit
    x = np.random.default_rng(seed).uniform(-1, 1, (n, 256))
    p = predict(model, x)
    assert p.shape == (n, 2)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-9


def test_duplicated_beat_identical_rows(overfit):
    beats, model = overfit
    p = predict(model, [beats[0], beats[0]])
    np.testing.assert_array_equal(p[0], p[1])


def test_predict_rejects_wrong_length(overfit):
    with pytest.raises(ValueError):
        predict(overfit[1], np.zeros((2, 100)))


def test_deterministic_history(tmp_path):
    beats = two_class_set(20)
    cfg = ClfTrainConfig(epochs=3, batch_size=8, classes=("N", "j"), checkpoint_dir=str(tmp_path))
    a = train_classifier(beats, cfg).history
    b = train_classifier(beats, ClfTrainConfig(epochs=3, batch_size=8, classes=("N", "j"))).history
    assert a == b
    assert (tmp_path / "classifier.ckpt").exists()
    assert (tmp_path / "history.csv").read_text().splitlines()[0] == "epoch,loss,train_accuracy"


def test_shuffled_labels_memorized():
    beats = two_class_set(40, shuffle_labels=True)
    model = train_classifier(beats, ClfTrainConfig(epochs=60, batch_size=8, classes=("N", "j")))
    assert model.history[-1]["train_accuracy"] > 0.5


def test_single_class_rejected():
    with pytest.raises(ValueError):
        train_classifier([Beat(np.zeros(256), "N")] * 4, ClfTrainConfig(classes=("N", "j")))
