from pathlib import Path as _P
import sys

import numpy as np
import pytest

ROOT = _P(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from app.core.config import BackboneConfig
from app.core.errors import (
    ArtifactMissingError,
    DimensionError,
    ModelLoadError,
    ParameterError,
    UnsupportedOperationError,
)
from app.core.utils import file_sha256, save_arrays
from app.services.backbone.convnet import (
    SmallConvNet,
    conv2d_backward,
    conv2d_forward,
    maxpool_backward,
    maxpool_forward,
)
from app.services.backbone.features import build_feature_streams, split_features
from app.services.backbone.finetune import JointConfig, finetune, pretrain_builtin, split_accuracy
from app.services.backbone.handle import (
    BUILTIN,
    PRETRAINED,
    BackboneHandle,
    builtin_handle,
    extract_features,
    load_backbone,
    preprocess,
    save_builtin,
)
from app.services.dataset.augment import AugmentConfig
from app.services.dataset.batching import load_split_images
from app.services.dataset.manifest import DatasetManifest, SpecimenRecord
from app.services.imaging.detector import SpecimenImage
from app.services.nn.layers import ClassifierParams

TINY = (2, 2, 2, 2, 2)


def naive_conv(x, w, b):
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    bsz, h, wd, _ = x.shape
    out = np.zeros((bsz, h, wd, w.shape[3]))
    for n in range(bsz):
        for i in range(h):
            for j in range(wd):
                for o in range(w.shape[3]):
                    out[n, i, j, o] = (pad[n, i:i + 3, j:j + 3, :] * w[:, :, :, o]).sum() + b[o]
    return out


def naive_pool(x):
    bsz, h, w, c = x.shape
    out = np.zeros((bsz, h // 2, w // 2, c))
    for i in range(h // 2):
        for j in range(w // 2):
            out[:, i, j] = x[:, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(1, 2))
    return out


class _DictLoader:
    def __init__(self, images):
        self.images = images
        self.calls = 0

    def __call__(self, path):
        self.calls += 1
        return self.images[str(path)]


def tiny_dataset(per_split=(2, 1, 1), seed=0):
    """Manifest plus in-memory loader over random 224 x 224 specimens."""
    rng = np.random.default_rng(seed)
    names = ["planktic", "calcareous_benthic", "agglutinated_benthic", "sediment"]
    records, images = [], {}
    for split, n in zip(("train", "val", "test"), per_split):
        for cls_id, cls in enumerate(names):
            for i in range(n):
                path = f"{split}/{cls}_{i}.png"
                images[path] = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
                images[path][..., cls_id % 3] = 255
                records.append(SpecimenRecord(path, cls, split))
    return DatasetManifest(records=records), _DictLoader(images)


# --- convolution primitives ---------------------------------------------------

def test_conv_matches_naive_loop():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 16, 16, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    np.testing.assert_allclose(conv2d_forward(x, w, b), naive_conv(x, w, b), atol=1e-10)


def test_maxpool_matches_naive_and_drops_odd_edge():
    x = np.random.default_rng(1).normal(size=(2, 5, 7, 3))
    out, idx = maxpool_forward(x)
    assert out.shape == (2, 2, 3, 3)
    np.testing.assert_array_equal(out, naive_pool(x))
    dx = maxpool_backward(np.ones_like(out), idx, x.shape)
    assert dx.sum() == out.size
    assert not dx[:, 4].any() and not dx[:, :, 6].any()
    np.testing.assert_array_equal(np.sort(x[dx == 1]), np.sort(out.ravel()))


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 5, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(2, 5, 5, 3))
    dx, dw, db = conv2d_backward(x, w, r)

    def loss():
        return float((conv2d_forward(x, w, b) * r).sum())

    h = 1e-5
    for arr, grad in ((w, dw), (b, db), (x, dx)):
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss()
            arr[idx] = orig - h
            down = loss()
            arr[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("cache_from", [1, 4])
def test_network_backward_matches_finite_differences(cache_from):
    net = SmallConvNet.initialize(seed=3, widths=(3, 3, 2, 2, 2))
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 32, 32, 3))
    feats, cache = net.forward(x, cache_from=cache_from)
    assert feats.shape == (2, 2)
    r = rng.normal(size=feats.shape)
    grads = net.backward(cache, r)
    assert sorted(grads) == sorted(net.block_tensors(range(cache_from, 6)))

    h = 1e-5
    for name, grad in grads.items():
        arr = net.tensors()[name]
        for idx in list(np.ndindex(arr.shape))[:12]:
            orig = arr[idx]
            arr[idx] = orig + h
            up = float((net.forward(x) * r).sum())
            arr[idx] = orig - h
            down = float((net.forward(x) * r).sum())
            arr[idx] = orig
            assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7), name


def test_network_shapes_and_validation():
    net = SmallConvNet.initialize(seed=0)
    assert net.widths == (8, 16, 32, 32, 32)
    assert net.feature_shape() == (7, 7, 32)
    assert net.feature_dim() == 1568
    with pytest.raises(DimensionError):
        SmallConvNet(net.blocks[:4])
    with pytest.raises(DimensionError):
        net.forward(np.zeros((1, 32, 32, 1)))


# --- handle and preprocessing -------------------------------------------------

def test_preprocess_examples():
    np.testing.assert_array_equal(preprocess(np.zeros((224, 224, 3), np.uint8), BUILTIN), 0.0)

    means = np.broadcast_to(np.array([0.485, 0.456, 0.406]) * 255.0, (1, 224, 224, 3))
    np.testing.assert_allclose(preprocess(means, PRETRAINED), 0.0, atol=1e-12)

    px = np.zeros((224, 224, 3), np.uint8)
    px[..., 0] = 255
    out = preprocess(px, PRETRAINED)
    assert out.shape == (1, 224, 224, 3)
    assert out[0, 0, 0, 0] == pytest.approx((1.0 - 0.485) / 0.229)
    assert out[0, 0, 0, 0] == pytest.approx(2.249, abs=1e-3)

    with pytest.raises(DimensionError):
        preprocess(np.zeros((200, 224, 3), np.uint8))


def test_zero_backbone_gives_zero_features():
    net = SmallConvNet.initialize(seed=0)
    for arr in net.tensors().values():
        arr[...] = 0.0
    handle = builtin_handle(net, "zeros")
    px = np.random.default_rng(0).integers(0, 256, (2, 224, 224, 3), dtype=np.uint8)
    feats = extract_features(handle, px)
    assert feats.shape == (2, 1568)
    assert not feats.any()


def test_extraction_is_deterministic_per_image():
    handle = builtin_handle(SmallConvNet.initialize(seed=1, widths=TINY), "tiny")
    px = np.random.default_rng(5).integers(0, 256, (224, 224, 3), dtype=np.uint8)
    specimen = SpecimenImage(px, "plate", (112.0, 112.0))
    feats = extract_features(handle, [specimen, specimen])
    assert feats.shape == (2, handle.feature_dim) == (2, 98)
    np.testing.assert_array_equal(feats[0], feats[1])
    np.testing.assert_array_equal(extract_features(handle, px, batch_size=1)[0], feats[0])


def test_pretrained_handle_cannot_train():
    with pytest.raises(ParameterError):
        BackboneHandle(PRETRAINED, object(), "d", frozenset({5}))
    with pytest.raises(ParameterError):
        BackboneHandle("vgg", object(), "d")


def test_builtin_checkpoint_round_trip(tmp_path):
    net = SmallConvNet.initialize(seed=2, widths=TINY)
    path = save_builtin(tmp_path / "backbone.npz", net, seed=2)
    handle = load_backbone(BackboneConfig(), path, trainable_blocks=(4, 5))
    assert handle.kind == BUILTIN
    assert handle.digest == f"builtin_small:{file_sha256(path)}"
    assert handle.trainable_blocks == frozenset({4, 5})
    for name, arr in net.tensors().items():
        np.testing.assert_array_equal(handle.model.tensors()[name], arr)


def test_builtin_checkpoint_errors(tmp_path):
    with pytest.raises(ArtifactMissingError):
        load_backbone(BackboneConfig(), tmp_path / "missing.npz")
    with pytest.raises(ModelLoadError):
        load_backbone(BackboneConfig(), None)
    other = save_arrays(tmp_path / "head.npz", {"x": np.zeros(1)}, {"kind": "classifier_head"})
    with pytest.raises(ModelLoadError):
        load_backbone(BackboneConfig(), other)
    broken = save_arrays(tmp_path / "broken.npz", {"block1.weights": np.zeros((3, 3, 3, 2))},
                         {"kind": "builtin_backbone", "widths": [2] * 5, "in_channels": 3})
    with pytest.raises(ModelLoadError):
        load_backbone(BackboneConfig(), broken)


# --- feature cache ------------------------------------------------------------

def test_split_features_are_cached(tmp_path):
    manifest, loader = tiny_dataset()
    handle = builtin_handle(SmallConvNet.initialize(seed=0, widths=TINY), "tiny-digest")
    first = split_features(handle, manifest, "val", tmp_path, loader=loader)
    calls = loader.calls
    again = split_features(handle, manifest, "val", tmp_path, loader=loader)
    assert loader.calls == calls
    assert first.dtype == np.float32 and first.shape == (4, 98)
    np.testing.assert_array_equal(first, again)
    assert len(list(tmp_path.glob("val-*.npz"))) == 1

    other = builtin_handle(handle.model, "other-digest")
    split_features(other, manifest, "val", tmp_path, loader=loader)
    assert loader.calls > calls


def test_augmented_train_views_are_deterministic():
    manifest, loader = tiny_dataset()
    handle = builtin_handle(SmallConvNet.initialize(seed=0, widths=TINY), "tiny")
    a = split_features(handle, manifest, "train", None, AugmentConfig(), views=2, seed=4, loader=loader)
    b = split_features(handle, manifest, "train", None, AugmentConfig(), views=2, seed=4, loader=loader)
    assert a.shape == (2, 8, 98)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a[0], a[1])


def test_build_feature_streams(tmp_path):
    manifest, loader = tiny_dataset()
    handle = builtin_handle(SmallConvNet.initialize(seed=0, widths=TINY), "tiny")
    streams = build_feature_streams(handle, manifest, AugmentConfig.identity(), tmp_path,
                                    batch_size=3, epoch_multiplicity=2, seed=1, loader=loader)
    assert streams.train_views.shape == (2, 8, 98)
    np.testing.assert_array_equal(streams.train_views[0], streams.train_views[1])
    np.testing.assert_array_equal(streams.val_labels, [0, 1, 2, 3])
    assert streams.test_features.shape == (4, 98)
    assert streams.steps() == 6


# --- joint training -----------------------------------------------------------

def _tiny_head(seed=0):
    return ClassifierParams.initialize(input_dim=98, hidden=(8, 6), dropout_rate=0.2, seed=seed)


def test_finetune_zero_epochs_changes_nothing():
    manifest, loader = tiny_dataset()
    handle = builtin_handle(SmallConvNet.initialize(seed=0, widths=TINY), "tiny")
    head = _tiny_head()
    result = finetune(handle, head, manifest, JointConfig(max_epochs=0), AugmentConfig.identity(), loader)
    assert result.report.stopped_epoch == 0
    assert result.report.best_val_accuracy == result.report.initial_val_accuracy
    assert result.report.test_accuracy is not None
    for name, arr in handle.model.tensors().items():
        np.testing.assert_array_equal(result.handle.model.tensors()[name], arr)
    for name, arr in head.tensors().items():
        np.testing.assert_array_equal(result.head.tensors()[name], arr)


def test_finetune_keeps_frozen_blocks_and_inputs():
    manifest, loader = tiny_dataset()
    net = SmallConvNet.initialize(seed=0, widths=TINY)
    handle = builtin_handle(net, "tiny")
    before = {k: v.copy() for k, v in net.tensors().items()}
    head = _tiny_head()
    head_before = {k: v.copy() for k, v in head.tensors().items()}

    cfg = JointConfig(backbone_lr=1e-2, head_lr=1e-2, max_epochs=2, patience=5, batch_size=3,
                      trainable_blocks=(5,), seed=1)
    result = finetune(handle, head, manifest, cfg, AugmentConfig(), loader)
    assert result.report.stopped_epoch == 2
    assert result.report.config["trainable_blocks"] == [5]
    assert result.handle.trainable_blocks == frozenset({5})
    assert result.handle.digest.startswith("builtin_small:")
    tuned = result.handle.model.tensors()
    for i in range(1, 5):
        for part in ("weights", "bias"):
            np.testing.assert_array_equal(tuned[f"block{i}.{part}"], before[f"block{i}.{part}"])
    for name, arr in net.tensors().items():
        np.testing.assert_array_equal(arr, before[name])
    for name, arr in head.tensors().items():
        np.testing.assert_array_equal(arr, head_before[name])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_finetune_never_loses_validation_accuracy(seed):
    manifest, loader = tiny_dataset(per_split=(3, 2, 1), seed=seed)
    handle = builtin_handle(SmallConvNet.initialize(seed=seed, widths=TINY), "tiny")
    head = _tiny_head(seed)
    images, labels = load_split_images(manifest, "val", loader)
    frozen = split_accuracy(handle.model, head, images, labels)

    cfg = JointConfig(backbone_lr=1e-3, head_lr=1e-3, max_epochs=3, patience=2, batch_size=4, seed=seed)
    result = finetune(handle, head, manifest, cfg, AugmentConfig(), loader)
    tuned = split_accuracy(result.handle.model, result.head, images, labels)
    assert result.report.initial_val_accuracy == pytest.approx(frozen)
    assert tuned == pytest.approx(result.report.best_val_accuracy)
    assert tuned >= frozen - 0.005


def test_finetune_rejects_pretrained_kind_and_bad_blocks():
    manifest, loader = tiny_dataset()
    with pytest.raises(UnsupportedOperationError):
        finetune(BackboneHandle(PRETRAINED, object(), "p"), _tiny_head(), manifest, loader=loader)
    handle = builtin_handle(SmallConvNet.initialize(seed=0, widths=TINY), "tiny")
    with pytest.raises(ParameterError):
        finetune(handle, _tiny_head(), manifest, JointConfig(trainable_blocks=(6,)), loader=loader)


def test_joint_config_scales_backbone_rate():
    from app.core.config import FinetuneConfig

    cfg = JointConfig.for_finetune(FinetuneConfig(backbone_lr=1e-7, lr_scale=10.0), batch_size=16, seed=3)
    assert cfg.backbone_lr == pytest.approx(1e-6)
    assert cfg.trainable_blocks == (4, 5)
    assert cfg.batch_size == 16 and cfg.seed == 3


def test_pretrain_builtin_runs_one_epoch():
    manifest, loader = tiny_dataset(per_split=(1, 1, 1))
    cfg = JointConfig(backbone_lr=1e-3, head_lr=1e-3, max_epochs=1, patience=1, batch_size=4, seed=2)
    net, head, report = pretrain_builtin(manifest, cfg, hidden=(8, 6), augment_cfg=AugmentConfig.identity(),
                                         loader=loader)
    assert net.feature_dim() == head.input_dim == 1568
    assert report.stopped_epoch == 1
    assert report.config["trainable_blocks"] == [1, 2, 3, 4, 5]
    assert len(report.train_loss) == 1 and np.isfinite(report.train_loss[0])
