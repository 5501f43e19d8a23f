from pathlib import Path as _P
import os
import sys

import numpy as np
import pytest

ROOT = _P(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

onnx = pytest.importorskip("onnx")
pytest.importorskip("onnxruntime")
from onnx import TensorProto, helper, numpy_helper

from app.core.config import BackboneConfig
from app.core.errors import ModelLoadError, ShapeError
from app.services.backbone.handle import PRETRAINED, extract_features, load_backbone, preprocess
from app.services.backbone.pretrained import InterchangeBackbone


def _write_model(path, pool_kernel=32, tail=True, extra_op=None, seed=0):
    """Conv 1x1 (3 -> 512), Relu, MaxPool and optionally a dense tail."""
    rng = np.random.default_rng(seed)
    weights = rng.normal(0, 0.5, (512, 3, 1, 1)).astype(np.float32)
    bias = rng.normal(0, 0.1, 512).astype(np.float32)
    inits = [numpy_helper.from_array(weights, "w"), numpy_helper.from_array(bias, "b")]
    nodes = [helper.make_node("Conv", ["input", "w", "b"], ["conv"])]
    act_in = "conv"
    if extra_op:
        nodes.append(helper.make_node(extra_op, ["conv"], ["odd"]))
        act_in = "odd"
    nodes += [
        helper.make_node("Relu", [act_in], ["relu"]),
        helper.make_node("MaxPool", ["relu"], ["pool"], kernel_shape=[pool_kernel] * 2, strides=[pool_kernel] * 2),
    ]
    side = 224 // pool_kernel
    output = "pool"
    out_shape = ["N", 512, side, side]
    if tail:
        dense = rng.normal(0, 0.01, (512 * side * side, 10)).astype(np.float32)
        inits.append(numpy_helper.from_array(dense, "fc"))
        nodes += [
            helper.make_node("Flatten", ["pool"], ["flat"]),
            helper.make_node("MatMul", ["flat", "fc"], ["logits"]),
        ]
        output, out_shape = "logits", ["N", 10]
    graph = helper.make_graph(
        nodes,
        "toy",
        [helper.make_tensor_value_info("input", TensorProto.FLOAT, ["N", 3, 224, 224])],
        [helper.make_tensor_value_info(output, TensorProto.FLOAT, out_shape)],
        initializer=inits,
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.save(model, str(path))
    return weights, bias


def _oracle(x_nhwc, weights, bias, k=32):
    z = np.einsum("bhwc,oc->bhwo", x_nhwc, weights[:, :, 0, 0]) + bias
    z = np.maximum(z, 0.0)
    b, h, w, c = z.shape
    return z.reshape(b, h // k, k, w // k, k, c).max(axis=(2, 4))


def test_toy_graph_is_truncated_and_transposed(tmp_path):
    path = tmp_path / "toy.onnx"
    weights, bias = _write_model(path)
    backbone = InterchangeBackbone(path, layout="nchw")
    px = np.random.default_rng(1).integers(0, 256, (2, 224, 224, 3), dtype=np.uint8)
    x = preprocess(px, PRETRAINED)
    out = backbone.run(x)
    assert out.shape == (2, 7, 7, 512)
    np.testing.assert_allclose(out, _oracle(x, weights, bias), rtol=1e-4, atol=1e-4)


def test_handle_extracts_flattened_hwc_features(tmp_path):
    path = tmp_path / "toy.onnx"
    weights, bias = _write_model(path, seed=3)
    handle = load_backbone(BackboneConfig(kind=PRETRAINED, model_path=path))
    assert handle.kind == PRETRAINED
    assert handle.digest.startswith("pretrained_interchange:nchw:")
    assert handle.feature_dim == 25088

    px = np.random.default_rng(2).integers(0, 256, (3, 224, 224, 3), dtype=np.uint8)
    feats = extract_features(handle, px, batch_size=2)
    assert feats.shape == (3, 25088)
    expected = _oracle(preprocess(px, PRETRAINED), weights, bias).reshape(3, -1)
    np.testing.assert_allclose(feats, expected, rtol=1e-4, atol=1e-4)
    np.testing.assert_array_equal(extract_features(handle, px[:1])[0], feats[0])


def test_graph_without_pool_or_with_foreign_ops_is_rejected(tmp_path):
    path = tmp_path / "sigmoid.onnx"
    _write_model(path, extra_op="Sigmoid")
    with pytest.raises(ModelLoadError, match="Sigmoid"):
        InterchangeBackbone(path)

    nopool = tmp_path / "nopool.onnx"
    graph = helper.make_graph(
        [helper.make_node("Relu", ["input"], ["out"])],
        "nopool",
        [helper.make_tensor_value_info("input", TensorProto.FLOAT, ["N", 3, 224, 224])],
        [helper.make_tensor_value_info("out", TensorProto.FLOAT, ["N", 3, 224, 224])],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.save(model, str(nopool))
    with pytest.raises(ModelLoadError, match="MaxPool"):
        InterchangeBackbone(nopool)


def test_missing_or_corrupt_model_is_a_load_error(tmp_path):
    with pytest.raises(ModelLoadError):
        InterchangeBackbone(tmp_path / "absent.onnx")
    corrupt = tmp_path / "corrupt.onnx"
    corrupt.write_bytes(b"not a protobuf at all")
    with pytest.raises(ModelLoadError):
        InterchangeBackbone(corrupt)


def test_wrong_output_shape_is_a_shape_error(tmp_path):
    path = tmp_path / "wide.onnx"
    _write_model(path, pool_kernel=16, tail=False)
    backbone = InterchangeBackbone(path)
    with pytest.raises(ShapeError):
        backbone.run(np.zeros((1, 224, 224, 3)))


@pytest.mark.skipif(not os.environ.get("FORAM_PRETRAINED_MODEL"), reason="set FORAM_PRETRAINED_MODEL to a VGG16 export")
def test_real_pretrained_export():
    handle = load_backbone(BackboneConfig(kind=PRETRAINED, model_path=os.environ["FORAM_PRETRAINED_MODEL"]))
    px = np.random.default_rng(0).integers(0, 256, (1, 224, 224, 3), dtype=np.uint8)
    feats = extract_features(handle, px)
    assert feats.shape == (1, 25088)
    assert np.isfinite(feats).all() and (feats >= 0).all()
