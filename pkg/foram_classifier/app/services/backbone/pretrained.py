"""Inference-only backbone loaded from an ONNX interchange file.

The graph is cut after its last MaxPool node, so a full VGG16 export
(convolutions, pooling, then the dense classifier) yields the 7x7x512 map
of the last convolutional block. Only Conv, Relu and MaxPool may remain
after the cut.

Expected graph: one float32 input of shape (batch, 3, 224, 224) for the
``nchw`` layout or (batch, 224, 224, 3) for ``nhwc``; the truncated output
is (batch, 512, 7, 7) or (batch, 7, 7, 512) respectively.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import onnx
import onnxruntime as ort
from onnx.utils import Extractor

from ...core.errors import ModelLoadError, ShapeError

logger = logging.getLogger(__name__)

ALLOWED_OPS = frozenset({"Conv", "Relu", "MaxPool"})
FEATURE_SHAPE = (7, 7, 512)


def _graph_input(model: onnx.ModelProto) -> str:
    initializers = {init.name for init in model.graph.initializer}
    inputs = [i.name for i in model.graph.input if i.name not in initializers]
    if len(inputs) != 1:
        raise ModelLoadError(f"expected exactly one graph input, found {inputs}")
    return inputs[0]


def truncate_after_last_pool(model: onnx.ModelProto) -> onnx.ModelProto:
    """Return the sub-graph from the input to the output of the last MaxPool."""
    pools = [node for node in model.graph.node if node.op_type == "MaxPool"]
    if not pools:
        raise ModelLoadError("model has no MaxPool node to truncate after")
    input_name = _graph_input(model)
    try:
        sub = Extractor(model).extract_model([input_name], [pools[-1].output[0]])
    except Exception as exc:  # onnx raises plain exceptions for broken graphs
        raise ModelLoadError(f"cannot extract the convolutional part: {exc}") from exc
    unsupported = sorted({n.op_type for n in sub.graph.node} - ALLOWED_OPS)
    if unsupported:
        raise ModelLoadError(f"operators outside {sorted(ALLOWED_OPS)} before the last pool: {unsupported}")
    return sub


class InterchangeBackbone:
    """ONNX Runtime session over the truncated graph, CPU only."""

    def __init__(self, path: Path, layout: str = "nchw", threads: int = 1):
        path = Path(path)
        if not path.is_file():
            raise ModelLoadError(f"pretrained model file not found: {path}")
        if layout not in ("nchw", "nhwc"):
            raise ModelLoadError(f"unknown layout {layout!r}")
        try:
            model = onnx.load(str(path))
            onnx.checker.check_model(model)
        except Exception as exc:
            raise ModelLoadError(f"cannot read ONNX model {path}: {exc}") from exc
        truncated = truncate_after_last_pool(model)

        options = ort.SessionOptions()
        options.intra_op_num_threads = threads
        options.inter_op_num_threads = 1
        options.execution_mode = ort.ExecutionMode.ORT_SEQUENTIAL
        try:
            self.session = ort.InferenceSession(
                truncated.SerializeToString(), options, providers=["CPUExecutionProvider"]
            )
        except Exception as exc:
            raise ModelLoadError(f"onnxruntime rejected {path}: {exc}") from exc
        self.layout = layout
        self.input_name = self.session.get_inputs()[0].name
        self.output_name = self.session.get_outputs()[0].name
        self.path = path
        logger.info("Loaded pretrained backbone %s (layout %s, %d thread(s))", path, layout, threads)

    def run(self, batch: np.ndarray) -> np.ndarray:
        """Feature maps in (batch, 7, 7, 512) order for a preprocessed NHWC batch."""
        x = np.ascontiguousarray(batch, dtype=np.float32)
        if self.layout == "nchw":
            x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        out = self.session.run([self.output_name], {self.input_name: x})[0]
        if self.layout == "nchw":
            if out.ndim != 4 or out.shape[1:] != (FEATURE_SHAPE[2], *FEATURE_SHAPE[:2]):
                raise ShapeError(f"graph output {out.shape} is not (batch, 512, 7, 7)")
            out = out.transpose(0, 2, 3, 1)
        elif out.ndim != 4 or out.shape[1:] != FEATURE_SHAPE:
            raise ShapeError(f"graph output {out.shape} is not (batch, 7, 7, 512)")
        return out
