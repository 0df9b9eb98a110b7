"""Shared fixtures: synthetic faces, sidecar directories, tiny ONNX artifacts."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from acnescore.core import ImageBuffer
from acnescore.face_patches import (
    SidecarEyeBackend,
    SidecarLandmarkBackend,
    image_digest,
)
from acnescore.imgio import encode_png
from acnescore.synthetic import landmark_sidecar_text, make_frontal_face


def solid_image(width: int, height: int, rgb=(128, 128, 128)) -> ImageBuffer:
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:, :] = rgb
    return ImageBuffer(px)


@pytest.fixture(scope="session")
def frontal_face():
    return make_frontal_face()


@pytest.fixture()
def face_sidecars(tmp_path, frontal_face):
    """Per-image sidecar backends bound to the frontal fixture's landmarks."""
    img, lm = frontal_face
    lm_path = tmp_path / "face.landmarks"
    lm_path.write_text(landmark_sidecar_text(lm), encoding="utf-8")
    return SidecarLandmarkBackend(lm_path), SidecarEyeBackend(tmp_path / "face.eye")


@pytest.fixture()
def digest_sidecar_dir(tmp_path, frontal_face):
    """Directory with a digest-keyed landmark sidecar for the frontal fixture."""
    img, lm = frontal_face
    d = tmp_path / "annotations"
    d.mkdir()
    (d / f"{image_digest(img)}.landmarks").write_text(landmark_sidecar_text(lm), encoding="utf-8")
    return d


@pytest.fixture(scope="session")
def frontal_face_png(frontal_face) -> bytes:
    img, _ = frontal_face
    return encode_png(img)


# ---------------------------------------------------------------------------
# Minimal ONNX authoring (raw protobuf wire format) for backend tests.
# ---------------------------------------------------------------------------


def _varint(n: int) -> bytes:
    out = b""
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out += bytes([b | 0x80])
        else:
            return out + bytes([b])


def _tag(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _len_delim(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _varint_field(field: int, value: int) -> bytes:
    return _tag(field, 0) + _varint(value)


def _string(field: int, s: str) -> bytes:
    return _len_delim(field, s.encode("utf-8"))


def _value_info(name: str, dims: list[int]) -> bytes:
    shape = b"".join(_len_delim(1, _varint_field(1, d)) for d in dims)
    tensor_type = _varint_field(1, 1) + _len_delim(2, shape)  # elem_type FLOAT
    return _string(1, name) + _len_delim(2, _len_delim(1, tensor_type))


def _attr_int(name: str, value: int) -> bytes:
    return _string(1, name) + _varint_field(3, value) + _varint_field(20, 2)  # INT


def _node(op_type: str, inputs: list[str], outputs: list[str], attrs: list[bytes] = ()) -> bytes:
    out = b"".join(_string(1, i) for i in inputs)
    out += b"".join(_string(2, o) for o in outputs)
    out += _string(4, op_type)
    out += b"".join(_len_delim(5, a) for a in attrs)
    return out


def _tensor_f32(name: str, dims: list[int], values: np.ndarray) -> bytes:
    out = b"".join(_varint_field(1, d) for d in dims)
    out += _varint_field(2, 1)  # FLOAT
    out += _string(8, name)
    out += _len_delim(9, np.asarray(values, dtype="<f4").tobytes())
    return out


def _model(graph: bytes) -> bytes:
    opset = _string(1, "") + _varint_field(2, 13)
    return _varint_field(1, 8) + _len_delim(7, graph) + _len_delim(8, opset)


def tiny_pool_backbone(side: int) -> bytes:
    """ONNX model: (1,3,side,side) -> GlobalAveragePool -> Flatten -> (1,3)."""
    graph = (
        _len_delim(1, _node("GlobalAveragePool", ["input"], ["pooled"]))
        + _len_delim(1, _node("Flatten", ["pooled"], ["feat"], [_attr_int("axis", 1)]))
        + _string(2, "tiny_pool_backbone")
        + _len_delim(11, _value_info("input", [1, 3, side, side]))
        + _len_delim(12, _value_info("feat", [1, 3]))
    )
    return _model(graph)


def constant_eye_net(side: int, box: tuple[float, float, float, float], conf: float) -> bytes:
    """ONNX model emitting one constant eye detection row regardless of input.

    Pool -> Flatten -> MatMul(zeros) -> Add(box+conf) keeps the graph
    connected to the input while the output stays constant.
    """
    weights = np.zeros((3, 5), dtype=np.float32)
    bias = np.asarray([*box, conf], dtype=np.float32).reshape(1, 5)
    graph = (
        _len_delim(1, _node("GlobalAveragePool", ["input"], ["pooled"]))
        + _len_delim(1, _node("Flatten", ["pooled"], ["flat"], [_attr_int("axis", 1)]))
        + _len_delim(1, _node("MatMul", ["flat", "w"], ["proj"]))
        + _len_delim(1, _node("Add", ["proj", "b"], ["det"]))
        + _string(2, "constant_eye_net")
        + _len_delim(5, _tensor_f32("w", [3, 5], weights))
        + _len_delim(5, _tensor_f32("b", [1, 5], bias))
        + _len_delim(11, _value_info("input", [1, 3, side, side]))
        + _len_delim(12, _value_info("det", [1, 5]))
    )
    return _model(graph)
