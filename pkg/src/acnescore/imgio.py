"""Image file and byte-stream IO.

OpenCV stores channels as BGR; everything inside this package is RGB, so
the swap happens here and nowhere else.
"""

from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

from .core import ImageBuffer
from .errors import ImageDecodeError


def decode_image_bytes(data: bytes) -> ImageBuffer:
    """Decode JPEG/PNG bytes into an RGB ImageBuffer."""
    if not data:
        raise ImageDecodeError("empty image payload")
    buf = np.frombuffer(data, dtype=np.uint8)
    bgr = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    if bgr is None:
        raise ImageDecodeError("payload is not a decodable JPEG or PNG image")
    return ImageBuffer(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))


def encode_png(img: ImageBuffer) -> bytes:
    ok, buf = cv2.imencode(".png", cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR))
    if not ok:
        raise ImageDecodeError("PNG encoding failed")
    return bytes(buf.tobytes())


def read_image(path: str | os.PathLike) -> ImageBuffer:
    path = Path(path)
    data = path.read_bytes()
    try:
        return decode_image_bytes(data)
    except ImageDecodeError as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc


def write_png(path: str | os.PathLike, img: ImageBuffer) -> None:
    """Write a PNG atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_png(img))
    os.replace(tmp, path)
