"""Embedding backends, the regression head, training, and image scoring.

The backbone is consumed as a pretrained artifact behind
:class:`EmbeddingBackend`; severity-specific learning happens in a small
fully-connected head (hidden widths 1024/512/256, rectifier activations,
scalar output) trained with plain minibatch gradient descent on mean
squared error against the numeric labels. Plain GD plus seeded init and
seeded shuffling keeps training bitwise reproducible.

A whole image is scored by extracting its patches (never augmented),
embedding and scoring each, averaging the raw patch scores, clamping to
[1, 5], and discretizing with the [1.5, 2.5, 3.5, 4.5] boundaries.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import cv2
import numpy as np

from .core import ImageBuffer, PatchKind, Rect, SeverityLabel, clamp_score, luma
from .errors import (
    BackendError,
    DivergenceError,
    EmptyDataset,
    InputShapeError,
    ModelFormatError,
)
from .face_patches import EyeBackend, LandmarkBackend, extract_patches, resize_patch

DEFAULT_HIDDEN = (1024, 512, 256)
DISCRETIZE_BOUNDARIES = (1.5, 2.5, 3.5, 4.5)

HEAD_MAGIC = b"ACNEHEAD"
HEAD_VERSION = 1
_ACTIVATION_TAGS = {"relu": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_TAGS.items()}


@runtime_checkable
class EmbeddingBackend(Protocol):
    """Contract: a resized patch in, a fixed-dimension feature vector out.

    Same patch bytes must produce the identical vector; ``dim`` and
    ``input_side`` are constant per instance.
    """

    dim: int
    input_side: int
    concurrent_safe: bool

    def embed(self, patch: ImageBuffer) -> np.ndarray: ...


class ProjectionEmbeddingBackend:
    """Deterministic stand-in backbone for tests and synthetic experiments.

    Downsamples the patch to a grayscale grid by block averaging, then
    applies a fixed-seed dense random projection. Linear and bias-free,
    so the zero image maps to the zero vector.
    """

    concurrent_safe = True

    def __init__(self, dim: int = 256, input_side: int = 224, grid: int = 16, seed: int = 7):
        if input_side % grid != 0:
            raise ValueError(f"input_side {input_side} must be a multiple of grid {grid}")
        self.dim = dim
        self.input_side = input_side
        self.grid = grid
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((grid * grid, dim)).astype(np.float32) / np.sqrt(
            grid * grid
        )

    def embed(self, patch: ImageBuffer) -> np.ndarray:
        block = self.input_side // self.grid
        gray = luma(patch).astype(np.float32) / 255.0
        cells = gray.reshape(self.grid, block, self.grid, block).mean(axis=(1, 3))
        return cells.reshape(-1) @ self._projection


class OnnxEmbeddingBackend:
    """Pretrained backbone in ONNX interchange format, run through cv2.dnn.

    The artifact must map a (1, 3, side, side) float blob to a single
    (1, d) feature tensor (penultimate pooled features of the network).
    ``d`` is discovered with a probe forward at construction time.
    """

    concurrent_safe = False

    def __init__(
        self,
        model_path: str | os.PathLike,
        input_side: int = 224,
        scale: float = 1.0 / 255.0,
        mean: tuple[float, float, float] = (0.0, 0.0, 0.0),
    ):
        path = Path(model_path)
        if not path.exists():
            raise BackendError(f"backbone artifact not found: {path}")
        try:
            self._net = cv2.dnn.readNetFromONNX(str(path))
        except cv2.error as exc:
            raise BackendError(f"could not load backbone {path}: {exc}") from exc
        self.input_side = input_side
        self.scale = scale
        self.mean = mean
        probe = np.zeros((1, 3, input_side, input_side), dtype=np.float32)
        try:
            self._net.setInput(probe)
            out = np.asarray(self._net.forward())
        except cv2.error as exc:
            raise BackendError(f"backbone probe forward failed: {exc}") from exc
        if out.ndim != 2 or out.shape[0] != 1:
            raise BackendError(f"backbone must emit a (1, d) feature tensor, got {out.shape}")
        self.dim = int(out.shape[1])

    def embed(self, patch: ImageBuffer) -> np.ndarray:
        blob = patch.pixels.astype(np.float32).transpose(2, 0, 1)[np.newaxis]
        blob = (blob - np.asarray(self.mean, dtype=np.float32).reshape(1, 3, 1, 1)) * self.scale
        try:
            self._net.setInput(blob)
            out = np.asarray(self._net.forward())
        except cv2.error as exc:
            raise BackendError(f"backbone forward failed: {exc}") from exc
        return out.reshape(-1).astype(np.float32)


def embed(backend: EmbeddingBackend, patch: ImageBuffer) -> np.ndarray:
    """Embed one resized patch, enforcing the backend contract."""
    if patch.width != backend.input_side or patch.height != backend.input_side:
        raise InputShapeError(
            f"patch is {patch.width}x{patch.height}, backend expects "
            f"{backend.input_side}x{backend.input_side}"
        )
    vec = np.asarray(backend.embed(patch))
    if vec.shape != (backend.dim,):
        raise BackendError(f"backend produced shape {vec.shape}, declared dim {backend.dim}")
    if not np.all(np.isfinite(vec)):
        raise BackendError("backend produced non-finite embedding values")
    return vec


@dataclass(eq=False)
class RegressionHead:
    """Fully-connected scalar-output network over backbone embeddings.

    ``weights[i]`` has shape (widths[i+1], widths[i]); hidden layers use
    the rectifier, the output layer is affine. float32 parameters match
    the artifact format; float64 heads are supported for numerical tests.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    seed: int | None = None

    def __post_init__(self):
        if self.activation not in _ACTIVATION_TAGS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be parallel, nonempty lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input width {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}"
                )
        if self.weights[-1].shape[0] != 1:
            raise ValueError(f"output layer must have width 1, got {self.weights[-1].shape[0]}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @classmethod
    def initialize(
        cls,
        dim: int,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        seed: int = 0,
        dtype=np.float32,
    ) -> "RegressionHead":
        """Fan-in-scaled uniform init (rectifier bound), reproducible from the seed."""
        rng = np.random.default_rng(seed)
        widths = [dim, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
            biases.append(rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype))
        return cls(weights=weights, biases=biases, seed=seed)

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Raw scores for an (n, d) batch; no clamping."""
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != self.dim:
            raise InputShapeError(f"expected (n, {self.dim}) input, got {h.shape}")
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w.T + b, 0.0)
        return (h @ self.weights[-1].T + self.biases[-1]).reshape(-1)

    def loss_and_grads(
        self, x: np.ndarray, y: np.ndarray
    ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean squared error over the batch and its parameter gradients."""
        x = np.asarray(x, dtype=self.dtype)
        y = np.asarray(y, dtype=self.dtype)
        n = x.shape[0]
        pre: list[np.ndarray] = []
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        pred = (h @ self.weights[-1].T + self.biases[-1]).reshape(-1)
        residual = pred - y
        loss = float(np.mean(residual**2))
        delta = (2.0 / n) * residual.reshape(-1, 1).astype(self.dtype)
        grads_w: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        grads_b: list[np.ndarray] = [None] * len(self.biases)  # type: ignore[list-item]
        grads_w[-1] = delta.T @ acts[-1]
        grads_b[-1] = delta.sum(axis=0)
        upstream = delta @ self.weights[-1]
        for i in range(len(self.weights) - 2, -1, -1):
            upstream = upstream * (pre[i] > 0)
            grads_w[i] = upstream.T @ acts[i]
            grads_b[i] = upstream.sum(axis=0)
            if i:
                upstream = upstream @ self.weights[i]
        return loss, grads_w, grads_b


def head_forward(head: RegressionHead, e: np.ndarray) -> float:
    """Raw (unclamped) severity score for a single embedding."""
    e = np.asarray(e)
    if e.shape != (head.dim,):
        raise InputShapeError(f"embedding shape {e.shape} does not match head dim {head.dim}")
    return float(head.forward_batch(e.reshape(1, -1))[0])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError(f"learning_rate, batch_size, epochs must be positive: {self}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TrainResult:
    head: RegressionHead
    train_loss: float
    val_loss: float | None
    epoch_losses: list[float] = field(default_factory=list)


def _mse(head: RegressionHead, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((head.forward_batch(x) - y.astype(head.dtype)) ** 2))


def train_head(
    samples: Sequence[tuple[np.ndarray, SeverityLabel]],
    cfg: TrainConfig = TrainConfig(),
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    dtype=np.float32,
) -> TrainResult:
    """Fit the head to (embedding, label) pairs with seeded minibatch GD.

    Features are standardized (per-dimension, statistics from the train
    split) before optimization, and the affine standardization is folded
    into the first layer afterwards, so the returned head consumes raw
    embeddings. Shuffling, batching, and init all derive from
    ``cfg.seed``, so two runs with the same inputs produce
    bitwise-identical heads. A non-finite loss aborts with the offending
    step index.
    """
    if len(samples) == 0:
        raise EmptyDataset("training requires at least one sample")
    x = np.stack([np.asarray(e, dtype=dtype) for e, _ in samples])
    y = np.asarray([float(label) for _, label in samples], dtype=dtype)

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(samples))
    n_val = int(len(samples) * cfg.val_fraction)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise EmptyDataset("validation split left no training samples")

    mu = x[train_idx].mean(axis=0)
    sigma = x[train_idx].std(axis=0)
    sigma = np.where(sigma > 0, sigma, np.asarray(1.0, dtype=dtype)).astype(dtype)
    x_std = (x - mu) / sigma
    x_train, y_train = x_std[train_idx], y[train_idx]
    x_val, y_val = x_std[val_idx], y[val_idx]

    head = RegressionHead.initialize(x.shape[1], hidden=hidden, seed=cfg.seed, dtype=dtype)
    lr = cfg.learning_rate
    step = 0
    epoch_losses: list[float] = []
    n = len(train_idx)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            loss, grads_w, grads_b = head.loss_and_grads(x_train[batch], y_train[batch])
            if not math.isfinite(loss):
                raise DivergenceError(step)
            for w, b, gw, gb in zip(head.weights, head.biases, grads_w, grads_b):
                w -= lr * gw
                b -= lr * gb
            step += 1
        epoch_losses.append(_mse(head, x_train, y_train))
    if not math.isfinite(epoch_losses[-1]):
        raise DivergenceError(step)
    val_loss = _mse(head, x_val, y_val) if len(val_idx) else None

    # Fold (x - mu) / sigma into the first layer: the head then scores raw
    # embeddings, keeping the artifact format and the scoring path unchanged.
    w0 = head.weights[0] / sigma
    head.biases[0] = (head.biases[0] - w0 @ mu).astype(dtype)
    head.weights[0] = w0.astype(dtype)
    return TrainResult(head, epoch_losses[-1], val_loss, epoch_losses)


def discretize(s: float) -> SeverityLabel:
    """Map a clamped score to its class using the fixed category boundaries.

    Cells are half-open upward: [1,1.5) -> 1, [1.5,2.5) -> 2, [2.5,3.5) -> 3,
    [3.5,4.5) -> 4, [4.5,5] -> 5. Total and monotone on finite input.
    """
    for value, bound in enumerate(DISCRETIZE_BOUNDARIES, start=1):
        if s < bound:
            return SeverityLabel(value)
    return SeverityLabel.SEVERE


@dataclass(frozen=True)
class PatchScore:
    kind: PatchKind
    rect: Rect
    raw: float
    score: float  # clamped to [1, 5]


@dataclass(frozen=True)
class ImageScore:
    """Whole-image result: patch detail plus the averaged final score."""

    image_id: str | None
    patch_scores: list[PatchScore]
    final: float
    label: SeverityLabel


def score_image(
    img: ImageBuffer,
    landmark_backend: LandmarkBackend,
    eye_backend: EyeBackend,
    embedding_backend: EmbeddingBackend,
    head: RegressionHead,
    image_id: str | None = None,
) -> ImageScore:
    """Extract, embed, and score every patch; average raw scores, clamp,
    discretize. Extraction failures (NoFaceFound, GeometryError) propagate."""
    if head.dim != embedding_backend.dim:
        raise InputShapeError(
            f"head expects d={head.dim} but embedding backend provides d={embedding_backend.dim}"
        )
    patches = extract_patches(landmark_backend, eye_backend, img)
    scored: list[PatchScore] = []
    for patch in patches:
        vec = embed(embedding_backend, resize_patch(patch.pixels, embedding_backend.input_side))
        raw = head_forward(head, vec)
        scored.append(PatchScore(patch.kind, patch.source_rect, raw, clamp_score(raw)))
    final = clamp_score(math.fsum(p.raw for p in scored) / len(scored))
    return ImageScore(image_id, scored, final, discretize(final))


# ---------------------------------------------------------------------------
# Head artifact IO
#
# Layout (little-endian): magic "ACNEHEAD" (8s), version u32, activation
# tag u32, layer count u32, then (layer count + 1) u32 widths, then per
# layer the row-major float32 weight matrix followed by its bias vector.
# ---------------------------------------------------------------------------


def save_head(head: RegressionHead, path: str | os.PathLike) -> None:
    """Write the versioned binary artifact; float32, bitwise round-trippable."""
    path = Path(path)
    widths = head.widths
    parts = [
        HEAD_MAGIC,
        struct.pack("<III", HEAD_VERSION, _ACTIVATION_TAGS[head.activation], len(head.weights)),
        struct.pack(f"<{len(widths)}I", *widths),
    ]
    for w, b in zip(head.weights, head.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_head(path: str | os.PathLike) -> RegressionHead:
    data = Path(path).read_bytes()
    view = memoryview(data)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(data):
            raise ModelFormatError(f"truncated head artifact {path}: needed {offset + n} bytes, have {len(data)}")
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    if bytes(take(8)) != HEAD_MAGIC:
        raise ModelFormatError(f"{path} is not a head artifact (bad magic)")
    version, act_tag, n_layers = struct.unpack("<III", take(12))
    if version != HEAD_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, expected {HEAD_VERSION}")
    if act_tag not in _ACTIVATION_NAMES:
        raise ModelFormatError(f"{path}: unknown activation tag {act_tag}")
    if not 1 <= n_layers <= 64:
        raise ModelFormatError(f"{path}: implausible layer count {n_layers}")
    widths = struct.unpack(f"<{n_layers + 1}I", take(4 * (n_layers + 1)))
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(take(4 * fan_in * fan_out), dtype="<f4").reshape(fan_out, fan_in)
        b = np.frombuffer(take(4 * fan_out), dtype="<f4")
        weights.append(w.copy())
        biases.append(b.copy())
    if offset != len(data):
        raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return RegressionHead(weights=weights, biases=biases, activation=_ACTIVATION_NAMES[act_tag])
