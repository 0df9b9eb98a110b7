"""Synthetic experiments probing the rolling-augmentation claim.

The spatial-generalization run recreates the failure mode that motivates
rolling: lesions in the training patches are confined to the left half,
test lesions appear anywhere, and the embeddings are position-sensitive.
Training once on the raw patches and once on their rolled expansion, with
everything else held fixed, isolates the augmentation's effect on test
RMSE.

The baseline-dominance run is the sanity check that the trained head on
unbiased data comfortably beats the constant global-mean predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .augmentation import augment_patch_set, balance_plan
from .core import clamp_score
from .dataset import class_distribution
from .evaluation import baseline_rmse, rmse_vs_consensus
from .face_patches import SkinPatch
from .model import ProjectionEmbeddingBackend, TrainConfig, train_head
from .synthetic import make_lesion_dataset


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int = 300
    n_test: int = 150
    patch_size: int = 64
    embed_dim: int = 256
    embed_grid: int = 16
    embed_seed: int = 7
    hidden: tuple[int, ...] = (128, 64, 32)
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            learning_rate=3e-3, batch_size=32, epochs=40, seed=0, val_fraction=0.0
        )
    )
    n_mild: int = 2
    n_max: int = 10


@dataclass(frozen=True)
class SpatialRunResult:
    seed: int
    rmse_with_rolling: float
    rmse_without_rolling: float

    @property
    def improvement(self) -> float:
        return self.rmse_without_rolling - self.rmse_with_rolling


def _embed_patches(
    patches: Sequence[SkinPatch], backend: ProjectionEmbeddingBackend
) -> list[tuple[np.ndarray, object]]:
    return [(backend.embed(p.pixels), p.label) for p in patches]


def _test_rmse(head, backend, patches: Sequence[SkinPatch]) -> float:
    preds = [
        clamp_score(float(head.forward_batch(backend.embed(p.pixels).reshape(1, -1))[0]))
        for p in patches
    ]
    return rmse_vs_consensus(preds, [float(p.label) for p in patches])


def run_spatial_generalization(seed: int, cfg: ExperimentConfig = ExperimentConfig()) -> SpatialRunResult:
    """Train with and without rolling on left-biased patches; report both RMSEs."""
    rng = np.random.default_rng(seed)
    train_patches = make_lesion_dataset(cfg.n_train, rng, size=cfg.patch_size, x_limit=0.5)
    test_patches = make_lesion_dataset(cfg.n_test, rng, size=cfg.patch_size, x_limit=1.0)
    backend = ProjectionEmbeddingBackend(
        dim=cfg.embed_dim, input_side=cfg.patch_size, grid=cfg.embed_grid, seed=cfg.embed_seed
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size,
        epochs=cfg.train.epochs,
        seed=seed,
        val_fraction=cfg.train.val_fraction,
    )

    plain = train_head(_embed_patches(train_patches, backend), train_cfg, hidden=cfg.hidden)

    plan = balance_plan(
        class_distribution([p.label for p in train_patches]), n_mild=cfg.n_mild, n_max=cfg.n_max
    )
    rolled = augment_patch_set(train_patches, plan)
    augmented = train_head(_embed_patches(rolled, backend), train_cfg, hidden=cfg.hidden)

    return SpatialRunResult(
        seed=seed,
        rmse_with_rolling=_test_rmse(augmented.head, backend, test_patches),
        rmse_without_rolling=_test_rmse(plain.head, backend, test_patches),
    )


def run_spatial_suite(
    seeds: Sequence[int] = (0, 1, 2, 3, 4), cfg: ExperimentConfig = ExperimentConfig()
) -> list[SpatialRunResult]:
    return [run_spatial_generalization(seed, cfg) for seed in seeds]


@dataclass(frozen=True)
class BaselineRunResult:
    model_rmse: float
    baseline_rmse: float


def run_baseline_dominance(
    seed: int = 0,
    n_train: int = 500,
    n_test: int = 100,
    cfg: ExperimentConfig = ExperimentConfig(),
) -> BaselineRunResult:
    """Unbiased lesion patches: trained head vs the global-mean baseline."""
    rng = np.random.default_rng(seed)
    train_patches = make_lesion_dataset(n_train, rng, size=cfg.patch_size, x_limit=1.0)
    test_patches = make_lesion_dataset(n_test, rng, size=cfg.patch_size, x_limit=1.0)
    backend = ProjectionEmbeddingBackend(
        dim=cfg.embed_dim, input_side=cfg.patch_size, grid=cfg.embed_grid, seed=cfg.embed_seed
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size,
        epochs=cfg.train.epochs,
        seed=seed,
        val_fraction=cfg.train.val_fraction,
    )
    result = train_head(_embed_patches(train_patches, backend), train_cfg, hidden=cfg.hidden)
    truth = [float(p.label) for p in test_patches]
    return BaselineRunResult(
        model_rmse=_test_rmse(result.head, backend, test_patches),
        baseline_rmse=baseline_rmse(truth),
    )
