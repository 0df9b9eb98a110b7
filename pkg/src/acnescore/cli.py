"""Operator command line: dataset prep, training, evaluation, scoring, serving.

Exit codes: 0 success, 2 input error, 3 training failure, 4 scoring
failure. All outputs are reproducible byte-for-byte given the same
inputs, seeds, and artifacts; files are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .augmentation import augment_patch_set, balance_plan
from .config import ServiceConfig, read_kv_file
from .core import PatchKind, Rect, SeverityLabel
from .dataset import build_golden, class_distribution, load_manifest
from .errors import (
    AcneScoreError,
    DivergenceError,
    GeometryError,
    ImageDecodeError,
    NoFaceFound,
)
from .evaluation import evaluate_model, format_panel_table
from .face_patches import (
    SidecarEyeBackend,
    SidecarLandmarkBackend,
    SkinPatch,
    draw_patch_overlay,
    extract_patches,
    resize_patch,
)
from .imgio import read_image, write_png
from .model import (
    EmbeddingBackend,
    OnnxEmbeddingBackend,
    ProjectionEmbeddingBackend,
    TrainConfig,
    embed,
    load_head,
    save_head,
    score_image,
    train_head,
)
from .service import ScoringPipeline, app_from_config, image_score_dict

PATCH_MANIFEST_COLUMNS = ("patch_path", "image_id", "kind", "shift", "label")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRAIN = 3
EXIT_SCORE = 4

_KIND_BY_NAME = {k.value: k for k in PatchKind}


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _sidecar_backends(landmarks_dir: str | None, image_id: str, image_path: Path):
    base = Path(landmarks_dir) if landmarks_dir else image_path.parent
    return (
        SidecarLandmarkBackend(base / f"{image_id}.landmarks"),
        SidecarEyeBackend(base / f"{image_id}.eye"),
    )


def _write_patch_manifest(path: Path, rows: list[tuple[str, str, str, int, int]]) -> None:
    lines = [",".join(PATCH_MANIFEST_COLUMNS)]
    lines += [f"{p},{i},{k},{s},{l}" for p, i, k, s, l in rows]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _read_patch_manifest(path: Path) -> list[tuple[str, SkinPatch]]:
    """Patch manifest rows as (image_id, patch) pairs."""
    rows: list[tuple[str, SkinPatch]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PATCH_MANIFEST_COLUMNS:
            raise AcneScoreError(
                f"patch manifest header must be {','.join(PATCH_MANIFEST_COLUMNS)}"
            )
        for row in reader:
            img = read_image(row["patch_path"])
            label = SeverityLabel(int(row["label"])) if row["label"] else None
            patch = SkinPatch(
                kind=_KIND_BY_NAME[row["kind"]],
                source_rect=Rect(0, 0, img.width, img.height),
                pixels=img,
                label=label,
                shift=int(row["shift"]),
            )
            rows.append((row["image_id"], patch))
    return rows


def _embedding_backend(args) -> EmbeddingBackend:
    if args.test_backend:
        return ProjectionEmbeddingBackend(dim=args.embed_dim, input_side=args.input_side)
    return OnnxEmbeddingBackend(args.backbone, input_side=args.input_side)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_extract_patches(args) -> int:
    try:
        result = load_manifest(args.manifest)
    except (AcneScoreError, OSError) as exc:
        return _fail(EXIT_INPUT, f"manifest error: {exc}")
    if not result.accepted:
        return _fail(EXIT_INPUT, "manifest contains no usable rows")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, str, str, int, int]] = []
    successes = 0
    for item in result.accepted:
        lm_backend, eye_backend = _sidecar_backends(args.landmarks, item.image_id, item.path)
        try:
            img = read_image(item.path)
            patches = extract_patches(lm_backend, eye_backend, img, label=item.label)
        except (AcneScoreError, OSError) as exc:
            print(f"{item.image_id}: skipped ({exc})", file=sys.stderr)
            continue
        for patch in patches:
            name = f"{item.image_id}_{patch.kind.value}_roll0.png"
            write_png(out_dir / name, patch.pixels)
            rows.append((str(out_dir / name), item.image_id, patch.kind.value, 0, int(patch.label)))
        if args.overlays:
            write_png(out_dir / f"{item.image_id}_overlay.png", draw_patch_overlay(img, patches))
        print(f"{item.image_id}: {len(patches)} patches via {patches[0].via.value}")
        successes += 1
    if successes == 0:
        return _fail(EXIT_INPUT, "no image yielded patches")
    _write_patch_manifest(out_dir / "patches.csv", rows)
    return EXIT_OK


def cmd_augment(args) -> int:
    try:
        manifest_rows = _read_patch_manifest(Path(args.patches))
    except (AcneScoreError, OSError, KeyError, ValueError) as exc:
        return _fail(EXIT_INPUT, f"patch manifest error: {exc}")
    if not manifest_rows:
        return _fail(EXIT_INPUT, "patch manifest is empty")
    if any(p.label is None for _, p in manifest_rows):
        return _fail(EXIT_INPUT, "augmentation requires labeled patches")
    plan = balance_plan(
        class_distribution([p.label for _, p in manifest_rows]),
        n_mild=args.n_mild,
        n_max=args.n_max,
    )
    print("plan (rolls per class):", {int(k): v for k, v in plan.rolls_per_class.items()})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_rows: list[tuple[str, str, str, int, int]] = []
    roll_index: dict[tuple[str, str], int] = {}
    for image_id, patch in manifest_rows:
        for variant in augment_patch_set([patch], plan):
            key = (image_id, variant.kind.value)
            k = roll_index.get(key, 0)
            roll_index[key] = k + 1
            name = f"{image_id}_{variant.kind.value}_roll{k}.png"
            write_png(out_dir / name, variant.pixels)
            out_rows.append(
                (str(out_dir / name), image_id, variant.kind.value, variant.shift, int(variant.label))
            )
    _write_patch_manifest(out_dir / "patches.csv", out_rows)
    achieved = class_distribution([SeverityLabel(label) for _, _, _, _, label in out_rows])
    print("achieved per-class patch counts:", {int(k): v for k, v in achieved.counts.items()})
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        manifest_rows = _read_patch_manifest(Path(args.patches))
    except (AcneScoreError, OSError, KeyError, ValueError) as exc:
        return _fail(EXIT_INPUT, f"patch manifest error: {exc}")
    patches = [p for _, p in manifest_rows]
    if not patches:
        return _fail(EXIT_INPUT, "patch manifest is empty")
    if any(p.label is None for p in patches):
        return _fail(EXIT_INPUT, "training requires labeled patches")
    try:
        backend = _embedding_backend(args)
        samples = [
            (embed(backend, resize_patch(p.pixels, backend.input_side)), p.label) for p in patches
        ]
        cfg = TrainConfig(
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            epochs=args.epochs,
            seed=args.seed,
            val_fraction=args.val_fraction,
        )
        result = train_head(samples, cfg, hidden=tuple(args.hidden))
    except DivergenceError as exc:
        return _fail(EXIT_TRAIN, f"training diverged: {exc}")
    except (AcneScoreError, ValueError) as exc:
        return _fail(EXIT_INPUT, f"training setup error: {exc}")
    save_head(result.head, args.out)
    val = f"{result.val_loss:.6f}" if result.val_loss is not None else "n/a"
    print(f"final train mse {result.train_loss:.6f}  validation mse {val}")
    print(f"head written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        golden = build_golden(args.golden)
        head = load_head(args.head)
        backend = _embedding_backend(args)
    except (AcneScoreError, OSError) as exc:
        return _fail(EXIT_INPUT, f"evaluation setup error: {exc}")

    def score_record(rec):
        lm_backend, eye_backend = _sidecar_backends(args.landmarks, rec.image_id, rec.path)
        img = read_image(rec.path)
        return score_image(img, lm_backend, eye_backend, backend, head, image_id=rec.image_id)

    try:
        summary = evaluate_model(golden, score_record)
    except AcneScoreError as exc:
        return _fail(EXIT_SCORE, f"evaluation failed: {exc}")
    _atomic_write_text(Path(args.report), json.dumps(summary.to_json_dict(), indent=2) + "\n")
    print(format_panel_table(summary.panel))
    print(f"baseline rmse {summary.baseline_rmse:.3f}")
    if summary.failed_images:
        print(f"failed extraction: {len(summary.failed_images)} image(s)", file=sys.stderr)
    print(f"report written to {args.report}")
    return EXIT_OK


def cmd_score(args) -> int:
    try:
        head = load_head(args.head)
        backend = _embedding_backend(args)
        image_path = Path(args.image)
        img = read_image(image_path)
        lm_backend, eye_backend = _sidecar_backends(
            args.landmarks, image_path.stem, image_path
        )
        score = score_image(img, lm_backend, eye_backend, backend, head, image_id=image_path.stem)
    except (NoFaceFound, GeometryError) as exc:
        print(json.dumps({"code": "no_face", "detail": str(exc)}), file=sys.stderr)
        return EXIT_SCORE
    except ImageDecodeError as exc:
        return _fail(EXIT_INPUT, f"image error: {exc}")
    except (AcneScoreError, OSError) as exc:
        return _fail(EXIT_INPUT, f"scoring setup error: {exc}")
    print(json.dumps(image_score_dict(score), indent=2))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    try:
        cfg = ServiceConfig.from_file(args.config) if args.config else ServiceConfig()
    except (AcneScoreError, OSError) as exc:
        return _fail(EXIT_INPUT, f"config error: {exc}")
    app = app_from_config(cfg)
    host, port = cfg.host_port
    uvicorn.run(app, host=host, port=port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--backbone", help="path to the ONNX backbone artifact")
    group.add_argument(
        "--test-backend",
        action="store_true",
        help="use the deterministic seeded-projection backend (no artifact)",
    )
    p.add_argument("--embed-dim", type=int, default=256, help="test backend dimension")
    p.add_argument("--input-side", type=int, default=224, help="patch side fed to the backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acnescore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-patches", help="extract skin patches for a manifest of images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--landmarks", help="directory of <image_id>.landmarks/.eye sidecars")
    p.add_argument("--overlays", action="store_true", help="also write debug overlay PNGs")
    p.set_defaults(func=cmd_extract_patches)

    p = sub.add_parser("augment", help="roll patches into a class-balanced training set")
    p.add_argument("--patches", required=True, help="patch manifest CSV from extract-patches")
    p.add_argument("--out", required=True)
    p.add_argument("--n-mild", type=int, default=2)
    p.add_argument("--n-max", type=int, default=10)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the regression head on embedded patches")
    p.add_argument("--patches", required=True)
    p.add_argument("--out", required=True, help="head artifact output path")
    _add_backend_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--hidden", type=int, nargs="+", default=[1024, 512, 256])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a head against the golden set")
    p.add_argument("--golden", required=True)
    p.add_argument("--head", required=True)
    _add_backend_args(p)
    p.add_argument("--landmarks", help="sidecar directory")
    p.add_argument("--report", required=True, help="JSON report output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score", help="score a single image")
    p.add_argument("--image", required=True)
    p.add_argument("--head", required=True)
    _add_backend_args(p)
    p.add_argument("--landmarks", help="sidecar directory")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("serve", help="run the scoring service")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
