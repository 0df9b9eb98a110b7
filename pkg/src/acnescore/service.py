"""HTTP scoring service with optional assessment history.

Endpoints (JSON over HTTP/1.1):

* ``POST /v1/score`` — raw JPEG/PNG bytes in, score + patch detail out;
* ``POST /v1/users/{user_id}/assessments`` — score and persist;
* ``GET /v1/users/{user_id}/assessments`` — history, timestamp ascending;
* ``GET /v1/health`` — 200 once the pipeline is fully loaded.

Scoring is stateless: identical image bytes yield identical responses for
fixed artifacts. Uploaded images are not retained unless the config says
so. History lives in a single-file append log; no external database.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import __version__ as _pkg_version
from .config import ServiceConfig
from .core import PatchKind, Rect, SeverityLabel
from .errors import (
    AcneScoreError,
    BackendError,
    GeometryError,
    ImageDecodeError,
    NoFaceFound,
)
from .face_patches import (
    DigestEyeBackend,
    DigestLandmarkBackend,
    EyeBackend,
    LandmarkBackend,
    OnnxEyeBackend,
    YuNetLandmarkBackend,
)
from .imgio import decode_image_bytes
from .model import (
    HEAD_VERSION,
    EmbeddingBackend,
    ImageScore,
    OnnxEmbeddingBackend,
    PatchScore,
    ProjectionEmbeddingBackend,
    RegressionHead,
    load_head,
    score_image,
)


@dataclass(frozen=True)
class AssessmentRecord:
    assessment_id: str
    user_id: str
    timestamp: int  # UTC seconds
    score: ImageScore
    pipeline_version: str

    def to_json_dict(self) -> dict:
        return {
            "assessment_id": self.assessment_id,
            "user_id": self.user_id,
            "timestamp": self.timestamp,
            "score": image_score_dict(self.score),
            "pipeline_version": self.pipeline_version,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AssessmentRecord":
        s = d["score"]
        patches = [
            PatchScore(
                kind=_KIND_BY_NAME[p["kind"]],
                rect=Rect(**p["rect"]),
                raw=p["raw"],
                score=p["score"],
            )
            for p in s["patches"]
        ]
        score = ImageScore(
            image_id=s.get("image_id"),
            patch_scores=patches,
            final=s["score"],
            label=SeverityLabel(s["class"]),
        )
        return cls(
            assessment_id=d["assessment_id"],
            user_id=d["user_id"],
            timestamp=d["timestamp"],
            score=score,
            pipeline_version=d["pipeline_version"],
        )


_KIND_BY_NAME = {k.value: k for k in PatchKind}


def image_score_dict(score: ImageScore) -> dict:
    return {
        "image_id": score.image_id,
        "score": score.final,
        "class": int(score.label),
        "patches": [
            {
                "kind": p.kind.value,
                "score": p.score,
                "raw": p.raw,
                "rect": {"x": p.rect.x, "y": p.rect.y, "w": p.rect.w, "h": p.rect.h},
            }
            for p in score.patch_scores
        ],
    }


class AssessmentStore:
    """Append-log persistence for assessment records.

    One JSON document per line; the full log is replayed into memory at
    startup. ``path=None`` keeps everything in memory (tests, demos).
    Writes are serialized by a lock; per-user timestamps are forced
    monotone non-decreasing within this instance.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self._path = Path(path) if path else None
        self._lock = threading.Lock()
        self._by_user: dict[str, list[AssessmentRecord]] = {}
        if self._path and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = AssessmentRecord.from_json_dict(json.loads(line))
                    self._by_user.setdefault(rec.user_id, []).append(rec)

    def next_timestamp(self, user_id: str) -> int:
        now = int(time.time())
        with self._lock:
            records = self._by_user.get(user_id)
            if records:
                return max(now, records[-1].timestamp)
        return now

    def add(self, record: AssessmentRecord) -> None:
        with self._lock:
            self._by_user.setdefault(record.user_id, []).append(record)
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_json_dict(), separators=(",", ":")) + "\n")
                    fh.flush()

    def list_for(self, user_id: str) -> list[AssessmentRecord]:
        with self._lock:
            records = list(self._by_user.get(user_id, []))
        return sorted(records, key=lambda r: (r.timestamp, r.assessment_id))

    def has_user(self, user_id: str) -> bool:
        with self._lock:
            return user_id in self._by_user

    def __iter__(self) -> Iterator[AssessmentRecord]:
        with self._lock:
            users = list(self._by_user.values())
        for records in users:
            yield from records


@dataclass
class ScoringPipeline:
    """Everything needed to turn image bytes into an ImageScore."""

    landmark_backend: LandmarkBackend
    eye_backend: EyeBackend
    embedding_backend: EmbeddingBackend
    head: RegressionHead
    version: str = field(default_factory=lambda: f"acnescore/{_pkg_version}")
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def score_bytes(self, data: bytes, image_id: str | None = None) -> ImageScore:
        img = decode_image_bytes(data)
        serial = not (
            getattr(self.landmark_backend, "concurrent_safe", False)
            and getattr(self.eye_backend, "concurrent_safe", False)
            and getattr(self.embedding_backend, "concurrent_safe", False)
        )
        if serial:
            with self._lock:
                return score_image(
                    img, self.landmark_backend, self.eye_backend, self.embedding_backend,
                    self.head, image_id=image_id,
                )
        return score_image(
            img, self.landmark_backend, self.eye_backend, self.embedding_backend,
            self.head, image_id=image_id,
        )

    @classmethod
    def from_config(cls, cfg: ServiceConfig) -> "ScoringPipeline":
        if not cfg.head_path:
            raise BackendError("config is missing head_path")
        head = load_head(cfg.head_path)
        if cfg.embedding_backend == "test":
            embedding: EmbeddingBackend = ProjectionEmbeddingBackend(
                dim=cfg.embed_dim, input_side=cfg.input_side
            )
        else:
            embedding = OnnxEmbeddingBackend(cfg.backbone_path, input_side=cfg.input_side)
        if cfg.landmarks_dir:
            landmark: LandmarkBackend = DigestLandmarkBackend(cfg.landmarks_dir)
            eye: EyeBackend = DigestEyeBackend(cfg.landmarks_dir)
        else:
            landmark = YuNetLandmarkBackend(cfg.landmark_model_path)
            eye = OnnxEyeBackend(cfg.eye_model_path)
        return cls(landmark_backend=landmark, eye_backend=eye, embedding_backend=embedding, head=head)


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "detail": detail})


def create_app(
    pipeline: ScoringPipeline | None,
    cfg: ServiceConfig | None = None,
    store: AssessmentStore | None = None,
) -> FastAPI:
    """Build the FastAPI app around a loaded pipeline.

    ``pipeline=None`` models a service whose artifacts failed to load: it
    stays up but answers 503 on scoring routes and on health.
    """
    cfg = cfg or ServiceConfig()
    store = store if store is not None else AssessmentStore(cfg.store_path or None)
    retain_dir: Path | None = None
    if cfg.retain_images:
        base = Path(cfg.store_path).parent if cfg.store_path else Path(".")
        retain_dir = base / "retained_images"
        retain_dir.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="acnescore", version=_pkg_version)

    async def _read_scoring_body(request: Request) -> bytes | JSONResponse:
        length = request.headers.get("content-length")
        if length and length.isdigit() and int(length) > cfg.max_body_bytes:
            return _error(413, "payload_too_large", f"image exceeds {cfg.max_body_bytes} bytes")
        body = await request.body()
        if len(body) > cfg.max_body_bytes:
            return _error(413, "payload_too_large", f"image exceeds {cfg.max_body_bytes} bytes")
        return body

    def _score_or_response(body: bytes) -> ImageScore | JSONResponse:
        if pipeline is None:
            return _error(503, "backend_unavailable", "scoring pipeline is not loaded")
        try:
            return pipeline.score_bytes(body)
        except ImageDecodeError as exc:
            return _error(400, "undecodable_image", str(exc))
        except NoFaceFound as exc:
            return _error(422, "no_face", str(exc))
        except GeometryError as exc:
            return _error(422, "insufficient_skin_area", str(exc))
        except BackendError as exc:
            return _error(503, "backend_unavailable", str(exc))

    @app.post("/v1/score")
    async def score(request: Request):
        body = await _read_scoring_body(request)
        if isinstance(body, JSONResponse):
            return body
        result = _score_or_response(body)
        if isinstance(result, JSONResponse):
            return result
        payload = image_score_dict(result)
        payload.pop("image_id")
        payload["pipeline_version"] = pipeline.version
        return JSONResponse(payload)

    def _check_user(user_id: str) -> JSONResponse | None:
        if not 1 <= len(user_id) <= 64:
            return _error(422, "invalid_user_id", "user_id must be 1-64 characters")
        return None

    @app.post("/v1/users/{user_id}/assessments")
    async def post_assessment(user_id: str, request: Request):
        bad = _check_user(user_id)
        if bad is not None:
            return bad
        body = await _read_scoring_body(request)
        if isinstance(body, JSONResponse):
            return body
        result = _score_or_response(body)
        if isinstance(result, JSONResponse):
            return result
        record = AssessmentRecord(
            assessment_id=uuid.uuid4().hex,
            user_id=user_id,
            timestamp=store.next_timestamp(user_id),
            score=result,
            pipeline_version=pipeline.version,
        )
        store.add(record)
        if retain_dir is not None:
            (retain_dir / f"{record.assessment_id}.img").write_bytes(body)
        return JSONResponse(record.to_json_dict(), status_code=201)

    @app.get("/v1/users/{user_id}/assessments")
    async def list_assessments(user_id: str):
        bad = _check_user(user_id)
        if bad is not None:
            return bad
        if cfg.strict_users and not store.has_user(user_id):
            return _error(404, "unknown_user", f"no assessments for user {user_id!r}")
        return JSONResponse([r.to_json_dict() for r in store.list_for(user_id)])

    @app.get("/v1/health")
    async def health():
        if pipeline is None:
            return _error(503, "backend_unavailable", "scoring pipeline is not loaded")
        return JSONResponse(
            {
                "status": "ok",
                "backbone_loaded": True,
                "head_version": HEAD_VERSION,
                "pipeline_version": pipeline.version,
            }
        )

    return app


def app_from_config(cfg: ServiceConfig) -> FastAPI:
    """App factory used by ``acnescore serve``; load failures become a 503 app."""
    try:
        pipeline = ScoringPipeline.from_config(cfg)
    except AcneScoreError:
        pipeline = None
    return create_app(pipeline, cfg)
