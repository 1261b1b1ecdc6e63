"""HTTP service backing the explorer UI: SAG JSON, what-if queries and renders.

The service is a thin adapter over the engine: every confidence it returns is
computed live by the same code paths the library exposes, against an immutable
session registry loaded at startup.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image as PilImage
from pydantic import BaseModel

from .datasets import read_image_png
from .errors import BaselineError
from .manifest import sha256_file
from .models import ToyCnn, blur_baseline, gaussian_blur, load_toy_cnn, score
from .perturbation import PatchGrid, PatchSubset, apply_mask, subset_to_mask
from .sag import Sag, sag_from_json


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    scorer: ToyCnn
    model_hash: str
    images: dict[str, np.ndarray]
    sags: dict[str, Sag]
    grid_rows: int = 7
    grid_cols: int = 7
    baseline_sigma: float = 2.0
    baseline_epsilon: float = 0.05
    _baselines: dict = field(default_factory=dict)

    def image(self, image_id: str) -> np.ndarray:
        if image_id not in self.images:
            raise ServiceError(404, "unknown_image", f"no image with id {image_id!r}")
        return self.images[image_id]

    def sag(self, sag_id: str) -> Sag:
        if sag_id not in self.sags:
            raise ServiceError(404, "unknown_sag", f"no SAG with id {sag_id!r}")
        return self.sags[sag_id]

    def baseline_for(self, image_id: str, class_index: int) -> np.ndarray:
        key = (image_id, class_index)
        if key not in self._baselines:
            try:
                self._baselines[key] = blur_baseline(
                    self.image(image_id), self.baseline_sigma, self.scorer,
                    class_index, self.baseline_epsilon)
            except BaselineError as exc:
                raise ServiceError(422, "baseline_unattainable", str(exc)) from exc
        return self._baselines[key]

    def validate_patches(self, patches: list[int], patch_count: int) -> tuple[int, ...]:
        seen = set()
        for p in patches:
            if not isinstance(p, int) or isinstance(p, bool):
                raise ServiceError(422, "invalid_patch_list", "patches must be integers")
            if not 0 <= p < patch_count:
                raise ServiceError(
                    422, "invalid_patch_index",
                    f"patch {p} out of range [0, {patch_count})")
            if p in seen:
                raise ServiceError(422, "invalid_patch_list", f"duplicate patch {p}")
            seen.add(p)
        return tuple(sorted(seen))


def load_session(model_file, image_dir=None, sag_dir=None, grid_rows=7, grid_cols=7,
                 baseline_sigma=2.0, baseline_epsilon=0.05) -> Session:
    scorer = load_toy_cnn(model_file)
    images = {}
    if image_dir is not None:
        for path in sorted(Path(image_dir).glob("*.png")):
            images[path.stem] = read_image_png(path)
    sags = {}
    if sag_dir is not None:
        for path in sorted(Path(sag_dir).glob("*.json")):
            sags[path.stem] = sag_from_json(path.read_text())
    return Session(
        scorer=scorer,
        model_hash=sha256_file(model_file),
        images=images,
        sags=sags,
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        baseline_sigma=baseline_sigma,
        baseline_epsilon=baseline_epsilon,
    )


class WhatIfRequest(BaseModel):
    image_id: str
    class_index: int
    patches: list[int]


def _parse_patches(raw: str) -> list[int]:
    raw = raw.strip()
    if not raw:
        return []
    try:
        return [int(tok) for tok in raw.split(",")]
    except ValueError as exc:
        raise ServiceError(422, "invalid_patch_list",
                           "patches must be a comma-separated list of integers") from exc


def create_app(session: Session) -> FastAPI:
    app = FastAPI(title="masklab service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def on_service_error(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "model_hash": session.model_hash}

    @app.get("/sags")
    def list_sags():
        return {"sag_ids": sorted(session.sags)}

    @app.get("/sags/{sag_id}")
    def get_sag(sag_id: str):
        sag = session.sag(sag_id)
        return {
            "image_id": sag.image_id,
            "class_index": sag.class_index,
            "grid": {"rows": sag.grid_rows, "cols": sag.grid_cols},
            "full_confidence": sag.full_confidence,
            "nodes": [
                {"id": n.id, "patches": list(n.patches),
                 "confidence": n.confidence, "is_root": n.is_root}
                for n in sag.nodes
            ],
            "edges": [{"from": a, "to": b} for a, b in sag.edges],
        }

    @app.post("/whatif")
    def whatif(body: WhatIfRequest):
        image = session.image(body.image_id)
        if not 0 <= body.class_index < session.scorer.class_count:
            raise ServiceError(422, "invalid_class",
                               f"class index {body.class_index} out of range")
        grid = PatchGrid(session.grid_rows, session.grid_cols,
                         image.shape[0], image.shape[1])
        subset = PatchSubset(grid, session.validate_patches(body.patches, grid.patch_count))
        baseline = session.baseline_for(body.image_id, body.class_index)
        masked = apply_mask(image, baseline, subset_to_mask(subset))
        confidence = score(session.scorer, masked, body.class_index)
        full = score(session.scorer, image, body.class_index)
        return {
            "confidence": confidence,
            "full_confidence": full,
            "ratio": confidence / full if full > 0 else None,
        }

    @app.get("/render")
    def render(image_id: str, patches: str = Query(""), class_index: int | None = None):
        image = session.image(image_id)
        grid = PatchGrid(session.grid_rows, session.grid_cols,
                         image.shape[0], image.shape[1])
        subset = PatchSubset(grid, session.validate_patches(
            _parse_patches(patches), grid.patch_count))
        if class_index is None:
            baseline = gaussian_blur(image, session.baseline_sigma)
        else:
            if not 0 <= class_index < session.scorer.class_count:
                raise ServiceError(422, "invalid_class",
                                   f"class index {class_index} out of range")
            baseline = session.baseline_for(image_id, class_index)
        masked = apply_mask(image, baseline, subset_to_mask(subset))
        gray = np.round(masked[:, :, 0] * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        PilImage.fromarray(gray, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/nearest")
    def nearest(sag_id: str, patches: str = Query("")):
        sag = session.sag(sag_id)
        patch_count = sag.grid_rows * sag.grid_cols
        query = set(session.validate_patches(_parse_patches(patches), patch_count))
        ranked = sorted(
            sag.nodes, key=lambda n: (len(query.symmetric_difference(n.patches)), n.id))
        return {
            "node_ids": [n.id for n in ranked],
            "distances": [len(query.symmetric_difference(n.patches)) for n in ranked],
        }

    return app
