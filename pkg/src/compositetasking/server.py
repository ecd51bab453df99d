"""HTTP inference service.

Endpoints (JSON with base64-encoded PNG/tensor payloads):
  GET  /v1/tasks           -> task ids, names, and legend colors
  POST /v1/predict         -> composite render, raw tensor, overlays, palette
  POST /v1/palette/predict -> palette predicted from the image alone

The model bundle is read-only; request handling is concurrent with a
bounded number of in-flight predictions.
"""

from __future__ import annotations

import base64
import binascii
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import palette as pal, visualize
from .autodiff import Tensor
from .network import ModelBundle

MAX_REQUEST_BYTES = 16 * 1024 * 1024
MAX_IN_FLIGHT = 8


class PredictRequest(BaseModel):
    image: str  # base64 PNG, RGB
    palette: str  # base64 single-channel PNG, or "auto"


class ImageRequest(BaseModel):
    image: str


def _b64decode(field: str, value: str) -> bytes:
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(400, f"{field}: invalid base64")


def _decode_image(value: str) -> np.ndarray:
    data = _b64decode("image", value)
    try:
        return visualize.image_from_png_bytes(data)
    except Exception:
        raise HTTPException(400, "image: not a decodable PNG")


def _decode_palette(value: str) -> np.ndarray:
    data = _b64decode("palette", value)
    try:
        return pal.palette_from_png_bytes(data)
    except Exception:
        raise HTTPException(400, "palette: not a decodable PNG")


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def create_app(bundle: ModelBundle, predictor: ModelBundle | None = None) -> FastAPI:
    app = FastAPI(title="composite-tasking")
    gate = threading.Semaphore(MAX_IN_FLIGHT)

    @app.middleware("http")
    async def limit_size(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > MAX_REQUEST_BYTES:
            return JSONResponse({"detail": "request exceeds 16 MiB"}, status_code=413)
        return await call_next(request)

    @app.get("/v1/tasks")
    def tasks():
        return visualize.palette_legend(bundle.config.k)

    @app.post("/v1/predict")
    def predict(req: PredictRequest):
        from .cli import run_prediction

        image = _decode_image(req.image)
        h, w = image.shape[1:]
        if req.palette == "auto":
            if predictor is None:
                raise HTTPException(409, "no palette predictor deployed")
            palette = predictor.model.predict_palette(Tensor(image[None]))[0]
        else:
            palette = _decode_palette(req.palette)
        if palette.shape != (h, w):
            raise HTTPException(422, f"palette size {palette.shape} != image size {(h, w)}")
        ok, report = pal.validate_palette(palette, bundle.config.k)
        if not ok:
            raise HTTPException(422, f"palette holds invalid task ids: {report['n_violations']} cells")
        with gate:
            try:
                blobs = run_prediction(bundle, image, palette)
            except ValueError as e:
                raise HTTPException(422, str(e))
        overlays = {
            name[len("overlay_"):]: _b64(blob)
            for name, blob in blobs.items()
            if name.startswith("overlay_")
        }
        return {
            "composite": _b64(blobs["composite"]),
            "raw": _b64(blobs["raw"]),
            "overlays": overlays,
            "palette": _b64(blobs["palette"]),
        }

    @app.post("/v1/palette/predict")
    def palette_predict(req: ImageRequest):
        if predictor is None:
            raise HTTPException(409, "no palette predictor deployed")
        image = _decode_image(req.image)
        with gate:
            try:
                palette = predictor.model.predict_palette(Tensor(image[None]))[0]
            except ValueError as e:
                raise HTTPException(422, str(e))
        return {"palette": _b64(pal.palette_to_png_bytes(palette))}

    return app
