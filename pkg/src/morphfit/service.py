"""HTTP facade for interactive expression editing.

One POST /sessions call fits a model to landmarks and caches the artifacts; after
that, POST /sessions/{id}/render is a pure function of (session snapshot, request
body) — identical requests return byte-identical PNGs. Sessions live in process
memory only, and each session renders one request at a time.
"""

from __future__ import annotations

import base64
import binascii
import io
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .compositor import BlendConfig, blend, vertex_distance_plane
from .errors import DegenerateGeometryError, MorphfitError
from .fileio import png_bytes
from .fitting import CameraPose, FitConfig, fit_image
from .model import (
    SEMANTIC_LEGEND,
    BilinearModel,
    Coefficients,
    contract_bilinear,
    load_model,
)
from .raster import Image, Texture, extract_texture, render
from .synthetic import SyntheticSpec, make_synthetic_model, procedural_texture

DEFAULT_MODEL_ID = "synthetic"


# --- request/response bodies ---------------------------------------------------------


class SessionRequest(BaseModel):
    model_config = {"protected_namespaces": ()}

    model: str | None = None  # registry id; None picks the service default
    landmarks: list[list[float]]
    image_png: str | None = None  # base64-encoded PNG
    frame: list[int] | None = None  # [width, height] canvas when no image is sent


class BlendOptions(BaseModel):
    sigma2: float | None = None
    kernel_size: int | None = None
    alpha_weights_input: bool | None = None


class RenderRequest(BaseModel):
    expression: list[float]
    blend: BlendOptions | None = None


# --- session state ---------------------------------------------------------------------


@dataclass
class Session:
    """Immutable fit snapshot plus the mutable last-render bookkeeping."""

    session_id: str
    model_id: str
    model: BilinearModel
    pose: CameraPose
    identity: np.ndarray
    expression: np.ndarray
    landmark_rmse: float
    iterations: int
    converged: bool
    texture: Texture
    background: Image
    source_positions: np.ndarray  # fitted geometry, for displacement metrics
    last_expression: np.ndarray | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


def _expression_groups(model: BilinearModel) -> list[str]:
    """Dominant semantic region of each expression unit, for UI slider grouping.

    A unit's displacement field (relative to the neutral expression at the
    reference identity) is averaged per semantic label; the label with the highest
    per-vertex intensity names the group (a sum would always favor the largest
    region)."""
    reference = model.reference_identity()
    neutral = contract_bilinear(
        model, Coefficients(reference, model.neutral_expression)
    ).as_points()
    groups = []
    for j in range(model.n_expression):
        one_hot = np.zeros(model.n_expression)
        one_hot[j] = 1.0
        deformed = contract_bilinear(model, Coefficients(reference, one_hot)).as_points()
        magnitude = np.linalg.norm(deformed - neutral, axis=1)
        per_label = np.zeros(len(SEMANTIC_LEGEND))
        for label in range(len(SEMANTIC_LEGEND)):
            members = magnitude[model.semantic == label]
            per_label[label] = members.mean() if members.size else 0.0
        groups.append(SEMANTIC_LEGEND[int(np.argmax(per_label))])
    return groups


def create_app(model_path: str | None = None, resolution: int = 256,
               fit_config: FitConfig | None = None,
               ui_dir: str | None = None) -> FastAPI:
    """Build the service; `model_path` registers a file model beside the default.

    `ui_dir` optionally mounts a built browser studio at /ui. The browser client
    may also be served from another origin, so CORS is open and the render-metric
    headers are exposed to cross-origin scripts.
    """
    app = FastAPI(title="morphfit studio service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["X-Render-Millis", "X-Max-Displacement-Mm"],
    )
    fit_config = fit_config or FitConfig()
    bounds = fit_config.expression_bounds

    models: dict[str, BilinearModel] = {
        DEFAULT_MODEL_ID: make_synthetic_model(SyntheticSpec(seed=0))
    }
    default_id = DEFAULT_MODEL_ID
    if model_path is not None:
        from pathlib import Path

        default_id = Path(model_path).stem
        models[default_id] = load_model(model_path)

    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    counter = iter(range(1, 10**9))

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        # Session creation promises 400 for malformed bodies; elsewhere keep 422.
        status = 400 if request.url.path.rstrip("/") == "/sessions" else 422
        return JSONResponse(status_code=status, content={"detail": exc.errors()})

    @app.exception_handler(MorphfitError)
    async def domain_error(request: Request, exc: MorphfitError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/model/meta")
    def model_meta(model: str | None = None):
        model_id = model or default_id
        if model_id not in models:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown model {model_id!r}"})
        m = models[model_id]
        return {
            "model": model_id,
            "n_vertices": m.n_vertices,
            "n_identity": m.n_identity,
            "n_expression": m.n_expression,
            "n_landmarks": m.n_landmarks,
            "expression_bounds": list(bounds),
            "semantic_legend": list(SEMANTIC_LEGEND),
            "expression_groups": _expression_groups(m),
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionRequest):
        model_id = body.model or default_id
        if model_id not in models:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown model {model_id!r}"})
        model = models[model_id]
        landmarks = np.asarray(body.landmarks, dtype=np.float64)
        if landmarks.ndim != 2 or landmarks.shape[1] != 2 or landmarks.shape[0] == 0:
            return JSONResponse(status_code=400,
                                content={"detail": "landmarks must be an (L, 2) array"})

        try:
            result = fit_image(model, landmarks, fit_config)
        except DegenerateGeometryError as exc:
            return JSONResponse(status_code=422, content={"detail": str(exc)})

        shape = contract_bilinear(model, result.coefficients)
        if body.image_png is not None:
            try:
                raw = base64.b64decode(body.image_png, validate=True)
            except (binascii.Error, ValueError):
                return JSONResponse(status_code=400,
                                    content={"detail": "image_png is not valid base64"})
            from .fileio import PilImage

            try:
                with PilImage.open(io.BytesIO(raw)) as img:
                    pixels = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
            except Exception:
                return JSONResponse(status_code=400,
                                    content={"detail": "image_png does not decode as an image"})
            background = Image(pixels)
            texture = extract_texture(background, shape, result.pose, model, resolution)
        else:
            texture = procedural_texture(model, resolution)
            if body.frame is not None:
                if len(body.frame) != 2 or min(body.frame) < 8:
                    return JSONResponse(status_code=400,
                                        content={"detail": "frame must be [width, height], each >= 8"})
                width, height = int(body.frame[0]), int(body.frame[1])
            else:
                # No image to size the canvas by: take the landmark frame plus
                # margin so the fitted pose projects onto the canvas.
                width = max(32, int(np.ceil(landmarks[:, 0].max() * 1.1)))
                height = max(32, int(np.ceil(landmarks[:, 1].max() * 1.1)))
            background = Image(np.zeros((height, width, 3)))

        with registry_lock:
            session_id = f"s{next(counter):06d}"
            sessions[session_id] = Session(
                session_id=session_id,
                model_id=model_id,
                model=model,
                pose=result.pose,
                identity=result.coefficients.identity,
                expression=result.coefficients.expression,
                landmark_rmse=result.landmark_rmse,
                iterations=result.iterations,
                converged=result.converged,
                texture=texture,
                background=background,
                source_positions=shape.positions,
            )

        return {
            "session": session_id,
            "landmark_rmse": result.landmark_rmse,
            "iterations": result.iterations,
            "converged": result.converged,
            "identity": result.coefficients.identity.tolist(),
            "expression": result.coefficients.expression.tolist(),
        }

    @app.post("/sessions/{session_id}/render")
    def render_session(session_id: str, body: RenderRequest):
        session = sessions.get(session_id)
        if session is None:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown session {session_id!r}"})
        model = session.model
        expression = np.asarray(body.expression, dtype=np.float64)
        if expression.shape != (model.n_expression,):
            return JSONResponse(status_code=422, content={
                "detail": f"expression must have length {model.n_expression}"})
        if np.any(expression < bounds[0]) or np.any(expression > bounds[1]):
            return JSONResponse(status_code=422, content={
                "detail": f"expression coefficients outside {list(bounds)}"})

        config = BlendConfig()
        if body.blend is not None:
            if body.blend.sigma2 is not None:
                config.sigma2 = body.blend.sigma2
            if body.blend.kernel_size is not None:
                config.kernel_size = body.blend.kernel_size
            if body.blend.alpha_weights_input is not None:
                config.alpha_weights_input = body.blend.alpha_weights_input

        with session.lock:
            start = time.perf_counter()
            shape_src = contract_bilinear(
                model, Coefficients(session.identity, session.expression))
            shape_tgt = contract_bilinear(
                model, Coefficients(session.identity, expression))
            size = (session.background.width, session.background.height)
            rendered = render(shape_tgt, session.texture, session.pose, model, size,
                              background=session.background.data)
            plane, plane_cov = vertex_distance_plane(
                model, shape_src, shape_tgt, session.pose, size)
            distance = np.where(plane_cov, plane, 0.0)
            composite = blend(rendered.image, session.background,
                              rendered.coverage, distance, config)
            payload = png_bytes(composite.data)
            displacement = float(np.linalg.norm(
                shape_tgt.as_points() - shape_src.as_points(), axis=1).max())
            elapsed_ms = (time.perf_counter() - start) * 1000.0
            session.last_expression = expression

        return Response(content=payload, media_type="image/png", headers={
            "X-Render-Millis": f"{elapsed_ms:.2f}",
            "X-Max-Displacement-Mm": f"{displacement:.6f}",
        })

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
