"""HTTP service for interactive expression manipulation.

Models load once at startup; every request handler only reads that state,
so concurrent renders are safe.  Bodies are JSON; images come back as PNG
(or a zip of PNGs for sweeps).  Validation failures return 400 with the
offending field, unknown emotion tags return 404.
"""

import io
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .camera import orbit_pose
from .images import png_bytes
from .pipeline import SynthesisPipeline, refine_or_tag
from .renderfield import RenderConfig, render_frame

MAX_RESOLUTION = 256
TAU_RANGE = (-3.0, 3.0)


@dataclass
class ServerState:
    pipeline: SynthesisPipeline
    render_cfg: RenderConfig
    frontend_dir: Optional[str] = None


def build_state(cfg):
    from .cli import _build_pipeline  # shares checkpoint/plane discovery
    pipe = _build_pipeline(cfg, mode=cfg.training.mode)
    # index.html sits at the frontend root and loads ./dist/main.js, so the
    # whole frontend directory is the static root
    frontend = Path("frontend")
    ready = (frontend / "index.html").is_file() and (frontend / "dist").is_dir()
    return ServerState(pipeline=pipe, render_cfg=cfg.render,
                       frontend_dir=str(frontend) if ready else None)


class CameraBody(BaseModel):
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    radius: float = 3.0


class RenderBody(BaseModel):
    emotion: str
    tau: float = 0.0
    second_emotion: Optional[str] = None
    lam: float = Field(0.0, alias="lambda", ge=0.0, le=1.0)
    camera: CameraBody = CameraBody()
    resolution: int = Field(64, ge=4, le=MAX_RESOLUTION)

    model_config = {"populate_by_name": True}


class SweepBody(BaseModel):
    dim: int = Field(ge=0, le=9)
    start: float = Field(-1.8, alias="from")
    stop: float = Field(1.8, alias="to")
    steps: int = Field(8, ge=1, le=64)
    emotion: Optional[str] = None
    camera: CameraBody = CameraBody()
    resolution: int = Field(64, ge=4, le=MAX_RESOLUTION)

    model_config = {"populate_by_name": True}


def _render_config(state, resolution):
    base = state.render_cfg
    return RenderConfig(samples_per_ray=base.samples_per_ray,
                        stratified=base.stratified, background=base.background,
                        resolution=(resolution, resolution),
                        near=base.near, far=base.far, seed=base.seed)


def create_app(state):
    app = FastAPI(title="emoface manipulation service")

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        details = [{"field": ".".join(str(p) for p in err["loc"] if p != "body"),
                    "message": err["msg"]} for err in exc.errors()]
        return JSONResponse(status_code=400, content={"errors": details})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/emotions")
    def emotions():
        return {
            "emotions": sorted(state.pipeline.planes),
            "max_resolution": MAX_RESOLUTION,
            "tau_range": list(TAU_RANGE),
            "mode": state.pipeline.mode,
        }

    @app.post("/render")
    def render(body: RenderBody):
        pipe = state.pipeline
        if body.emotion not in pipe.planes:
            return JSONResponse(status_code=404, content={
                "error": f"unknown emotion {body.emotion!r}",
                "emotions": sorted(pipe.planes)})
        if body.second_emotion is not None and body.second_emotion not in pipe.planes:
            return JSONResponse(status_code=404, content={
                "error": f"unknown emotion {body.second_emotion!r}",
                "emotions": sorted(pipe.planes)})
        rcfg = _render_config(state, body.resolution)
        pose = orbit_pose(body.camera.azimuth_deg, body.camera.elevation_deg,
                          body.camera.radius, body.resolution, body.resolution)
        img = pipe.render_refined(pose, body.emotion, body.tau,
                                  second_tag=body.second_emotion, lam=body.lam,
                                  render_config=rcfg)
        return Response(content=png_bytes(img), media_type="image/png")

    @app.post("/sweep")
    def sweep(body: SweepBody):
        pipe = state.pipeline
        rcfg = _render_config(state, body.resolution)
        pose = orbit_pose(body.camera.azimuth_deg, body.camera.elevation_deg,
                          body.camera.radius, body.resolution, body.resolution)
        values = (np.linspace(body.start, body.stop, body.steps)
                  if body.steps > 1 else np.array([(body.start + body.stop) / 2.0]))
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for i, v in enumerate(values):
                alpha = np.zeros(10)
                alpha[body.dim] = v
                cond = refine_or_tag(pipe.mode, alpha, 0.0, None, 1)
                img = render_frame(pipe.field, pose, cond, rcfg)
                zf.writestr(f"frame_{i:03d}.png", png_bytes(img))
        return Response(content=buf.getvalue(), media_type="application/zip")

    if state.frontend_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=state.frontend_dir, html=True),
                  name="ui")
    return app
