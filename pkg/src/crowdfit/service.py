"""FastAPI service wrapping the reconstruction package.

Endpoints accept and return the same JSON documents the file formats
use, so the CLI can act as a thin client that only moves bytes between
disk and the service.
"""
from __future__ import annotations

import dataclasses

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from . import body as body_mod
from . import metrics, pipeline, sceneio, synth
from .errors import CrowdFitError
from .losses import LossWeights

API_VERSION = "1"

app = FastAPI(title="crowdfit", version=API_VERSION)


class FitOverrides(BaseModel):
    """Optional knobs for /fit; anything unset keeps the default."""
    model_config = ConfigDict(extra="forbid")

    iters: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    threshold: float | None = None
    seed: int | None = None
    no_crowd: bool | None = None
    raw_pixel_keyp: bool | None = None
    detach_normal: bool | None = None
    per_batch_normal: bool | None = None
    freeze_normal_every: int | None = None
    literal_init_loss: bool | None = None
    stage1_iters: int | None = None
    stage1_lr: float | None = None
    weights: dict[str, float] | None = None


def build_config(overrides: FitOverrides | None) -> pipeline.FitConfig:
    config = pipeline.FitConfig()
    if overrides is None:
        return config
    data = overrides.model_dump(exclude_none=True)
    weights = data.pop("weights", None)
    if weights is not None:
        base = dataclasses.asdict(config.weights)
        unknown = set(weights) - set(base)
        if unknown:
            raise HTTPException(status_code=422,
                                detail="unknown loss weights: %s"
                                % sorted(unknown))
        base.update(weights)
        config.weights = LossWeights(**base)
    for key, value in data.items():
        setattr(config, key, value)
    return config


class FitRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scene: dict
    config: FitOverrides | None = None


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    spec: sceneio.SceneSpecModel


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    scene: dict
    result: dict


class ExportRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    result: dict
    format: str = "obj"


class ExportResponse(BaseModel):
    files: dict[str, str]


def _wrap(fn):
    try:
        return fn()
    except CrowdFitError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


@app.get("/v1/health")
def health():
    return {"status": "ok", "api_version": API_VERSION,
            "template_version": body_mod.default_template().version}


@app.post("/v1/generate")
def generate(req: GenerateRequest) -> dict:
    scene = _wrap(lambda: synth.generate_scene(req.spec))
    return scene.model_dump()


@app.post("/v1/fit")
def fit(req: FitRequest) -> dict:
    scene = _wrap(lambda: sceneio.scene_from_dict(req.scene))
    config = build_config(req.config)
    result = _wrap(lambda: pipeline.reconstruct(scene, config=config))
    return result.model_dump()


@app.post("/v1/eval")
def evaluate(req: EvalRequest) -> dict:
    scene = _wrap(lambda: sceneio.scene_from_dict(req.scene))
    result = _wrap(lambda: sceneio.result_from_dict(req.result))
    report = _wrap(lambda: metrics.evaluate(scene, result))
    return report.model_dump()


@app.post("/v1/export")
def export(req: ExportRequest) -> ExportResponse:
    import os
    import tempfile

    result = _wrap(lambda: sceneio.result_from_dict(req.result))
    template = body_mod.default_template()
    with tempfile.TemporaryDirectory() as tmp:
        paths = _wrap(lambda: sceneio.export_geometry(
            result, template, tmp, req.format))
        files = {}
        for path in paths:
            with open(path) as fh:
                files[os.path.basename(path)] = fh.read()
    return ExportResponse(files=files)
