"""Scene/result file schemas, canonical JSON serialization and geometry
export.

Scene and result files are versioned JSON documents validated by the
pydantic models below; unknown fields are rejected with the offending
field named. Serialization is canonical (sorted keys, fixed separators)
so identical data produces identical bytes.
"""
from __future__ import annotations

import json
import math
import os

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import body as body_mod
from .camera import Intrinsics
from .errors import SceneFormatError

SCENE_SCHEMA_VERSION = "1"
RESULT_SCHEMA_VERSION = "1"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BBoxModel(StrictModel):
    cx_abs: float
    cy_abs: float
    w: float = Field(gt=0)
    h: float = Field(gt=0)


class PersonObsModel(StrictModel):
    id: int
    bbox: BBoxModel
    score: float = Field(ge=0.0, le=1.0)
    keypoints: list[list[float]]        # [[u, v, conf], ...]
    layout: str = "model24"


class PlaneModel(StrictModel):
    normal: list[float]
    offset: float


class GTPersonModel(StrictModel):
    id: int
    theta: list[float]
    beta: list[float]
    t: list[float]
    joints3d: list[list[float]]         # root-relative, meters
    vertices3d: list[list[float]]       # root-relative, meters


class GroundTruthModel(StrictModel):
    persons: list[GTPersonModel]
    plane: PlaneModel | None = None


class SceneFileModel(StrictModel):
    schema_version: str = SCENE_SCHEMA_VERSION
    image_width: int
    image_height: int
    focal: float | None = None
    focal_fallback_applied: bool = False
    persons: list[PersonObsModel]
    ground_truth: GroundTruthModel | None = None

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(image_width=self.image_width,
                          image_height=self.image_height, focal=self.focal)


class CamTripleModel(StrictModel):
    f_c: float
    t_x: float
    t_y: float


class ResultPersonModel(StrictModel):
    id: int
    theta: list[float]
    beta: list[float]
    cam: CamTripleModel
    t: list[float]
    flags: list[str] = Field(default_factory=list)


class IterEntryModel(StrictModel):
    stage: str
    step: int
    lr: float
    objective: float


class ResultSceneModel(StrictModel):
    normal: list[float] | None = None
    loss_breakdown: dict[str, float] = Field(default_factory=dict)
    iteration_log: list[IterEntryModel] = Field(default_factory=list)


class ResultFileModel(StrictModel):
    schema_version: str = RESULT_SCHEMA_VERSION
    config: dict
    persons: list[ResultPersonModel]
    scene: ResultSceneModel
    notes: list[str] = Field(default_factory=list)


class SceneSpecModel(StrictModel):
    """Synthetic scene description consumed by the generator."""
    plane_normal: list[float]           # unit vector, camera coordinates
    plane_offset: float                 # plane is {p : normal . p = offset}
    image_width: int
    image_height: int
    focal: float | None = None
    n_persons: int = Field(ge=1)
    sigma_pose: float = Field(default=0.0, ge=0.0)
    sigma_shape: float = Field(default=0.0, ge=0.0)
    sigma_kp: float = Field(default=0.0, ge=0.0)
    extent_x: float = Field(default=10.0, gt=0)      # meters, in-plane
    extent_depth: float = Field(default=10.0, gt=0)  # meters, in-plane
    anchor_depth: float | None = Field(default=None, gt=0)
    seed: int = 0


class PerturbSpecModel(StrictModel):
    sigma_z: float = Field(default=0.0, ge=0.0)      # meters
    sigma_theta: float = Field(default=0.0, ge=0.0)  # radians
    sigma_beta: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class DepthErrorModel(StrictModel):
    mean_abs: float
    median_abs: float
    max_abs: float


class EvalReportModel(StrictModel):
    per_person_oks: dict[str, float | None]
    mean_oks: float | None
    mpjpe_mm: float | None
    pa_mpjpe_mm: float | None
    plane_residual_std_m: float | None
    normal_angle_error_deg: float | None
    depth_error: DepthErrorModel | None


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append("%s: %s" % (loc, err["msg"]))
    return "; ".join(parts)


def _validate(model_cls, data, what):
    try:
        return model_cls.model_validate(data)
    except ValidationError as exc:
        raise SceneFormatError(
            "invalid %s: %s" % (what, _format_validation_error(exc)))


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"),
                      allow_nan=False) + "\n"


def _check_finite(data, where=""):
    if isinstance(data, dict):
        for k, v in data.items():
            _check_finite(v, "%s.%s" % (where, k))
    elif isinstance(data, list):
        for i, v in enumerate(data):
            _check_finite(v, "%s[%d]" % (where, i))
    elif isinstance(data, float) and not math.isfinite(data):
        raise SceneFormatError("non-finite number at %s" % where)


def scene_from_dict(data) -> SceneFileModel:
    scene = _validate(SceneFileModel, data, "scene file")
    ids = [p.id for p in scene.persons]
    if len(set(ids)) != len(ids):
        raise SceneFormatError("person ids must be unique")
    return scene


def result_from_dict(data) -> ResultFileModel:
    return _validate(ResultFileModel, data, "result file")


def load_scene(path: str) -> SceneFileModel:
    return scene_from_dict(_load_json(path))


def load_result(path: str) -> ResultFileModel:
    return result_from_dict(_load_json(path))


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneFormatError("%s: parse error at line %d column %d: %s"
                               % (path, exc.lineno, exc.colno, exc.msg))


def save_scene(scene: SceneFileModel, path: str):
    with open(path, "w") as fh:
        fh.write(canonical_json(scene.model_dump()))


def save_result(result: ResultFileModel, path: str):
    data = result.model_dump()
    _check_finite(data)
    with open(path, "w") as fh:
        fh.write(canonical_json(data))


# ---------------------------------------------------------------------------
# geometry export


def _person_geometry(template, person: ResultPersonModel):
    import torch
    theta = torch.tensor(person.theta).reshape(template.joint_count, 3)
    beta = torch.tensor(person.beta)
    joints, points = body_mod.body_points(template, theta, beta)
    t = np.asarray(person.t)
    return points.detach().numpy() + t


def _bone_edges(template):
    """Edges between the joint-marker template points, 0-based."""
    marker = {}
    for idx, (tag, joint) in enumerate(zip(template.point_tags,
                                           template.point_joints)):
        if tag == "joint" and joint not in marker:
            marker[int(joint)] = idx
    edges = []
    for child, parent in enumerate(template.parents):
        if parent >= 0 and child in marker and int(parent) in marker:
            edges.append((marker[int(parent)], marker[child]))
    return edges


def _plane_quad(result: ResultFileModel):
    """Quad on the estimated plane through the mean root projection."""
    if result.scene.normal is None or len(result.persons) == 0:
        return None
    n = np.asarray(result.scene.normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    roots = np.asarray([p.t for p in result.persons])
    offset = float(np.mean(roots @ n))
    centroid = roots.mean(axis=0)
    center = centroid + (offset - centroid @ n) * n
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    spread = roots - center
    half = max(1.0, 1.2 * float(np.abs(spread).max()))
    return np.stack([center + half * (sx * e1 + sy * e2)
                     for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))])


def _write_obj(path, vertices, edges, faces=()):
    lines = ["v %.9f %.9f %.9f" % tuple(v) for v in vertices]
    lines += ["l %d %d" % (a + 1, b + 1) for a, b in edges]
    lines += ["f " + " ".join(str(i + 1) for i in face) for face in faces]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_ply(path, vertices, edges, faces=()):
    header = [
        "ply",
        "format ascii 1.0",
        "comment little-endian host, ascii payload",
        "element vertex %d" % len(vertices),
        "property double x", "property double y", "property double z",
        "element edge %d" % len(edges),
        "property int vertex1", "property int vertex2",
        "element face %d" % len(faces),
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines = header
    lines += ["%.9f %.9f %.9f" % tuple(v) for v in vertices]
    lines += ["%d %d" % e for e in edges]
    lines += ["%d %s" % (len(f), " ".join(str(i) for i in f)) for f in faces]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_geometry(result: ResultFileModel, template, out_dir: str,
                    fmt: str = "obj") -> list[str]:
    """Writes one geometry file per person plus a combined scene file.

    Per-person files hold the M skinned points in world coordinates and
    skeleton edges; the scene file concatenates all persons and adds a
    quad for the estimated ground plane when available. Returns the
    written paths.
    """
    if fmt not in ("obj", "ply"):
        raise SceneFormatError("unsupported export format %r" % fmt)
    writer = _write_obj if fmt == "obj" else _write_ply
    os.makedirs(out_dir, exist_ok=True)
    edges = _bone_edges(template)
    written = []
    all_vertices = []
    all_edges = []
    offset = 0
    for person in result.persons:
        verts = _person_geometry(template, person)
        path = os.path.join(out_dir, "person_%d.%s" % (person.id, fmt))
        writer(path, verts, edges)
        written.append(path)
        all_vertices.append(verts)
        all_edges += [(a + offset, b + offset) for a, b in edges]
        offset += len(verts)
    faces = []
    quad = _plane_quad(result)
    if quad is not None:
        all_vertices.append(quad)
        faces.append(tuple(range(offset, offset + 4)))
    scene_path = os.path.join(out_dir, "scene.%s" % fmt)
    vertices = (np.concatenate(all_vertices) if all_vertices
                else np.zeros((0, 3)))
    writer(scene_path, vertices, all_edges, faces)
    written.append(scene_path)
    return written
