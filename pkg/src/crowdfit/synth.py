"""Synthetic crowd scenes with exact ground truth.

Scenes place upright people with their ankle midpoints exactly on a
known plane, render 2D keypoints through the perspective camera and add
controllable noise. The generator is a pure function of its spec: every
person draws from an independent numpy generator seeded with
(scene seed, person index), so adding a person never shifts the draws
of the others.
"""
from __future__ import annotations

import numpy as np
import torch

from . import body as body_mod
from .camera import BBox, cam_from_translation, project, \
    translation_from_cam
from .errors import DomainError
from .sceneio import (BBoxModel, CamTripleModel, GroundTruthModel,
                      GTPersonModel, PersonObsModel, PerturbSpecModel,
                      PlaneModel, SceneFileModel, SceneSpecModel,
                      ResultPersonModel)

BBOX_PADDING = 0.15
MIN_DEPTH = 0.5
IMAGE_MARGIN = 2.0
MAX_PLACEMENT_ATTEMPTS = 100


def _person_rng(seed: int, person: int, stream: int = 0):
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, person, stream])


def _align_up_rotation(normal: np.ndarray) -> np.ndarray:
    """Axis-angle rotating the body-local up direction (0, -1, 0) onto
    the plane normal."""
    up = np.array([0.0, -1.0, 0.0])
    n = normal / np.linalg.norm(normal)
    c = float(up @ n)
    axis = np.cross(up, n)
    s = float(np.linalg.norm(axis))
    if s < 1e-12:
        if c > 0:
            return np.zeros(3)
        return np.array([0.0, 0.0, np.pi])  # antiparallel: flip about z
    return axis / s * np.arctan2(s, c)


def _plane_frame(normal: np.ndarray, offset: float,
                 anchor_depth: float | None = None):
    """Returns (p0, e1, e2): a visible anchor point on the plane and an
    in-plane orthonormal basis.

    Without anchor_depth the anchor is the plane's intersection with
    the optical axis; with it, the projection of (0, 0, anchor_depth)
    onto the plane, which also covers planes parallel to the axis."""
    n = normal / np.linalg.norm(normal)
    if anchor_depth is not None:
        q = np.array([0.0, 0.0, anchor_depth])
        p0 = q - (n @ q - offset) * n
    else:
        if abs(n[2]) < 1e-6:
            raise DomainError(
                "plane is edge-on to the camera axis; set anchor_depth "
                "to place the crowd")
        p0 = np.array([0.0, 0.0, offset / n[2]])
    if p0[2] <= 0:
        raise DomainError("plane anchor is not in front of the camera")
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 \
        else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return p0, e1, e2


def _sample_person(template, spec: SceneSpecModel, rng):
    theta = np.zeros((template.joint_count, 3))
    theta[0] = _align_up_rotation(np.asarray(spec.plane_normal))
    if spec.sigma_pose > 0:
        # pose noise on articulated joints only; the root stays aligned
        # so the crowd remains upright
        theta[1:] += rng.normal(scale=spec.sigma_pose,
                                size=(template.joint_count - 1, 3))
    beta = rng.normal(scale=spec.sigma_shape, size=template.shape_dim) \
        if spec.sigma_shape > 0 else np.zeros(template.shape_dim)
    return theta, beta


def generate_scene(spec: SceneSpecModel, template=None) -> SceneFileModel:
    """Builds a SceneObservation with a full ground-truth block."""
    if template is None:
        template = body_mod.default_template()
    normal = np.asarray(spec.plane_normal, dtype=np.float64)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise DomainError("plane normal must be unit length")
    intr_scene = SceneFileModel(image_width=spec.image_width,
                                image_height=spec.image_height,
                                focal=spec.focal, persons=[])
    intr = intr_scene.intrinsics()
    p0, e1, e2 = _plane_frame(normal, spec.plane_offset,
                              spec.anchor_depth)
    rm = template.role_map
    la, ra = rm["left_ankle"], rm["right_ankle"]
    kp_map = template.keypoint_map("model24")

    persons, gt_persons = [], []
    for n in range(spec.n_persons):
        rng = _person_rng(spec.seed, n)
        theta, beta = _sample_person(template, spec, rng)
        with torch.no_grad():
            joints_t, points_t = body_mod.body_points(
                template, torch.from_numpy(theta), torch.from_numpy(beta))
        joints = joints_t.numpy()
        points = points_t.numpy()
        ankle_mid = 0.5 * (joints[la] + joints[ra])

        t = None
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            a = rng.uniform(-spec.extent_x, spec.extent_x)
            b = rng.uniform(-spec.extent_depth, spec.extent_depth)
            plane_point = p0 + a * e1 + b * e2
            cand = plane_point - ankle_mid
            if (joints[:, 2] + cand[2]).min() <= MIN_DEPTH:
                continue
            uv = project(joints[kp_map], cand, intr)
            if (uv[:, 0].min() < IMAGE_MARGIN
                    or uv[:, 1].min() < IMAGE_MARGIN
                    or uv[:, 0].max() > spec.image_width - IMAGE_MARGIN
                    or uv[:, 1].max() > spec.image_height - IMAGE_MARGIN):
                continue
            t = cand
            break
        if t is None:
            raise DomainError(
                "could not place person %d inside the image after %d "
                "attempts" % (n, MAX_PLACEMENT_ATTEMPTS))

        uv_clean = project(joints[kp_map], t, intr)
        uv_obs = uv_clean + (rng.normal(scale=spec.sigma_kp,
                                        size=uv_clean.shape)
                             if spec.sigma_kp > 0 else 0.0)
        lo = uv_obs.min(axis=0)
        hi = uv_obs.max(axis=0)
        span = np.maximum(hi - lo, 1.0)
        w, h = span * (1.0 + 2.0 * BBOX_PADDING)
        cx, cy = (lo + hi) / 2.0
        persons.append(PersonObsModel(
            id=n,
            bbox=BBoxModel(cx_abs=float(cx), cy_abs=float(cy),
                           w=float(w), h=float(h)),
            score=1.0,
            keypoints=[[float(u), float(v), 1.0] for u, v in uv_obs],
            layout="model24"))
        gt_persons.append(GTPersonModel(
            id=n, theta=theta.reshape(-1).tolist(), beta=beta.tolist(),
            t=t.tolist(), joints3d=joints.tolist(),
            vertices3d=points.tolist()))

    return SceneFileModel(
        image_width=spec.image_width, image_height=spec.image_height,
        focal=spec.focal, focal_fallback_applied=spec.focal is None,
        persons=persons,
        ground_truth=GroundTruthModel(
            persons=gt_persons,
            plane=PlaneModel(normal=normal.tolist(),
                             offset=spec.plane_offset)))


def _bbox_of(person: PersonObsModel) -> BBox:
    return BBox(center_x=person.bbox.cx_abs, center_y=person.bbox.cy_abs,
                width=person.bbox.w, height=person.bbox.h)


def gt_estimates(scene: SceneFileModel) -> list[ResultPersonModel]:
    """Ground-truth parameters re-expressed as person estimates, with
    the camera triple recovered from the stored translation."""
    if scene.ground_truth is None:
        raise DomainError("scene has no ground-truth block")
    intr = scene.intrinsics()
    obs_by_id = {p.id: p for p in scene.persons}
    out = []
    for gt in scene.ground_truth.persons:
        box = _bbox_of(obs_by_id[gt.id])
        cam = cam_from_translation(tuple(gt.t), box, intr)
        out.append(ResultPersonModel(
            id=gt.id, theta=list(gt.theta), beta=list(gt.beta),
            cam=CamTripleModel(f_c=cam.f_c, t_x=cam.t_x, t_y=cam.t_y),
            t=list(gt.t), flags=[]))
    return out


def perturb_estimates(estimates: list[ResultPersonModel],
                      scene: SceneFileModel,
                      spec: PerturbSpecModel) -> list[ResultPersonModel]:
    """Adds Gaussian jitter to depth, pose and shape.

    Depth jitter moves t_Z while keeping t_X and t_Y, re-expressed
    through the crop camera so the lifted translation stays consistent.
    Jitter that would push t_Z below 0.1 m is clamped and flagged.
    """
    intr = scene.intrinsics()
    obs_by_id = {p.id: p for p in scene.persons}
    out = []
    for n, est in enumerate(estimates):
        rng = _person_rng(spec.seed, n, stream=1)
        flags = list(est.flags)
        box = _bbox_of(obs_by_id[est.id])
        t = np.asarray(est.t, dtype=np.float64)
        if spec.sigma_z > 0:
            t_z = t[2] + rng.normal(scale=spec.sigma_z)
            if t_z <= 0.1:
                t_z = 0.1
                flags.append("depth_clamped")
            t = np.array([t[0], t[1], t_z])
        theta = np.asarray(est.theta) + (
            rng.normal(scale=spec.sigma_theta, size=len(est.theta))
            if spec.sigma_theta > 0 else 0.0)
        beta = np.asarray(est.beta) + (
            rng.normal(scale=spec.sigma_beta, size=len(est.beta))
            if spec.sigma_beta > 0 else 0.0)
        cam = cam_from_translation(tuple(t), box, intr)
        lifted = translation_from_cam(cam.f_c, cam.t_x, cam.t_y, box, intr)
        out.append(ResultPersonModel(
            id=est.id, theta=theta.tolist(), beta=beta.tolist(),
            cam=CamTripleModel(f_c=cam.f_c, t_x=cam.t_x, t_y=cam.t_y),
            t=list(lifted), flags=flags))
    return out
