"""Evaluation: OKS, 3D joint errors and plane-consistency diagnostics."""
from __future__ import annotations

import math

import numpy as np
import torch

from . import body as body_mod
from .camera import project
from .errors import DomainError
from .sceneio import (DepthErrorModel, EvalReportModel, ResultFileModel,
                      SceneFileModel)

# Standard 17-keypoint per-keypoint constants (nose, eyes, ears,
# shoulders, elbows, wrists, hips, knees, ankles).
COCO17_K = np.array([0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079,
                     0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087,
                     0.087, 0.089, 0.089])
UNIFORM_K = 0.08


def keypoint_constants(layout: str, count: int) -> np.ndarray:
    if layout == "coco17" and count == 17:
        return COCO17_K.copy()
    return np.full(count, UNIFORM_K)


def oks(pred2d, gt2d, visibility, scale_sq, k=None,
        layout: str = "model24") -> float:
    """Object keypoint similarity in [0, 1].

    Mean over visible keypoints of exp(-d_i^2 / (2 s^2 k_i^2)) with
    s^2 the object scale area. Raises on zero visible keypoints.
    """
    pred2d = np.asarray(pred2d, dtype=np.float64)
    gt2d = np.asarray(gt2d, dtype=np.float64)
    vis = np.asarray(visibility, dtype=bool)
    if not vis.any():
        raise DomainError("OKS undefined with zero visible keypoints")
    if scale_sq <= 0:
        raise DomainError("OKS scale area must be positive")
    if k is None:
        k = keypoint_constants(layout, len(vis))
    k = np.asarray(k, dtype=np.float64)
    d_sq = ((pred2d - gt2d) ** 2).sum(axis=-1)
    e = np.exp(-d_sq / (2.0 * scale_sq * k * k))
    return float(e[vis].mean())


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in millimeters."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DomainError("joint sets must have equal shapes")
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 1000.0)


def similarity_align(pred, gt):
    """Optimal similarity (rotation + scale + translation) alignment of
    pred onto gt. Returns (aligned, degenerate_flag); a degenerate
    all-coincident pred falls back to translation only."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xp = pred - mu_p
    xg = gt - mu_g
    var_p = (xp ** 2).sum()
    if var_p < 1e-15:
        return pred - mu_p + mu_g, True
    cov = xg.T @ xp / pred.shape[0]
    u, s, vt = np.linalg.svd(cov)
    sign = np.eye(3)
    sign[2, 2] = np.sign(np.linalg.det(u @ vt))
    rot = u @ sign @ vt
    scale = (s * np.diag(sign)).sum() * pred.shape[0] / var_p
    return scale * xp @ rot.T + mu_g, False


def pa_mpjpe(pred, gt) -> float:
    """MPJPE after Procrustes similarity alignment, millimeters."""
    aligned, _ = similarity_align(pred, gt)
    return mpjpe(aligned, gt)


def angle_between_deg(a, b) -> float:
    """Unsigned angle between two directions, ignoring orientation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-15 or nb < 1e-15:
        raise DomainError("cannot measure the angle of a zero vector")
    c = abs(float(a @ b) / (na * nb))
    return math.degrees(math.acos(min(1.0, c)))


def plane_report(roots, normal, gt_plane_normal=None):
    """(residual std in meters, normal angle error in degrees).

    Unlike the raw crowd penalty, the normal is unit-normalized here so
    the residual spread carries meter units.
    """
    roots = np.asarray(roots, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    std = float(np.std(roots @ n)) if len(roots) >= 2 else None
    angle = None
    if gt_plane_normal is not None:
        angle = angle_between_deg(n, gt_plane_normal)
    return std, angle


def _world_joints(template, person):
    theta = torch.tensor(person.theta).reshape(template.joint_count, 3)
    beta = torch.tensor(person.beta)
    with torch.no_grad():
        joints, _, _ = body_mod.forward_kinematics(template, theta, beta)
    return joints.numpy(), np.asarray(person.t)


def evaluate(scene: SceneFileModel, result: ResultFileModel,
             template=None) -> EvalReportModel:
    """Scores a result against a scene's observations and ground truth.

    OKS compares reprojected model keypoints against clean ground-truth
    2D keypoints when a ground-truth block is present (reconstructed by
    projecting the stored 3D joints), else against the observed ones.
    """
    template = template or body_mod.default_template()
    intr = scene.intrinsics()
    obs_by_id = {p.id: p for p in scene.persons}
    gt_by_id = {} if scene.ground_truth is None else \
        {p.id: p for p in scene.ground_truth.persons}

    per_oks: dict[str, float | None] = {}
    mpjpes, pa_mpjpes, depth_errs, roots = [], [], [], []
    for person in result.persons:
        obs = obs_by_id.get(person.id)
        joints, t = _world_joints(template, person)
        roots.append(t)
        if obs is None:
            per_oks[str(person.id)] = None
            continue
        kp_map = template.keypoint_map(obs.layout)
        gt = gt_by_id.get(person.id)
        if gt is not None:
            target = project(np.asarray(gt.joints3d)[kp_map],
                             np.asarray(gt.t), intr)
            vis = np.ones(len(kp_map), dtype=bool)
        else:
            kp = np.asarray(obs.keypoints)
            target = kp[:, :2]
            vis = kp[:, 2] > 0
        pred = project(joints[kp_map], t, intr)
        scale_sq = obs.bbox.w * obs.bbox.h
        try:
            per_oks[str(person.id)] = oks(pred, target, vis, scale_sq,
                                          layout=obs.layout)
        except DomainError:
            per_oks[str(person.id)] = None
        if gt is not None:
            mpjpes.append(mpjpe(joints, np.asarray(gt.joints3d)))
            pa_mpjpes.append(pa_mpjpe(joints, np.asarray(gt.joints3d)))
            depth_errs.append(abs(t[2] - gt.t[2]))

    oks_values = [v for v in per_oks.values() if v is not None]
    std, angle = None, None
    if result.scene.normal is not None and len(roots) >= 2:
        gt_normal = None
        if scene.ground_truth is not None and \
                scene.ground_truth.plane is not None:
            gt_normal = scene.ground_truth.plane.normal
        std, angle = plane_report(np.asarray(roots), result.scene.normal,
                                  gt_normal)
    depth = None
    if depth_errs:
        arr = np.asarray(depth_errs)
        depth = DepthErrorModel(mean_abs=float(arr.mean()),
                                median_abs=float(np.median(arr)),
                                max_abs=float(arr.max()))
    return EvalReportModel(
        per_person_oks=per_oks,
        mean_oks=float(np.mean(oks_values)) if oks_values else None,
        mpjpe_mm=float(np.mean(mpjpes)) if mpjpes else None,
        pa_mpjpe_mm=float(np.mean(pa_mpjpes)) if pa_mpjpes else None,
        plane_residual_std_m=std,
        normal_angle_error_deg=angle,
        depth_error=depth)
