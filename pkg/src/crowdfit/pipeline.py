"""Two-stage crowd reconstruction.

Stage 1 fits each person independently to their 2D keypoints
(reprojection plus a weak zero-pose/zero-shape regularizer standing in
for a learned prior). Stage 2 jointly refines all people with the
crowd objective: plane-spread penalty, 2D keypoint fit and an anchor to
the stage-1 initialization. The published deviation: the original
method optimizes backbone network weights; here the per-person body
parameters are optimized directly, with the init anchor carrying the
prior role.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import body as body_mod
from . import diffutil, losses
from .body import POSE_DIM, canonicalize_pose
from .camera import BBox
from .errors import ConfigurationError, EvaluationError
from .optim import AdamWConfig, minimize
from .sceneio import (CamTripleModel, IterEntryModel, PersonObsModel,
                      ResultFileModel, ResultPersonModel, ResultSceneModel,
                      SceneFileModel, GTPersonModel)

DEVIATION_NOTE = ("crowd stage optimizes per-person body parameters "
                  "directly; the init anchor replaces the prior that "
                  "frozen network weights would carry")
DEPTH_EPS = 1e-6


@dataclass
class FitConfig:
    # crowd stage (published defaults)
    iters: int = 260
    batch_size: int = 50
    lr: float = 1e-5
    lr_min: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    threshold: float = 0.23
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    # stage-1 initializer
    stage1_iters: int = 500
    stage1_lr: float = 0.05
    rho_theta: float = 0.01
    rho_beta: float = 0.1
    person_height: float = 1.7
    min_confident_keypoints: int = 4
    # supervised fitting (parameter-recovery exercises)
    supervised_iters: int = 500
    supervised_lr: float = 0.01
    # behavior switches
    no_crowd: bool = False
    raw_pixel_keyp: bool = False
    detach_normal: bool = False
    per_batch_normal: bool = False
    freeze_normal_every: int = 1   # recompute the plane normal every N steps
    literal_init_loss: bool = False
    seed: int = 0

    def adamw(self, iters: int, lr: float) -> AdamWConfig:
        return AdamWConfig(beta1=self.beta1, beta2=self.beta2,
                           weight_decay=self.weight_decay,
                           lr_max=lr, lr_min=self.lr_min, total_steps=iters)

    def echo(self) -> dict:
        return asdict(self)


class SceneSetup:
    """Constant per-scene tensors shared by the objective closures."""

    def __init__(self, scene: SceneFileModel, template, config: FitConfig):
        self.scene = scene
        self.template = template
        self.config = config
        self.intr = scene.intrinsics()
        self.persons = sorted(scene.persons, key=lambda p: p.id)
        self.n = len(self.persons)
        layouts = {p.layout for p in self.persons}
        if len(layouts) > 1:
            raise ConfigurationError(
                "persons mix keypoint layouts: %s" % sorted(layouts))
        self.layout = layouts.pop() if layouts else "model24"
        self.kp_map = torch.from_numpy(template.keypoint_map(self.layout))

        self.boxes = [BBox(center_x=p.bbox.cx_abs, center_y=p.bbox.cy_abs,
                           width=p.bbox.w, height=p.bbox.h)
                      for p in self.persons]
        self.d = torch.tensor([b.size for b in self.boxes])
        offs = [b.center_offset(self.intr) for b in self.boxes]
        self.c_x = torch.tensor([o[0] for o in offs])
        self.c_y = torch.tensor([o[1] for o in offs])
        kp = np.asarray([p.keypoints for p in self.persons],
                        dtype=np.float64).reshape(self.n, -1, 3)
        self.obs_uv = torch.from_numpy(kp[..., :2].copy())
        self.conf = torch.from_numpy(np.clip(kp[..., 2], 0.0, 1.0).copy())
        self.n_confident = (self.conf > 0).sum(dim=-1)
        self.eligible = self.n_confident >= config.min_confident_keypoints

        rm = template.role_map
        self.head_idx = rm["head_top"]
        self.la, self.ra = rm["left_ankle"], rm["right_ankle"]

    def lift(self, cam: torch.Tensor) -> torch.Tensor:
        """Crop cameras (..., N, 3) to absolute translations (..., N, 3)."""
        f_c, t_x, t_y = cam[..., 0], cam[..., 1], cam[..., 2]
        den = self.d * f_c
        return torch.stack([t_x + 2.0 * self.c_x / den,
                            t_y + 2.0 * self.c_y / den,
                            2.0 * self.intr.focal / den], dim=-1)

    def project(self, points: torch.Tensor, t: torch.Tensor):
        """Masked projection; returns (uv, depth_ok) with clamped depth
        so evaluation continues when a person dips behind the camera."""
        p = points + t[..., None, :]
        z = p[..., 2]
        ok = z > DEPTH_EPS
        z = torch.clamp(z, min=DEPTH_EPS)
        cx, cy = self.intr.principal
        uv = torch.stack([cx + self.intr.focal * p[..., 0] / z,
                          cy + self.intr.focal * p[..., 1] / z], dim=-1)
        return uv, ok

    def forward(self, x: torch.Tensor, flagged: set | None = None):
        """Shared differentiable pipeline from a packed parameter vector
        to world joints, projected keypoints and per-joint validity."""
        theta, beta, cam = diffutil.unpack(x, self.n)
        joints, _, _ = body_mod.forward_kinematics(self.template, theta, beta)
        t = self.lift(cam)
        pred_uv, ok = self.project(joints[..., self.kp_map, :], t)
        if flagged is not None and x.dim() == 1 and not bool(ok.all()):
            flagged.update(int(i) for i in
                           (~ok).any(dim=-1).nonzero().reshape(-1))
        return theta, beta, joints, t, pred_uv, ok


def default_estimate(setup: SceneSetup, index: int):
    """Rest-pose initialization on the ray through the bounding box."""
    box = setup.boxes[index]
    t_z0 = setup.intr.focal * setup.config.person_height / box.size
    f_c0 = 2.0 * setup.intr.focal / (box.size * t_z0)
    theta = np.zeros(POSE_DIM)
    beta = np.zeros(setup.template.shape_dim)
    return diffutil.pack_person(theta, beta, f_c0, 0.0, 0.0)


def pack_estimates(estimates: list[ResultPersonModel]) -> np.ndarray:
    return np.concatenate([
        diffutil.pack_person(e.theta, e.beta, e.cam.f_c, e.cam.t_x, e.cam.t_y)
        for e in estimates])


def _person_model(setup: SceneSetup, person_id: int, x85: np.ndarray,
                  flags: list[str]) -> ResultPersonModel:
    theta = canonicalize_pose(x85[:POSE_DIM])
    beta = x85[POSE_DIM:POSE_DIM + 10]
    f_c, t_x, t_y = x85[POSE_DIM + 10:]
    idx = next(i for i, p in enumerate(setup.persons) if p.id == person_id)
    box = setup.boxes[idx]
    c_x, c_y = box.center_offset(setup.intr)
    den = box.size * f_c
    t = [t_x + 2.0 * c_x / den, t_y + 2.0 * c_y / den,
         2.0 * setup.intr.focal / den]
    return ResultPersonModel(
        id=person_id, theta=theta.tolist(), beta=beta.tolist(),
        cam=CamTripleModel(f_c=float(f_c), t_x=float(t_x), t_y=float(t_y)),
        t=[float(v) for v in t], flags=flags)


# ---------------------------------------------------------------------------
# stage 1: per-person initialization fitting


def make_stage1_objective(setup: SceneSetup, indices: np.ndarray):
    """Sum over the selected persons of the initializer objective:
    l1 * reproj + rho_theta * |theta_1:|^2 + rho_beta * |beta|^2."""
    cfg = setup.config
    w = cfg.weights
    idx = torch.from_numpy(indices)
    obs = setup.obs_uv[idx]
    conf = setup.conf[idx]
    d = setup.d[idx]
    sub = _SubScene(setup, indices)

    def objective(x: torch.Tensor) -> torch.Tensor:
        theta, beta, cam = diffutil.unpack(x, len(indices))
        joints, _, _ = body_mod.forward_kinematics(setup.template, theta,
                                                   beta)
        t = sub.lift(cam)
        pred_uv, ok = setup.project(joints[..., setup.kp_map, :], t)
        conf_eff = conf * ok
        reproj = losses.weighted_reproj(pred_uv, obs, conf_eff, d)
        reg = (cfg.rho_theta
               * (theta[..., 1:, :] ** 2).sum(dim=(-1, -2))
               + cfg.rho_beta * (beta ** 2).sum(dim=-1))
        return (w.l1 * reproj + reg).sum(dim=-1)

    return objective


class _SubScene:
    """Translation lifting restricted to a subset of persons."""

    def __init__(self, setup: SceneSetup, indices: np.ndarray):
        idx = torch.from_numpy(indices)
        self.d = setup.d[idx]
        self.c_x = setup.c_x[idx]
        self.c_y = setup.c_y[idx]
        self.focal = setup.intr.focal

    def lift(self, cam: torch.Tensor) -> torch.Tensor:
        f_c, t_x, t_y = cam[..., 0], cam[..., 1], cam[..., 2]
        den = self.d * f_c
        return torch.stack([t_x + 2.0 * self.c_x / den,
                            t_y + 2.0 * self.c_y / den,
                            2.0 * self.focal / den], dim=-1)


def init_fit(scene: SceneFileModel, template=None,
             config: FitConfig | None = None):
    """Stage-1 fit for every person; returns (estimates, log entries).

    Persons with fewer than `min_confident_keypoints` confident
    keypoints are returned at the rest-pose default and flagged."""
    template = template or body_mod.default_template()
    config = config or FitConfig()
    setup = SceneSetup(scene, template, config)
    fit_idx = np.flatnonzero(setup.eligible.numpy())
    estimates: dict[int, ResultPersonModel] = {}
    log: list[IterEntryModel] = []

    if fit_idx.size:
        objective = make_stage1_objective(setup, fit_idx)
        x0 = np.concatenate([default_estimate(setup, i) for i in fit_idx])
        res = minimize(diffutil.value_and_grad(objective), x0,
                       config.adamw(config.stage1_iters, config.stage1_lr))
        if res.error is not None:
            ids = [setup.persons[i].id for i in fit_idx]
            raise EvaluationError(
                "stage-1 fit failed for persons %s: %s" % (ids, res.error))
        log = [IterEntryModel(stage="stage1", step=e.step, lr=e.lr,
                              objective=e.objective)
               for e in res.trajectory]
        for k, i in enumerate(fit_idx):
            x85 = res.best_x[k * diffutil.PER_PERSON:
                             (k + 1) * diffutil.PER_PERSON]
            estimates[setup.persons[i].id] = _person_model(
                setup, setup.persons[i].id, x85, flags=[])

    for i, person in enumerate(setup.persons):
        if person.id not in estimates:
            estimates[person.id] = _person_model(
                setup, person.id, default_estimate(setup, i),
                flags=["low_confidence"])
    ordered = [estimates[p.id] for p in setup.persons]
    return ordered, log


# ---------------------------------------------------------------------------
# supervised objective fitting (single person with full ground truth)


def supervised_fit(person: PersonObsModel, gt: GTPersonModel,
                   scene: SceneFileModel, template=None,
                   config: FitConfig | None = None,
                   start: ResultPersonModel | None = None):
    """Minimizes the full supervised objective for one person."""
    template = template or body_mod.default_template()
    config = config or FitConfig()
    sub_scene = scene.model_copy(update={"persons": [person]})
    setup = SceneSetup(sub_scene, template, config)
    w = config.weights

    gt_theta = torch.tensor(gt.theta)
    gt_beta = torch.tensor(gt.beta)
    gt_joints = torch.tensor(gt.joints3d)
    gt_verts = torch.tensor(gt.vertices3d)
    obs, conf, d = setup.obs_uv[0], setup.conf[0], setup.d[0]
    sub = _SubScene(setup, np.array([0]))

    def objective(x: torch.Tensor) -> torch.Tensor:
        theta, beta, cam = diffutil.unpack(x, 1)
        joints, points = body_mod.body_points(setup.template, theta, beta)
        t = sub.lift(cam)
        pred_uv, ok = setup.project(joints[..., setup.kp_map, :], t)
        reproj = losses.weighted_reproj(pred_uv, obs, conf * ok, d)
        l_smpl, l_joint, l_verts = losses.supervised_param_losses(
            theta.reshape(*theta.shape[:-2], -1), beta, joints, points,
            gt_theta, gt_beta, gt_joints, gt_verts)
        total = losses.supervised_total(reproj, l_smpl, l_joint, l_verts, w)
        return total.squeeze(-1)

    if start is not None:
        x0 = diffutil.pack_person(start.theta, start.beta, start.cam.f_c,
                                  start.cam.t_x, start.cam.t_y)
    else:
        x0 = default_estimate(setup, 0)
    res = minimize(diffutil.value_and_grad(objective), x0,
                   config.adamw(config.supervised_iters,
                                config.supervised_lr))
    if res.error is not None:
        raise EvaluationError("supervised fit failed for person %d: %s"
                              % (person.id, res.error))
    return _person_model(setup, person.id, res.best_x, flags=[])


# ---------------------------------------------------------------------------
# stage 2: crowd-constrained refinement


def make_crowd_objective(setup: SceneSetup, base: torch.Tensor,
                         free_idx: np.ndarray,
                         init_theta: torch.Tensor, init_beta: torch.Tensor,
                         eligible_idx: torch.Tensor,
                         normal_holder: dict | None = None,
                         flagged: set | None = None):
    """Crowd-stage objective over the free parameter slice.

    base holds the full packed scene parameters; coordinates listed in
    free_idx are replaced by the objective argument. The plane normal is
    recomputed from current world joints unless normal_holder carries a
    frozen value.
    """
    cfg = setup.config
    w = cfg.weights
    free = torch.from_numpy(free_idx)

    def objective(x_sub: torch.Tensor) -> torch.Tensor:
        batch_shape = x_sub.shape[:-1]
        full = base.expand(*batch_shape, base.shape[-1]).clone()
        full[..., free] = x_sub
        theta, beta, joints, t, pred_uv, ok = setup.forward(full, flagged)

        heads = joints[..., setup.head_idx, :] + t
        ankles = 0.5 * (joints[..., setup.la, :]
                        + joints[..., setup.ra, :]) + t
        if normal_holder is not None and normal_holder["value"] is not None:
            normal = normal_holder["value"]
        else:
            normal = losses.estimate_plane_normal(
                heads[..., eligible_idx, :], ankles[..., eligible_idx, :],
                check=False)
            if cfg.detach_normal:
                normal = normal.detach()
        l_crowd = losses.crowd_loss(t[..., eligible_idx, :], normal)
        l_keyp = losses.keyp_loss(pred_uv, setup.obs_uv, setup.conf * ok,
                                  setup.d,
                                  normalize_box=not cfg.raw_pixel_keyp)
        theta_flat = theta.reshape(*theta.shape[:-3], setup.n, POSE_DIM)
        l_init = losses.init_loss(
            theta_flat, beta, init_theta, init_beta, w,
            crowd_value=l_crowd if cfg.literal_init_loss else None)
        return losses.crowd_total(l_crowd, l_keyp, l_init, w)

    return objective


def crowd_refine(scene: SceneFileModel, inits: list[ResultPersonModel],
                 template=None, config: FitConfig | None = None):
    """Joint refinement of all persons in id-ordered batches.

    Returns (estimates, scene block). The plane normal and spread are
    always computed over the whole scene's eligible persons unless
    per_batch_normal restricts them to the active batch.
    """
    template = template or body_mod.default_template()
    config = config or FitConfig()
    setup = SceneSetup(scene, template, config)
    inits = sorted(inits, key=lambda e: e.id)
    if [e.id for e in inits] != [p.id for p in setup.persons]:
        raise ConfigurationError("inits do not match scene persons")

    x_full = pack_estimates(inits)
    init_theta = torch.tensor([e.theta for e in inits])
    init_beta = torch.tensor([e.beta for e in inits])
    eligible_all = torch.from_numpy(
        np.flatnonzero(setup.eligible.numpy()))
    flagged: set[int] = set()
    log: list[IterEntryModel] = []

    person_indices = np.arange(setup.n)
    batches = [person_indices[i:i + config.batch_size]
               for i in range(0, setup.n, config.batch_size)]
    step_offset = 0
    for batch in batches:
        free_idx = np.concatenate(
            [np.arange(diffutil.PER_PERSON) + diffutil.PER_PERSON * p
             for p in batch])
        base = torch.from_numpy(x_full.copy())
        if config.per_batch_normal:
            eligible_idx = torch.from_numpy(np.intersect1d(
                eligible_all.numpy(), batch))
        else:
            eligible_idx = eligible_all
        if eligible_idx.numel() == 0:
            eligible_idx = torch.from_numpy(batch)

        holder = None
        callback = None
        if config.freeze_normal_every > 1 and not config.detach_normal:
            holder = {"value": None}
            current = {"x": x_full.copy()}

            def refresh(xcur):
                with torch.no_grad():
                    theta, beta, cam = diffutil.unpack(
                        torch.from_numpy(xcur), setup.n)
                    joints, _, _ = body_mod.forward_kinematics(
                        setup.template, theta, beta)
                    t = setup.lift(cam)
                    heads = joints[..., setup.head_idx, :] + t
                    ankles = 0.5 * (joints[..., setup.la, :]
                                    + joints[..., setup.ra, :]) + t
                    holder["value"] = losses.estimate_plane_normal(
                        heads[eligible_idx], ankles[eligible_idx],
                        check=False)

            refresh(x_full)

            def callback(step, x_sub, _refresh=refresh, _free=free_idx):
                if (step + 1) % config.freeze_normal_every == 0:
                    current["x"][_free] = x_sub
                    _refresh(current["x"])

        objective = make_crowd_objective(
            setup, base, free_idx, init_theta, init_beta, eligible_idx,
            normal_holder=holder, flagged=flagged)
        res = minimize(diffutil.value_and_grad(objective), x_full[free_idx],
                       config.adamw(config.iters, config.lr),
                       callback=callback)
        if res.error is not None:
            ids = [setup.persons[p].id for p in batch]
            raise EvaluationError(
                "crowd refinement failed on batch %s: %s" % (ids, res.error))
        x_full[free_idx] = res.best_x
        log += [IterEntryModel(stage="crowd", step=e.step + step_offset,
                               lr=e.lr, objective=e.objective)
                for e in res.trajectory]
        step_offset += config.iters + 1

    scene_block = _final_scene_block(setup, x_full, init_theta, init_beta,
                                     eligible_all, log)
    estimates = []
    for i, person in enumerate(setup.persons):
        x85 = x_full[i * diffutil.PER_PERSON:(i + 1) * diffutil.PER_PERSON]
        flags = list(inits[i].flags)
        if not bool(setup.eligible[i]):
            flags.append("excluded_from_plane")
        if i in flagged:
            flags.append("depth_masked")
        estimates.append(_person_model(setup, person.id, x85, flags))
    return estimates, scene_block


def _final_scene_block(setup: SceneSetup, x_full: np.ndarray,
                       init_theta, init_beta, eligible_idx,
                       log) -> ResultSceneModel:
    cfg = setup.config
    w = cfg.weights
    with torch.no_grad():
        theta, beta, joints, t, pred_uv, ok = setup.forward(
            torch.from_numpy(x_full.copy()))
        heads = joints[..., setup.head_idx, :] + t
        ankles = 0.5 * (joints[..., setup.la, :] + joints[..., setup.ra, :]) \
            + t
        normal = None
        l_crowd = torch.tensor(0.0)
        if eligible_idx.numel() > 0:
            normal = losses.estimate_plane_normal(
                heads[eligible_idx], ankles[eligible_idx], check=False)
            l_crowd = losses.crowd_loss(t[eligible_idx], normal)
        l_keyp = losses.keyp_loss(pred_uv, setup.obs_uv, setup.conf * ok,
                                  setup.d,
                                  normalize_box=not cfg.raw_pixel_keyp)
        theta_flat = theta.reshape(setup.n, -1)
        l_init = losses.init_loss(theta_flat, beta, init_theta, init_beta, w,
                                  crowd_value=(l_crowd if
                                               cfg.literal_init_loss
                                               else None))
        total = losses.crowd_total(l_crowd, l_keyp, l_init, w)
    return ResultSceneModel(
        normal=None if normal is None else [float(v) for v in normal],
        loss_breakdown={"crowd": float(l_crowd), "keyp": float(l_keyp),
                        "init": float(l_init), "total": float(total)},
        iteration_log=log)


# ---------------------------------------------------------------------------
# full pipeline


def filter_detections(scene: SceneFileModel,
                      threshold: float = 0.23) -> SceneFileModel:
    """Keeps persons with detection score >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError("threshold must lie in [0, 1]")
    kept = [p for p in scene.persons if p.score >= threshold]
    kept_ids = {p.id for p in kept}
    gt = scene.ground_truth
    if gt is not None:
        gt = gt.model_copy(update={
            "persons": [g for g in gt.persons if g.id in kept_ids]})
    return scene.model_copy(update={"persons": kept, "ground_truth": gt})


def reconstruct(scene: SceneFileModel, template=None,
                config: FitConfig | None = None) -> ResultFileModel:
    """filter -> per-person init fit -> crowd refinement."""
    template = template or body_mod.default_template()
    config = config or FitConfig()
    filtered = filter_detections(scene, config.threshold)
    notes = [DEVIATION_NOTE]
    if filtered.intrinsics().focal_is_fallback:
        notes.append("focal length absent; image-diagonal fallback applied")

    if not filtered.persons:
        return ResultFileModel(
            config=config.echo(), persons=[],
            scene=ResultSceneModel(),
            notes=notes + ["warning: no persons above detection threshold"])

    inits, stage1_log = init_fit(filtered, template, config)
    if config.no_crowd:
        setup = SceneSetup(filtered, template, config)
        x_full = pack_estimates(sorted(inits, key=lambda e: e.id))
        eligible_idx = torch.from_numpy(np.flatnonzero(
            setup.eligible.numpy()))
        init_theta = torch.tensor([e.theta for e in inits])
        init_beta = torch.tensor([e.beta for e in inits])
        scene_block = _final_scene_block(setup, x_full, init_theta,
                                         init_beta, eligible_idx, stage1_log)
        return ResultFileModel(config=config.echo(), persons=inits,
                               scene=scene_block, notes=notes)

    estimates, scene_block = crowd_refine(filtered, inits, template, config)
    scene_block.iteration_log = stage1_log + scene_block.iteration_log
    return ResultFileModel(config=config.echo(), persons=estimates,
                           scene=scene_block, notes=notes)
