"""Acceptance suite: nine quantitative checks on the full system.

Run with `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line
per criterion.
"""
import json
import time

import numpy as np
import pytest
import torch

from crowdfit import body as body_mod
from crowdfit import diffutil, losses, synth
from crowdfit.camera import BBox, Intrinsics, cam_from_translation, \
    translation_from_cam
from crowdfit.cli import main
from crowdfit.metrics import evaluate, mpjpe, oks, pa_mpjpe
from crowdfit.optim import AdamWConfig, AdamWState, adamw_step, cosine_lr, \
    minimize
from crowdfit.pipeline import FitConfig, crowd_refine, supervised_fit
from crowdfit.sceneio import (PerturbSpecModel, ResultFileModel,
                              ResultSceneModel, canonical_json,
                              scene_from_dict)

from _objectives import all_objectives, packed_ground_truth, \
    perturbed_point, scene_setup
from conftest import far_spec, near_spec, gt_roots, plane_std


def _report(num, ok, detail):
    print("CRITERION %d: %s — %s" % (num, "PASS" if ok else "FAIL", detail))
    assert ok, "criterion %d failed: %s" % (num, detail)


def test_criterion_1_camera_round_trip():
    rng = np.random.default_rng(0)
    intr = Intrinsics(image_width=1920, image_height=1080, focal=1200.0)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(10_000):
        t = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20),
                      rng.uniform(1.0, 200.0)])
        box = BBox(center_x=rng.uniform(0, 1920),
                   center_y=rng.uniform(0, 1080),
                   width=rng.uniform(10, 800), height=rng.uniform(10, 800))
        cam = cam_from_translation(t, box, intr)
        back = np.array(translation_from_cam(cam.f_c, cam.t_x, cam.t_y,
                                             box, intr))
        worst = max(worst, np.max(np.abs(back - t)) / np.linalg.norm(t))
    elapsed = time.monotonic() - t0
    _report(1, worst < 1e-9 and elapsed < 1.0,
            "max rel err %.2e over 10k round trips in %.2fs"
            % (worst, elapsed))


def test_criterion_2_gradient_suite():
    scene = synth.generate_scene(near_spec(3))
    setup = scene_setup(scene)
    x0 = packed_ground_truth(scene)
    objectives = all_objectives(setup, scene, x0)
    t0 = time.monotonic()
    worst = 0.0
    points = [perturbed_point(scene, seed=s) for s in range(20)]
    for fn in objectives.values():
        for x in points:
            worst = max(worst, diffutil.check_gradient(fn, x))
    elapsed = time.monotonic() - t0
    _report(2, worst < 1e-4 and elapsed < 30.0,
            "max FD rel err %.2e across %d objectives x 20 points in %.1fs"
            % (worst, len(objectives), elapsed))


def _estimated_normal(scene, template):
    rm = template.role_map
    heads, ankles = [], []
    for gt in scene.ground_truth.persons:
        joints = np.asarray(gt.joints3d) + np.asarray(gt.t)
        heads.append(joints[rm["head_top"]])
        ankles.append(0.5 * (joints[rm["left_ankle"]]
                             + joints[rm["right_ankle"]]))
    return losses.estimate_plane_normal(
        torch.tensor(np.array(heads)), torch.tensor(np.array(ankles))).numpy()


def _angle_deg(a, b):
    cos = abs(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(np.degrees(np.arccos(min(cos, 1.0))))


def test_criterion_3_plane_normal_recovery(template):
    angles = {}
    for n in (5, 50):
        scene = synth.generate_scene(far_spec(n, sigma_pose=0.0))
        angles["N=%d clean" % n] = _angle_deg(
            _estimated_normal(scene, template),
            scene.ground_truth.plane.normal)
    noisy = synth.generate_scene(far_spec(50, sigma_pose=0.15))
    angles["N=50 noisy"] = _angle_deg(_estimated_normal(noisy, template),
                                      noisy.ground_truth.plane.normal)
    ok = (angles["N=5 clean"] < 5.0 and angles["N=50 clean"] < 5.0
          and angles["N=50 noisy"] < 10.0)
    _report(3, ok, ", ".join("%s: %.2f deg" % kv for kv in angles.items()))


def test_criterion_4_depth_disambiguation(acceptance_scene,
                                          acceptance_perturbed,
                                          acceptance_refined, template):
    scene = acceptance_scene
    gts, pert = acceptance_perturbed
    ests, block, elapsed = acceptance_refined
    normal = np.asarray(scene.ground_truth.plane.normal)

    std_before = plane_std([p.t for p in pert], normal)
    std_after = plane_std([e.t for e in ests], normal)
    gz = {g.id: g.t[2] for g in scene.ground_truth.persons}
    err_before = np.mean([abs(p.t[2] - gz[p.id]) for p in pert])
    err_after = np.mean([abs(e.t[2] - gz[e.id]) for e in ests])
    result = ResultFileModel(config=FitConfig().echo(), persons=ests,
                             scene=block)
    mean_oks = evaluate(scene, result, template).mean_oks

    ok = (std_after <= 0.30 * std_before and err_after < err_before
          and mean_oks >= 0.90 and elapsed < 300.0)
    _report(4, ok,
            "plane std %.3f -> %.3f m (ratio %.2f), mean |tZ err| "
            "%.3f -> %.3f m, OKS %.3f, %.0fs"
            % (std_before, std_after, std_after / std_before,
               err_before, err_after, mean_oks, elapsed))


def test_criterion_5_iteration_sensitivity(acceptance_scene,
                                           acceptance_perturbed,
                                           acceptance_refined):
    _, pert = acceptance_perturbed
    ests260, _, _ = acceptance_refined
    ests80, _ = crowd_refine(acceptance_scene, pert,
                             config=FitConfig(iters=80))
    normal = np.asarray(acceptance_scene.ground_truth.plane.normal)
    std80 = plane_std([e.t for e in ests80], normal)
    std260 = plane_std([e.t for e in ests260], normal)
    _report(5, std260 <= std80,
            "plane std 80 iters %.4f m, 260 iters %.4f m" % (std80, std260))


def test_criterion_6_supervised_recovery(near_scene, template):
    gt = near_scene.ground_truth.persons[0]
    start = synth.gt_estimates(near_scene)[0]
    rng = np.random.default_rng(6)
    start = start.model_copy(update={
        "theta": (np.asarray(start.theta)
                  + 0.2 * rng.standard_normal(72)).tolist()})
    est = supervised_fit(near_scene.persons[0], gt, near_scene, template,
                         FitConfig(), start=start)
    joints, points = body_mod.body_points(
        template, torch.tensor(est.theta).reshape(-1, 3),
        torch.tensor(est.beta))
    _, l_joint, l_verts = losses.supervised_param_losses(
        torch.tensor(est.theta), torch.tensor(est.beta), joints, points,
        torch.tensor(gt.theta), torch.tensor(gt.beta),
        torch.tensor(gt.joints3d), torch.tensor(gt.vertices3d))
    ok = float(l_joint) < 1e-4 and float(l_verts) < 1e-4
    _report(6, ok, "L_joint %.2e, L_verts %.2e after 500 steps"
            % (float(l_joint), float(l_verts)))


def test_criterion_7_optimizer_unit_correctness():
    cfg = AdamWConfig(lr_max=0.1)
    state = AdamWState.zeros(1)
    x1, _ = adamw_step(state, np.zeros(1), np.ones(1), 0.1, cfg)
    first_ok = abs(x1[0] - (-0.1 / (1.0 + 1e-8))) < 1e-12

    sched = AdamWConfig(lr_max=1e-3, lr_min=1e-5, total_steps=260)
    cos_ok = (cosine_lr(sched, 0) == 1e-3
              and cosine_lr(sched, 260) == 1e-5)

    quad_cfg = AdamWConfig(lr_max=0.5, total_steps=260)

    def vg(x):
        return float(x @ x), 2.0 * x

    res = minimize(vg, np.array([10.0, 10.0]), quad_cfg)
    norm = float(np.linalg.norm(res.x))
    _report(7, first_ok and cos_ok and norm < 1e-3,
            "first step ok=%s, cosine endpoints ok=%s, final |x| %.2e"
            % (first_ok, cos_ok, norm))


def test_criterion_8_cli_determinism(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(near_spec(2).model_dump_json())
    scene = tmp_path / "scene.json"
    assert main(["generate", "--spec", str(spec_path),
                 "--out", str(scene)]) == 0
    args = ["fit", "--scene", str(scene), "--stage1-iters", "120",
            "--iters", "40", "--seed", "1"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    identical = a.read_bytes() == b.read_bytes()
    _report(8, identical, "two fit runs byte-identical=%s" % identical)


def test_criterion_9_property_suites(template, tmp_path):
    rng = np.random.default_rng(9)
    failures = []

    # forward kinematics preserves bone lengths
    parents = template.parents
    for _ in range(100):
        theta = torch.tensor(rng.normal(0, 0.7, size=(24, 3)))
        beta = torch.tensor(rng.normal(0, 1.0, size=10))
        rest = body_mod.shaped_rest_joints(template, beta).numpy()
        joints, _, _ = body_mod.forward_kinematics(template, theta, beta)
        joints = joints.numpy()
        for j in range(1, 24):
            want = np.linalg.norm(rest[j] - rest[parents[j]])
            got = np.linalg.norm(joints[j] - joints[parents[j]])
            if abs(want - got) > 1e-9:
                failures.append("bone length")
                break

    # crowd spread is invariant to in-plane translation of every root
    for _ in range(100):
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        roots = rng.normal(0, 5, size=(6, 3))
        shift = rng.normal(0, 10, size=3)
        shift -= normal * (shift @ normal)
        a = float(losses.crowd_loss(torch.tensor(roots),
                                    torch.tensor(normal)))
        b = float(losses.crowd_loss(torch.tensor(roots + shift),
                                    torch.tensor(normal)))
        if abs(a - b) > 1e-9 * max(1.0, a):
            failures.append("crowd invariance")
            break

    # OKS of a prediction against itself is exactly 1
    for _ in range(100):
        pts = rng.uniform(0, 2000, size=(24, 2))
        vis = rng.uniform(size=24) > 0.2
        if not vis.any():
            vis[0] = True
        if oks(pts, pts, vis, rng.uniform(1e2, 1e6)) != 1.0:
            failures.append("oks identity")
            break

    # Procrustes alignment cancels constructed similarity transforms
    for _ in range(100):
        pts = rng.standard_normal((24, 3))
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        q *= np.sign(np.linalg.det(q))
        moved = rng.uniform(0.5, 2.0) * pts @ q.T + rng.uniform(-1, 1, 3)
        if pa_mpjpe(moved, pts) >= 1e-9:
            failures.append("pa-mpjpe similarity")
            break

    # load(save(x)) is bitwise identity for scene files
    for seed in range(100):
        scene = synth.generate_scene(near_spec(1, seed=seed))
        blob = canonical_json(scene.model_dump())
        again = scene_from_dict(json.loads(blob))
        if canonical_json(again.model_dump()) != blob:
            failures.append("round trip")
            break

    _report(9, not failures,
            "5 property suites x 100 cases; failures: %s"
            % (failures or "none"))
