"""Shared fixtures: templates and synthetic scenes reused across tests."""
import math

import numpy as np
import pytest

from crowdfit import body as body_mod
from crowdfit import pipeline, synth
from crowdfit.sceneio import PerturbSpecModel, SceneSpecModel

# The crowd stage moves a person's depth by roughly lr * iters * t_Z / f_c
# meters at the published settings, so depth-disambiguation scenes sit far
# from the camera (a tilted plane ~1.4 km out) where that budget covers
# several times the injected jitter.
TILT = math.radians(20.0)
FAR_NORMAL = [0.0, -math.cos(TILT), -math.sin(TILT)]


def far_spec(n_persons, seed=7, sigma_pose=0.02, sigma_kp=0.0,
             extent_x=100.0, extent_depth=60.0):
    return SceneSpecModel(
        plane_normal=FAR_NORMAL, plane_offset=-500.0,
        image_width=25600, image_height=19200,
        n_persons=n_persons, seed=seed, sigma_pose=sigma_pose,
        sigma_kp=sigma_kp, extent_x=extent_x, extent_depth=extent_depth)


def near_spec(n_persons, seed=11, sigma_pose=0.1, sigma_kp=0.0,
              anchor_depth=9.0):
    return SceneSpecModel(
        plane_normal=[0.0, -1.0, 0.0], plane_offset=-1.2,
        image_width=1920, image_height=1080,
        n_persons=n_persons, seed=seed, sigma_pose=sigma_pose,
        sigma_kp=sigma_kp, extent_x=4.0, extent_depth=3.0,
        anchor_depth=anchor_depth)


@pytest.fixture(scope="session")
def template():
    return body_mod.default_template()


@pytest.fixture(scope="session")
def small_scene():
    """3-person tilted-plane scene for gradient checks."""
    return synth.generate_scene(far_spec(3, seed=5))


@pytest.fixture(scope="session")
def near_scene():
    """4-person floor-plane scene at ordinary photo scale."""
    return synth.generate_scene(near_spec(4))


@pytest.fixture(scope="session")
def acceptance_scene():
    """The 50-person depth-disambiguation scene."""
    return synth.generate_scene(far_spec(50))


@pytest.fixture(scope="session")
def acceptance_perturbed(acceptance_scene):
    gts = synth.gt_estimates(acceptance_scene)
    pert = synth.perturb_estimates(
        gts, acceptance_scene, PerturbSpecModel(sigma_z=0.5, seed=3))
    return gts, pert


@pytest.fixture(scope="session")
def acceptance_refined(acceptance_scene, acceptance_perturbed):
    """Shared 260-iteration crowd refinement (criteria on depth and
    iteration sensitivity both read it)."""
    _, pert = acceptance_perturbed
    import time
    t0 = time.monotonic()
    ests, block = pipeline.crowd_refine(acceptance_scene, pert,
                                        config=pipeline.FitConfig())
    return ests, block, time.monotonic() - t0


def gt_roots(scene):
    return np.array([p.t for p in scene.ground_truth.persons])


def plane_std(roots, normal):
    return float((np.asarray(roots) @ np.asarray(normal)).std())
