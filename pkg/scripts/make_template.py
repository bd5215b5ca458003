"""Regenerates the versioned body template data file.

The template uses an image-like coordinate convention: x right, y down,
z away from the viewer. A person standing upright therefore has the head
at negative y. Run from the repo root:

    python scripts/make_template.py
"""
import json
import os

import numpy as np

K = 24
S = 10

JOINT_NAMES = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
]

PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9,
           12, 13, 14, 16, 17, 18, 19, 20, 21]

# Rest joints, meters, y-down. Head (15) and the ankle midpoint share
# x = z = 0 so the head-to-ankle-mid line is exactly the -y axis.
REST_JOINTS = [
    [0.00, 0.00, 0.00],    # pelvis
    [0.09, 0.04, 0.00],    # l_hip
    [-0.09, 0.04, 0.00],   # r_hip
    [0.00, -0.11, 0.01],   # spine1
    [0.10, 0.43, 0.00],    # l_knee
    [-0.10, 0.43, 0.00],   # r_knee
    [0.00, -0.22, 0.01],   # spine2
    [0.10, 0.83, 0.00],    # l_ankle
    [-0.10, 0.83, 0.00],   # r_ankle
    [0.00, -0.31, 0.01],   # spine3
    [0.11, 0.90, -0.07],   # l_foot
    [-0.11, 0.90, -0.07],  # r_foot
    [0.00, -0.48, 0.00],   # neck
    [0.06, -0.44, 0.00],   # l_collar
    [-0.06, -0.44, 0.00],  # r_collar
    [0.00, -0.57, 0.00],   # head
    [0.17, -0.46, 0.00],   # l_shoulder
    [-0.17, -0.46, 0.00],  # r_shoulder
    [0.43, -0.45, 0.00],   # l_elbow
    [-0.43, -0.45, 0.00],  # r_elbow
    [0.68, -0.45, 0.00],   # l_wrist
    [-0.68, -0.45, 0.00],  # r_wrist
    [0.76, -0.45, 0.00],   # l_hand
    [-0.76, -0.45, 0.00],  # r_hand
]

LEGS = [1, 2, 4, 5, 7, 8, 10, 11]
ARMS = [16, 17, 18, 19, 20, 21, 22, 23]
TORSO = [3, 6, 9, 12, 13, 14, 15]


def build_shape_basis(rng):
    J0 = np.asarray(REST_JOINTS)
    B = np.zeros((3 * K, S))
    # 0: overall scale, 1: leg length, 2: arm span, 3: torso height.
    B[:, 0] = (0.05 * J0).reshape(-1)
    leg = np.zeros_like(J0)
    leg[LEGS, 1] = 0.04 * np.sign(J0[LEGS, 1])
    B[:, 1] = leg.reshape(-1)
    arm = np.zeros_like(J0)
    arm[ARMS, 0] = 0.03 * np.sign(J0[ARMS, 0])
    B[:, 2] = arm.reshape(-1)
    torso = np.zeros_like(J0)
    torso[TORSO, 1] = -0.03
    torso[15, 1] = -0.05
    B[:, 3] = torso.reshape(-1)
    # Remaining components: small fixed pseudo-random displacements.
    B[:, 4:] = rng.normal(scale=0.008, size=(3 * K, S - 4))
    return B


def build_template_points(rng):
    J0 = np.asarray(REST_JOINTS)
    points = []
    # One marker point exactly at each joint (used for skeleton edges).
    for j in range(K):
        points.append({"position": J0[j].tolist(), "joint": j, "tag": "joint"})
    # One surface-ish point per joint at a fixed pseudo-random offset.
    for j in range(K):
        off = rng.normal(size=3)
        off = 0.07 * off / np.linalg.norm(off)
        points.append({"position": (J0[j] + off).tolist(), "joint": j,
                       "tag": "surface"})
    return points


def main():
    rng = np.random.default_rng(20240117)
    template = {
        "version": "1",
        "joint_names": JOINT_NAMES,
        "parents": PARENTS,
        "rest_joints": REST_JOINTS,
        "shape_basis": build_shape_basis(rng).tolist(),
        "template_points": build_template_points(rng),
        "role_map": {
            "root": 0,
            "head_top": 15,
            "left_ankle": 7,
            "right_ankle": 8,
            # observation keypoint index -> model joint index
            "keypoint_map": {"model24": list(range(K))},
        },
    }
    out = os.path.join(os.path.dirname(__file__), "..", "src", "crowdfit",
                       "data", "template_v1.json")
    with open(out, "w") as fh:
        json.dump(template, fh, indent=1)
    print("wrote", os.path.normpath(out))


if __name__ == "__main__":
    main()
