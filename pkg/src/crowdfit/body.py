"""Simplified parametric articulated body.

A 24-joint kinematic tree with a linear shape basis and rigidly skinned
template points. Coordinates follow an image-like convention (x right,
y down, z forward), so an upright person has the head at negative y.

All tensor functions accept arbitrary leading batch dimensions and keep
the torch autograd graph intact.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError

torch.set_default_dtype(torch.float64)

K_JOINTS = 24
N_SHAPE = 10
POSE_DIM = 3 * K_JOINTS

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
DEFAULT_TEMPLATE_PATH = os.path.join(_DATA_DIR, "template_v1.json")
TEMPLATE_ENV_VAR = "CROWDFIT_TEMPLATE"


@dataclass
class SkeletonTemplate:
    version: str
    parents: np.ndarray                 # (K,), parents[root] == -1
    rest_joints: np.ndarray             # (K, 3) meters
    shape_basis: np.ndarray             # (3K, S) meters per unit coefficient
    point_positions: np.ndarray         # (M, 3) meters
    point_joints: np.ndarray            # (M,) attached joint index
    point_tags: list
    role_map: dict
    joint_names: list = field(default_factory=list)

    # torch copies, filled in __post_init__
    rest_joints_t: torch.Tensor = field(init=False, repr=False)
    shape_basis_t: torch.Tensor = field(init=False, repr=False)
    point_positions_t: torch.Tensor = field(init=False, repr=False)

    def __post_init__(self):
        self._validate()
        self.rest_joints_t = torch.from_numpy(self.rest_joints)
        self.shape_basis_t = torch.from_numpy(self.shape_basis)
        self.point_positions_t = torch.from_numpy(self.point_positions)

    def _validate(self):
        k = len(self.parents)
        if self.rest_joints.shape != (k, 3):
            raise ConfigurationError("rest_joints shape mismatch")
        if self.shape_basis.shape[0] != 3 * k:
            raise ConfigurationError(
                "shape_basis must have 3K rows, got %d for K=%d"
                % (self.shape_basis.shape[0], k))
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise ConfigurationError("parents must define exactly one root")
        for i, p in enumerate(self.parents):
            if p >= i:
                raise ConfigurationError(
                    "parents must be topologically ordered (parents[i] < i)")
        for name in ("root", "head_top", "left_ankle", "right_ankle"):
            idx = self.role_map.get(name)
            if idx is None or not 0 <= idx < k:
                raise ConfigurationError("role_map.%s invalid" % name)
        if self.role_map["head_top"] in (self.role_map["left_ankle"],
                                         self.role_map["right_ankle"]):
            raise ConfigurationError("head_top must differ from the ankles")
        if self.point_positions.shape[0] < 30:
            raise ConfigurationError("template needs at least 30 points")
        if self.point_joints.min() < 0 or self.point_joints.max() >= k:
            raise ConfigurationError("template point joint index out of range")

    @property
    def joint_count(self):
        return len(self.parents)

    @property
    def shape_dim(self):
        return self.shape_basis.shape[1]

    @property
    def point_count(self):
        return self.point_positions.shape[0]

    def keypoint_map(self, layout: str) -> np.ndarray:
        """Model joint index for each observation keypoint of `layout`."""
        maps = self.role_map.get("keypoint_map", {})
        if layout not in maps:
            raise ConfigurationError("unknown keypoint layout %r" % layout)
        return np.asarray(maps[layout], dtype=np.int64)


def load_template(path: str | None = None) -> SkeletonTemplate:
    """Loads and validates a template JSON file.

    Resolution order: explicit path, CROWDFIT_TEMPLATE env var, packaged
    default.
    """
    if path is None:
        path = os.environ.get(TEMPLATE_ENV_VAR) or DEFAULT_TEMPLATE_PATH
    with open(path) as fh:
        raw = json.load(fh)
    try:
        points = raw["template_points"]
        return SkeletonTemplate(
            version=str(raw["version"]),
            parents=np.asarray(raw["parents"], dtype=np.int64),
            rest_joints=np.asarray(raw["rest_joints"], dtype=np.float64),
            shape_basis=np.asarray(raw["shape_basis"], dtype=np.float64),
            point_positions=np.asarray([p["position"] for p in points],
                                       dtype=np.float64),
            point_joints=np.asarray([p["joint"] for p in points],
                                    dtype=np.int64),
            point_tags=[p.get("tag", "") for p in points],
            role_map=raw["role_map"],
            joint_names=raw.get("joint_names", []),
        )
    except KeyError as exc:
        raise ConfigurationError("template file missing field %s" % exc)


_default_template = None


def default_template() -> SkeletonTemplate:
    global _default_template
    if _default_template is None:
        _default_template = load_template()
    return _default_template


def rodrigues(aa: torch.Tensor) -> torch.Tensor:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3).

    Uses a second-order Taylor branch below 1e-6 rad so both the value
    and its derivative stay finite at the identity.
    """
    aa = torch.as_tensor(aa)
    angle = torch.linalg.norm(aa, dim=-1, keepdim=True)
    small = angle < 1e-6
    safe = torch.where(small, torch.ones_like(angle), angle)
    # sin(a)/a and (1-cos(a))/a^2 with Taylor fallbacks.
    sinc = torch.where(small, 1.0 - angle * angle / 6.0,
                       torch.sin(safe) / safe)
    cosc = torch.where(small, 0.5 - angle * angle / 24.0,
                       (1.0 - torch.cos(safe)) / (safe * safe))
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    hat = torch.stack([
        torch.stack([zero, -z, y], dim=-1),
        torch.stack([z, zero, -x], dim=-1),
        torch.stack([-y, x, zero], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device)
    eye = eye.expand(hat.shape)
    return eye + sinc[..., None] * hat + cosc[..., None] * (hat @ hat)


def canonicalize_pose(theta: np.ndarray) -> np.ndarray:
    """Wraps each joint's axis-angle magnitude into [0, 2*pi)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    out = theta.copy()
    angle = np.linalg.norm(theta, axis=-1)
    nz = angle > 0
    wrapped = np.mod(angle[nz], 2.0 * np.pi)
    out[nz] = theta[nz] * (wrapped / angle[nz])[:, None]
    return out.reshape(-1)


def shaped_rest_joints(template: SkeletonTemplate,
                       beta: torch.Tensor) -> torch.Tensor:
    """Rest joints for shape coefficients beta (..., S) -> (..., K, 3)."""
    beta = torch.as_tensor(beta)
    if beta.shape[-1] != template.shape_dim:
        raise ConfigurationError(
            "expected %d shape coefficients, got %d"
            % (template.shape_dim, beta.shape[-1]))
    offsets = beta @ template.shape_basis_t.T
    k = template.joint_count
    return template.rest_joints_t + offsets.reshape(*beta.shape[:-1], k, 3)


def forward_kinematics(template: SkeletonTemplate, theta: torch.Tensor,
                       beta: torch.Tensor):
    """Poses the skeleton.

    theta: (..., K, 3) axis-angle per joint, index 0 = global orientation.
    beta:  (..., S) shape coefficients.

    Returns (joints, rotations, shaped_rest): joint positions (..., K, 3)
    in the root-local frame (root at the origin), world rotation matrices
    (..., K, 3, 3), and the shaped rest joints used.
    """
    theta = torch.as_tensor(theta)
    k = template.joint_count
    if theta.shape[-2:] != (k, 3):
        raise ConfigurationError("theta must have shape (..., %d, 3)" % k)
    rest = shaped_rest_joints(template, beta)
    rots = rodrigues(theta)  # (..., K, 3, 3)

    world_rot = [None] * k
    world_pos = [None] * k
    for i, parent in enumerate(template.parents):
        if parent < 0:
            world_rot[i] = rots[..., i, :, :]
            world_pos[i] = torch.zeros_like(rest[..., i, :])
        else:
            bone = rest[..., i, :] - rest[..., parent, :]
            world_rot[i] = world_rot[parent] @ rots[..., i, :, :]
            world_pos[i] = world_pos[parent] + (
                world_rot[parent] @ bone[..., None]).squeeze(-1)
    joints = torch.stack(world_pos, dim=-2)
    rotations = torch.stack(world_rot, dim=-3)
    return joints, rotations, rest


def skin_points(template: SkeletonTemplate, joints: torch.Tensor,
                rotations: torch.Tensor,
                shaped_rest: torch.Tensor) -> torch.Tensor:
    """Rigidly transforms template points by their attached joints.

    Inputs are the outputs of forward_kinematics; returns (..., M, 3)
    point positions in the root-local frame.
    """
    idx = torch.from_numpy(template.point_joints)
    offsets = template.point_positions_t - shaped_rest[..., idx, :]
    rot = rotations[..., idx, :, :]
    return joints[..., idx, :] + (rot @ offsets[..., None]).squeeze(-1)


def body_points(template: SkeletonTemplate, theta, beta):
    """Convenience: FK then skinning. Returns (joints, points)."""
    joints, rotations, rest = forward_kinematics(template, theta, beta)
    return joints, skin_points(template, joints, rotations, rest)
