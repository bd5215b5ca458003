"""Loss terms for the single-person fit and the crowd refinement.

All functions take torch tensors with arbitrary leading batch dimensions
(the last dimensions hold persons/joints/coordinates) and return a
scalar per batch element. Every loss is non-negative and exactly zero at
a perfect match.

Square-bracketed shapes below use N for persons, J for observation
keypoints, K for model joints and M for template points.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, DegeneratePersonError

WEIGHT_SUM_EPS = 1e-8
STD_EPS = 1e-12


@dataclass
class LossWeights:
    """Loss weights; l1..l4 for the supervised fit, l5..l8 crowd stage."""
    l1: float = 5.0
    l2: float = 5.0
    l3: float = 1.0
    l4: float = 0.1
    l5: float = 0.001
    l6: float = 5.0
    l7: float = 0.001
    l8: float = 5.0

    def __post_init__(self):
        for name in ("l1", "l2", "l3", "l4", "l5", "l6", "l7", "l8"):
            if getattr(self, name) < 0:
                raise ConfigurationError("loss weight %s must be >= 0" % name)


def _mean_sq(diff: torch.Tensor, dims: int) -> torch.Tensor:
    """Mean of elementwise squared values over the last `dims` dims."""
    d = diff * diff
    return d.mean(dim=tuple(range(-dims, 0)))


def weighted_reproj(pred2d: torch.Tensor, obs2d: torch.Tensor,
                    conf: torch.Tensor, box_size,
                    normalize_box: bool = True) -> torch.Tensor:
    """Confidence-weighted mean squared reprojection residual.

    pred2d, obs2d: [..., J, 2] pixels; conf: [..., J] in [0, 1];
    box_size: scalar or [...] box size d used to normalize residuals.
    Returns 0 where all confidences are 0.
    """
    diff = pred2d - obs2d
    if normalize_box:
        if torch.is_tensor(box_size):
            diff = diff / box_size[..., None, None]
        else:
            diff = diff / box_size
    sq = (diff * diff).sum(dim=-1)           # [..., J]
    num = (conf * sq).sum(dim=-1)
    den = conf.sum(dim=-1)
    return num / torch.clamp(den, min=WEIGHT_SUM_EPS)


def reproj_loss(joints2d: torch.Tensor, obs2d: torch.Tensor,
                conf: torch.Tensor, box_size) -> torch.Tensor:
    """Box-normalized reprojection loss for one person (batched)."""
    return weighted_reproj(joints2d, obs2d, conf, box_size,
                           normalize_box=True)


def supervised_param_losses(theta, beta, joints3d, verts3d,
                            gt_theta, gt_beta, gt_joints3d, gt_verts3d,
                            root_index: int = 0):
    """Returns (L_smpl, L_joint, L_verts) for one person (batched).

    Parameters are compared as the concatenated [beta, theta] vector;
    3D joints and vertices are compared root-relative.
    """
    theta = theta.reshape(*theta.shape[:-2], -1) if theta.dim() >= 2 and \
        theta.shape[-1] == 3 else theta
    gt_theta = gt_theta.reshape(*gt_theta.shape[:-2], -1) \
        if gt_theta.dim() >= 2 and gt_theta.shape[-1] == 3 else gt_theta
    if theta.shape[-1] != gt_theta.shape[-1] or \
            beta.shape[-1] != gt_beta.shape[-1]:
        raise ConfigurationError("parameter dimension mismatch")
    if joints3d.shape[-2:] != gt_joints3d.shape[-2:] or \
            verts3d.shape[-2:] != gt_verts3d.shape[-2:]:
        raise ConfigurationError("3D supervision dimension mismatch")
    params = torch.cat([beta, theta], dim=-1)
    gt_params = torch.cat([gt_beta, gt_theta], dim=-1)
    l_smpl = _mean_sq(params - gt_params, 1)

    j = joints3d - joints3d[..., root_index:root_index + 1, :]
    gj = gt_joints3d - gt_joints3d[..., root_index:root_index + 1, :]
    l_joint = _mean_sq(j - gj, 2)
    l_verts = _mean_sq(verts3d - gt_verts3d, 2)
    return l_smpl, l_joint, l_verts


def supervised_total(l_reproj, l_smpl, l_joint, l_verts,
                     w: LossWeights):
    return w.l1 * l_reproj + w.l2 * l_smpl + w.l3 * l_joint + w.l4 * l_verts


def estimate_plane_normal(tops: torch.Tensor, bottoms: torch.Tensor,
                          check: bool = True) -> torch.Tensor:
    """Average head-to-ankle unit vector over persons.

    tops, bottoms: [..., N, 3] world positions of the head-top joint and
    the ankle midpoint. Returns [..., 3]; deliberately NOT renormalized.
    """
    diff = tops - bottoms
    norm = torch.linalg.norm(diff, dim=-1, keepdim=True)
    if check:
        bad = (norm.detach() < 1e-12).reshape(-1, norm.shape[-2]) \
            if norm.dim() > 2 else (norm.detach() < 1e-12).reshape(1, -1)
        if bool(bad.any()):
            person = int(bad.any(dim=0).nonzero()[0])
            raise DegeneratePersonError(
                "person %d has coincident head and ankle midpoint" % person,
                person=person)
    return (diff / norm).mean(dim=-2)


def crowd_loss(roots: torch.Tensor, normal: torch.Tensor) -> torch.Tensor:
    """Population std of root positions projected on the plane normal.

    roots: [..., N, 3]; normal: [..., 3]. Returns 0 for N < 2 (a single
    person defines no spread). The sqrt is smoothed with a tiny epsilon
    so the derivative stays finite at zero variance.
    """
    n = roots.shape[-2]
    if n < 2:
        return torch.zeros(roots.shape[:-2], dtype=roots.dtype,
                           device=roots.device)
    proj = (roots * normal[..., None, :]).sum(dim=-1)   # [..., N]
    var = proj.var(dim=-1, unbiased=False)
    return torch.sqrt(var + STD_EPS)


def keyp_loss(pred2d: torch.Tensor, obs2d: torch.Tensor,
              conf: torch.Tensor, box_sizes: torch.Tensor,
              normalize_box: bool = True,
              person_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over persons of the per-person 2D fitting term.

    pred2d, obs2d: [..., N, J, 2]; conf: [N, J] (or broadcastable);
    box_sizes: [N]. With normalize_box the per-person residuals are
    divided by that person's box size (the raw-pixel form is the
    `--raw-pixel-keyp` variant: confidence-weighted *sum* of squared
    pixel residuals).
    """
    if normalize_box:
        per = weighted_reproj(pred2d, obs2d, conf, box_sizes,
                              normalize_box=True)      # [..., N]
    else:
        diff = pred2d - obs2d
        per = (conf * (diff * diff).sum(dim=-1)).sum(dim=-1)
    if person_mask is not None:
        per = per * person_mask
        denom = torch.clamp(person_mask.sum(), min=1.0)
        return per.sum(dim=-1) / denom
    return per.mean(dim=-1)


def init_loss(theta, beta, init_theta, init_beta, w: LossWeights,
              crowd_value=None) -> torch.Tensor:
    """Anchor to the initial estimates (mean over persons).

    theta: [..., N, 72]; beta: [..., N, 10]. The published form prints a
    stray crowd factor on the shape term; pass crowd_value to enable
    that literal variant, otherwise it is treated as a typo and dropped.
    """
    d_beta = ((beta - init_beta) ** 2).sum(dim=-1)
    d_theta = ((theta - init_theta) ** 2).sum(dim=-1)
    beta_w = w.l7 if crowd_value is None else w.l7 * crowd_value
    per = beta_w * d_beta + w.l8 * d_theta
    return per.mean(dim=-1)


def crowd_total(l_crowd, l_keyp, l_init, w: LossWeights):
    """Crowd-stage objective; the init anchor carries no outer weight."""
    return w.l5 * l_crowd + w.l6 * l_keyp + l_init
