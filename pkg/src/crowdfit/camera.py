"""Perspective camera geometry for crop-camera fitting.

The per-person camera is a triple (f_c, t_x, t_y) predicted in
bounding-box coordinates; it lifts to an absolute translation via

    t_X = t_x + 2 c_x / (d f_c)
    t_Y = t_y + 2 c_y / (d f_c)
    t_Z = 2 f / (d f_c)

with c the box center relative to the image center, d the box size and
f the focal length. Functions are written with plain arithmetic so they
work on floats, numpy arrays and torch tensors alike.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError, ProjectionError


@dataclass
class Intrinsics:
    image_width: float
    image_height: float
    focal: float | None = None          # None -> diagonal fallback
    principal: tuple | None = None      # None -> image center
    focal_is_fallback: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.focal is None:
            self.focal = math.hypot(self.image_width, self.image_height)
            self.focal_is_fallback = True
        if self.focal <= 0:
            raise DomainError("focal length must be positive")
        if self.principal is None:
            self.principal = (self.image_width / 2.0,
                              self.image_height / 2.0)


@dataclass
class BBox:
    center_x: float     # absolute pixels
    center_y: float
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DomainError("bounding box sides must be positive")

    @property
    def size(self):
        """Box size d; the max side keeps thin boxes well-conditioned."""
        return max(self.width, self.height)

    def center_offset(self, intr: Intrinsics):
        """(c_x, c_y): box center relative to the image center."""
        cx, cy = intr.principal
        return self.center_x - cx, self.center_y - cy


@dataclass
class CamTriple:
    f_c: float
    t_x: float
    t_y: float

    def __post_init__(self):
        if self.f_c <= 0:
            raise DomainError("crop focal factor f_c must be positive")


def translation_from_cam(f_c, t_x, t_y, box: BBox, intr: Intrinsics):
    """Lifts a crop camera to an absolute translation (t_X, t_Y, t_Z)."""
    d = box.size
    if d <= 0:
        raise DomainError("box size must be positive")
    if f_c <= 0:
        raise DomainError("crop focal factor f_c must be positive")
    c_x, c_y = box.center_offset(intr)
    t_x_abs = t_x + 2.0 * c_x / (d * f_c)
    t_y_abs = t_y + 2.0 * c_y / (d * f_c)
    t_z_abs = 2.0 * intr.focal / (d * f_c)
    return t_x_abs, t_y_abs, t_z_abs


def cam_from_translation(t, box: BBox, intr: Intrinsics) -> CamTriple:
    """Exact inverse of translation_from_cam; requires t_Z > 0."""
    t_x_abs, t_y_abs, t_z_abs = t
    if t_z_abs <= 0:
        raise DomainError("person behind camera: t_Z must be positive")
    d = box.size
    c_x, c_y = box.center_offset(intr)
    f_c = 2.0 * intr.focal / (d * t_z_abs)
    return CamTriple(f_c=f_c,
                     t_x=t_x_abs - 2.0 * c_x / (d * f_c),
                     t_y=t_y_abs - 2.0 * c_y / (d * f_c))


def project(points, t, intr: Intrinsics, person=None):
    """Pinhole projection of (..., 3) points translated by t to pixels.

    points and t may be numpy arrays or torch tensors; t broadcasts
    against points. Returns (..., 2) pixel coordinates in the same array
    library. Raises ProjectionError on non-positive depth.
    """
    import numpy as np
    import torch

    use_torch = torch.is_tensor(points) or torch.is_tensor(t)
    if use_torch:
        points = torch.as_tensor(points)
        t = torch.as_tensor(t)
    else:
        points = np.asarray(points, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
    p = points + t
    z = p[..., 2]
    if float(z.min() if z.ndim else z) <= 0:
        raise ProjectionError(
            "non-positive depth while projecting"
            + ("" if person is None else " person %s" % person),
            person=person)
    cx, cy = intr.principal
    u = cx + intr.focal * p[..., 0] / z
    v = cy + intr.focal * p[..., 1] / z
    if use_torch:
        return torch.stack([u, v], dim=-1)
    return np.stack([u, v], axis=-1)
