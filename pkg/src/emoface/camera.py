"""Rigid camera poses, pinhole rays, and orbit parameterization.

Convention: camera looks along -z in its own frame, +x right, +y up; pixel
(u, v) maps to camera-space direction ((u-cx)/f, -(v-cy)/f, -1) before
rotation.  World rays are r(t) = omega + t * R d_cam with unit d.
"""

import json
from dataclasses import dataclass

import numpy as np


class PoseError(ValueError):
    pass


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray        # (3,3), orthonormal, det +1
    translation: np.ndarray     # (3,)
    focal: float                # pixels
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise PoseError("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise PoseError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise PoseError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray       # unit
    t_near: float
    t_far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise PoseError("ray direction must be unit length")
        if not 0.0 <= self.t_near < self.t_far:
            raise PoseError("require 0 <= t_near < t_far")

    def at(self, t):
        return self.origin + t * self.direction


def pixel_directions(pose, us, vs):
    """World-space unit directions for integer pixel coordinate arrays."""
    x = (np.asarray(us, dtype=np.float64) - pose.cx) / pose.focal
    y = -(np.asarray(vs, dtype=np.float64) - pose.cy) / pose.focal
    d = np.stack([x, y, -np.ones_like(x)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ pose.rotation.T


def generate_ray(pose, u, v, t_near, t_far):
    """Pinhole ray through pixel (u, v); raises if the pixel is outside."""
    if not (0 <= u < pose.width and 0 <= v < pose.height):
        raise PoseError(f"pixel ({u},{v}) outside {pose.width}x{pose.height}")
    d = pixel_directions(pose, np.array([u]), np.array([v]))[0]
    return Ray(pose.translation.copy(), d, t_near, t_far)


def frame_rays(pose):
    """Origins and unit directions for the full pixel grid, row-major."""
    vs, us = np.meshgrid(np.arange(pose.height), np.arange(pose.width), indexing="ij")
    dirs = pixel_directions(pose, us.ravel(), vs.ravel())
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def orbit_pose(azimuth_deg, elevation_deg, radius, width, height, focal=None):
    """Camera on a sphere around the origin, looking at the origin, +y up."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    eye = radius * np.array([np.cos(el) * np.sin(az), np.sin(el),
                             np.cos(el) * np.cos(az)])
    z = eye / np.linalg.norm(eye)          # camera backward (looks along -z)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, z)) > 1.0 - 1e-9:
        up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    f = focal if focal is not None else 1.2 * max(width, height)
    return CameraPose(rotation=rot, translation=eye, focal=f,
                      cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height)


def save_pose(pose, path):
    doc = {
        "rotation": [float(v) for v in pose.rotation.ravel()],
        "translation": [float(v) for v in pose.translation],
        "intrinsics": {"focal": pose.focal, "cx": pose.cx, "cy": pose.cy,
                       "width": pose.width, "height": pose.height},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_pose(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    intr = doc["intrinsics"]
    return CameraPose(
        rotation=np.asarray(doc["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.asarray(doc["translation"], dtype=np.float64),
        focal=float(intr["focal"]), cx=float(intr["cx"]), cy=float(intr["cy"]),
        width=int(intr["width"]), height=int(intr["height"]))
