"""Analytic test scene: a soft-boundary blob whose surface colors respond to
a 10-dimensional expression vector.

Dimension j drives a smooth angular bump around a fixed surface anchor
(dimension 0 drives an equatorial band, mouth-like), so changing one
dimension perturbs one localized image region.  With alpha = 0 the blob is
mirror-symmetric in x.  Ground-truth images come from the dense quadrature
integrator, never from the discrete renderer under test.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, orbit_pose
from .features import EXPR_DIM
from .renderfield import oracle_render_frame

BETA_DIM = 50


@dataclass
class AnalyticField:
    density: object         # (M,3) -> (M,)
    color: object           # (M,3), (M,3) -> (M,3)


@dataclass
class GroundTruthFrame:
    pose: CameraPose
    alpha: np.ndarray
    tag: str
    image: np.ndarray       # (h, w, 3) float64
    beta_id: np.ndarray     # (50,)


class SyntheticScene:
    """Emotive blob: density is a soft sphere, color is alpha-conditioned."""

    def __init__(self, seed, radius=0.9, softness=0.07, peak_density=10.0):
        self.seed = seed
        self.radius = radius
        self.softness = softness
        self.peak_density = peak_density
        rng = np.random.default_rng(seed)
        anchors = rng.normal(size=(EXPR_DIM, 3))
        anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
        anchors[1] = (0.0, 0.0, 1.0)    # dimension 1 always faces the front view
        self.anchors = anchors
        self.channel = np.arange(EXPR_DIM) % 3
        self.phases = rng.uniform(0, 2 * np.pi, size=3)
        self._beta_rng_base = rng.integers(1 << 31)

    def density(self, x):
        r = np.linalg.norm(x, axis=-1)
        return self.peak_density / (1.0 + np.exp((r - self.radius) / self.softness))

    def _surface_pre(self, x, alpha):
        r = np.linalg.norm(x, axis=-1)
        n = x / np.maximum(r, 1e-9)[..., None]
        pre = np.empty(x.shape[:-1] + (3,))
        for k in range(3):
            pre[..., k] = 0.35 * np.cos(2.0 * n[..., 1] + self.phases[k]) \
                + 0.25 * np.cos(3.0 * r + 1.7 * self.phases[k])
        band = np.exp(-(n[..., 1] ** 2) / (2 * 0.12 ** 2))
        pre[..., self.channel[0]] += 1.2 * alpha[0] * band
        for j in range(1, EXPR_DIM):
            if alpha[j] == 0.0:
                continue
            d2 = ((n - self.anchors[j]) ** 2).sum(axis=-1)
            # narrow angular bump: one dimension edits one surface patch
            pre[..., self.channel[j]] += 1.2 * alpha[j] * np.exp(-d2 / (2 * 0.18 ** 2))
        return pre

    def color(self, x, d, alpha):
        del d  # the blob's emission is view-independent
        return 0.5 + 0.45 * np.tanh(self._surface_pre(x, alpha))

    def field_for(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        return AnalyticField(
            density=self.density,
            color=lambda x, d, a=alpha: self.color(x, d, a),
        )

    def beta_for(self, identity):
        tag = zlib.crc32(str(identity).encode("utf-8"))
        rng = np.random.default_rng((self._beta_rng_base, tag))
        return rng.normal(0, 0.5, BETA_DIM)


def synth_scene(seed):
    return SyntheticScene(seed)


def default_poses(n_poses, width, height, radius=3.0):
    azimuths = np.linspace(0.0, 360.0, n_poses, endpoint=False)
    elevations = [(-12.0 + 30.0 * ((i * 7) % n_poses) / max(n_poses - 1, 1))
                  for i in range(n_poses)]
    return [orbit_pose(az, el, radius, width, height)
            for az, el in zip(azimuths, elevations)]


def default_alphas():
    a0 = np.zeros(EXPR_DIM)
    a1 = np.zeros(EXPR_DIM)
    a1[[1, 4]] = 1.4
    a1[7] = -0.8
    a2 = np.zeros(EXPR_DIM)
    a2[1] = -1.2
    a2[[2, 5]] = 1.0
    return [a0, a1, a2], ["neutral", "happy", "sad"]


def scene_ground_truth(scene, poses, alphas, tags, near, far, n_quad=1024,
                       background=(0.0, 0.0, 0.0), identity="id0"):
    """Oracle-rendered image for every (pose, alpha) pair."""
    beta = scene.beta_for(identity)
    frames = []
    for alpha, tag in zip(alphas, tags):
        field = scene.field_for(alpha)
        for pose in poses:
            img = oracle_render_frame(field, pose, n_quad, near, far, background)
            frames.append(GroundTruthFrame(pose=pose, alpha=np.asarray(alpha),
                                           tag=tag, image=img, beta_id=beta))
    return frames
