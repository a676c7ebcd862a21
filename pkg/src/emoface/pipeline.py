"""End-to-end wiring of the prediction, refinement and rendering stages,
including the two switchable ablation variants:

* no_alignment - the fused cross-modal attention is replaced by plain
  self-attention over concatenated per-frame projections;
* no_refinement - instead of moving along a hyperplane normal the field is
  conditioned on the 11-vector [tag index; predicted expression].
"""

from dataclasses import dataclass

import numpy as np

from .audio2exp import AlignmentConfig, AlignmentParams, forward_window
from .features import EXPR_DIM, window
from .hyperplane import interpolate_planes, refine
from .renderfield import RenderConfig, render_frame

PIPELINE_MODES = ("full", "no_alignment", "no_refinement")


class ModeError(ValueError):
    pass


def alignment_mode_for(pipeline_mode):
    if pipeline_mode not in PIPELINE_MODES:
        raise ModeError(f"unknown mode {pipeline_mode!r}; expected one of "
                        f"{PIPELINE_MODES}")
    return "no_alignment" if pipeline_mode == "no_alignment" else "full"


def conditioning_dim(pipeline_mode):
    if pipeline_mode not in PIPELINE_MODES:
        raise ModeError(f"unknown mode {pipeline_mode!r}")
    return EXPR_DIM + 1 if pipeline_mode == "no_refinement" else EXPR_DIM


@dataclass
class SynthesisPipeline:
    """Frozen, inference-side composition of the trained stages."""

    mode: str
    align: AlignmentParams
    planes: dict
    field: object
    tag_order: list

    def __post_init__(self):
        if self.mode not in PIPELINE_MODES:
            raise ModeError(f"unknown mode {self.mode!r}")

    def tag_index(self, tag):
        # positive integers, per the tag-as-conditioning ablation
        return 1 + self.tag_order.index(tag)

    def predict(self, clip, frame_index):
        win = window(clip, frame_index, self.align.config.n)
        out = forward_window(win, self.align)
        return out.alpha_tilde.data.copy(), float(out.tau.data)

    def condition(self, alpha_tilde, tau, tag, second_tag=None, lam=0.0):
        """Conditioning vector for the field under the active mode."""
        alpha_tilde = np.asarray(alpha_tilde, dtype=np.float64)
        if self.mode == "no_refinement":
            return np.concatenate([[float(self.tag_index(tag))], alpha_tilde])
        if second_tag is not None:
            direction = interpolate_planes(self.planes[tag],
                                           self.planes[second_tag], lam)
        else:
            direction = self.planes[tag].normal
        if tau == 0.0:
            return alpha_tilde.copy()
        return alpha_tilde + tau * direction

    def render(self, pose, cond, render_config=None, parallel=False):
        rcfg = render_config or RenderConfig()
        return render_frame(self.field, pose, cond, rcfg, parallel=parallel)

    def render_refined(self, pose, tag, tau, alpha_tilde=None, second_tag=None,
                       lam=0.0, render_config=None):
        alpha_tilde = np.zeros(EXPR_DIM) if alpha_tilde is None else alpha_tilde
        cond = self.condition(alpha_tilde, tau, tag, second_tag, lam)
        return self.render(pose, cond, render_config)


def alignment_config_for(mode, **kwargs):
    """AlignmentConfig for a pipeline mode (the ablation switch)."""
    return AlignmentConfig(mode=alignment_mode_for(mode), **kwargs)


def refine_or_tag(mode, alpha_tilde, tau, plane, tag_idx):
    """Stateless version of the conditioning switch, for training loops."""
    if mode == "no_refinement":
        return np.concatenate([[float(tag_idx)], np.asarray(alpha_tilde)])
    return refine(alpha_tilde, tau, plane)
