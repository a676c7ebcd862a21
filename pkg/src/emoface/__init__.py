"""Emotional talking-head synthesis at desk scale.

Subsystems: a tape-based autodiff core (`autodiff`, `nn`), feature clip
ingestion (`features`), expression regression with fused cross-modal
attention (`audio2exp`), emotion hyperplanes (`hyperplane`), an
expression-conditioned radiance field (`camera`, `renderfield`, `scene`),
two-stage reconstruction training (`training`), and a CLI/HTTP surface
(`cli`, `server`).
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor  # noqa: F401
