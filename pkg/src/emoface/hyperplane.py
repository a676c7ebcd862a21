"""Emotion hyperplanes over expression-parameter space.

One linear classifier per emotion tag, trained one-vs-rest on labeled
expression vectors with seeded subgradient descent on the regularized hinge
loss (Pegasos-style, with an unregularized-bias trick via feature
augmentation and the usual 1/sqrt(lambda) ball projection).  The stored
normal is unit length, so the manipulation weight tau is the exact score
shift: refining alpha by tau moves its decision value by tau.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from .features import EXPR_DIM


class PlaneError(RuntimeError):
    pass


class InterpolationError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExpression:
    alpha: np.ndarray
    emotion_tag: str
    mar: float
    speaker_id: str


@dataclass
class PlaneConfig:
    lambda_reg: float = 1e-3
    epochs: int = 2000
    batch_size: int = 0        # 0 = full batch (exact label-swap symmetry)
    k_bins: int = 5
    seed: int = 0


@dataclass
class EmotionHyperplane:
    normal: np.ndarray          # unit 10-vector
    bias: float
    emotion_tag: str
    train_accuracy: float

    def score(self, alpha):
        return float(np.dot(self.normal, alpha) + self.bias)


def mar_bins(samples, k=5):
    """Split samples into k equal-width mouth-openness bins.

    Bins cover [min mar, max mar]; the last bin is right-closed.  If every
    sample has the same mar, bin 0 holds everything.
    """
    if not samples:
        raise PlaneError("mar_bins needs at least one sample")
    mars = np.array([s.mar for s in samples], dtype=np.float64)
    lo, hi = float(mars.min()), float(mars.max())
    groups = [[] for _ in range(k)]
    if hi == lo:
        groups[0] = list(samples)
        return groups
    scaled = (mars - lo) / (hi - lo) * k
    idx = np.minimum(scaled.astype(np.int64), k - 1)
    for s, b in zip(samples, idx):
        groups[int(b)].append(s)
    return groups


def balance_groups(groups, seed=0):
    """Downsample every non-empty group to the smallest non-empty size."""
    sizes = [len(g) for g in groups if g]
    if not sizes:
        raise PlaneError("balance_groups needs at least one non-empty group")
    target = min(sizes)
    rng = np.random.default_rng(seed)
    out = []
    for g in groups:
        if not g:
            continue
        keep = sorted(rng.choice(len(g), size=target, replace=False))
        out.extend(g[i] for i in keep)
    return out


def _as_matrix(samples):
    if isinstance(samples, np.ndarray):
        mat = np.asarray(samples, dtype=np.float64)
    else:
        mat = np.array([np.asarray(getattr(s, "alpha", s), dtype=np.float64)
                        for s in samples])
    if mat.ndim != 2 or mat.shape[1] != EXPR_DIM:
        raise PlaneError(f"expected ({EXPR_DIM},)-vectors, got matrix {mat.shape}")
    return mat


def train_hyperplane(positives, negatives, config=None, emotion_tag=""):
    """Soft-margin linear classifier; positive score means target emotion."""
    cfg = config or PlaneConfig()
    pos = _as_matrix(positives)
    neg = _as_matrix(negatives)
    if len(pos) == 0 or len(neg) == 0:
        raise PlaneError("both classes must be non-empty")
    x = np.vstack([pos, neg])
    x_aug = np.hstack([x, np.ones((len(x), 1))])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    n = len(y)
    lam = cfg.lambda_reg
    batch = min(cfg.batch_size, n) if cfg.batch_size else n
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(EXPR_DIM + 1)
    for t in range(1, cfg.epochs + 1):
        if batch < n:
            idx = rng.choice(n, size=batch, replace=False)
            xb, yb = x_aug[idx], y[idx]
        else:
            xb, yb = x_aug, y
        viol = yb * (xb @ w) < 1.0
        eta = 1.0 / (lam * t)
        step = (yb[viol, None] * xb[viol]).sum(axis=0)
        w = (1.0 - eta * lam) * w + (eta / batch) * step
        nw = np.linalg.norm(w)
        if nw > radius:
            w *= radius / nw
    scores = x_aug @ w
    acc = float(((scores >= 0) == (y > 0)).mean())
    nrm = np.linalg.norm(w[:EXPR_DIM])
    if nrm == 0.0:
        raise PlaneError("training produced a zero normal")
    return EmotionHyperplane(normal=w[:EXPR_DIM] / nrm, bias=float(w[EXPR_DIM] / nrm),
                             emotion_tag=emotion_tag, train_accuracy=acc)


def refine(alpha_tilde, tau, plane):
    """alpha_hat = alpha_tilde + tau * normal; tau=0 is the bit-exact identity."""
    alpha_tilde = np.asarray(alpha_tilde, dtype=np.float64)
    if tau == 0.0:
        return alpha_tilde.copy()
    return alpha_tilde + tau * plane.normal


def classify(plane, alpha):
    """(score, label); score 0 classifies as positive by convention."""
    s = plane.score(np.asarray(alpha, dtype=np.float64))
    return s, (1 if s >= 0.0 else -1)


def interpolate_planes(p1, p2, lam):
    """Unit blend of two normals; endpoints return the inputs exactly."""
    if not 0.0 <= lam <= 1.0:
        raise InterpolationError(f"lambda must be in [0,1], got {lam}")
    if lam == 0.0:
        return p1.normal.copy()
    if lam == 1.0:
        return p2.normal.copy()
    v = (1.0 - lam) * p1.normal + lam * p2.normal
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise InterpolationError("blended direction is numerically zero")
    return v / n


def crossfade_schedule(n_frames, switch_frame, span=12):
    """Per-frame lambda ramping 0 to 1 across `span` frames around the switch."""
    if span < 1:
        raise ValueError("span must be >= 1")
    f = np.arange(n_frames, dtype=np.float64)
    return np.clip((f - (switch_frame - span / 2.0)) / span, 0.0, 1.0)


def talking_stage_directions(p1, p2, n_frames, switch_frame, span=12):
    """(n_frames, 10) unit directions cross-fading from p1's normal to p2's."""
    lams = crossfade_schedule(n_frames, switch_frame, span)
    return np.array([interpolate_planes(p1, p2, float(l)) for l in lams]), lams


def train_planes_one_vs_rest(samples, config=None, tags=None):
    """MAR-balance the pool, then train one plane per tag against the rest."""
    cfg = config or PlaneConfig()
    groups = mar_bins(samples, k=cfg.k_bins)
    balanced = balance_groups(groups, seed=cfg.seed)
    all_tags = tags or sorted({s.emotion_tag for s in balanced})
    planes = {}
    for tag in all_tags:
        pos = [s for s in balanced if s.emotion_tag == tag]
        neg = [s for s in balanced if s.emotion_tag != tag]
        if not pos or not neg:
            raise PlaneError(f"tag {tag!r} lacks positive or negative samples")
        planes[tag] = train_hyperplane(pos, neg, cfg, emotion_tag=tag)
    return planes


def save_plane(plane, path, config=None, seed=None):
    doc = {
        "emotion_tag": plane.emotion_tag,
        "normal": [float(v) for v in plane.normal],
        "bias": plane.bias,
        "train_accuracy": plane.train_accuracy,
        "config": asdict(config) if config is not None else {},
        "seed": seed if seed is not None else (config.seed if config else 0),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_plane(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    normal = np.asarray(doc["normal"], dtype=np.float64)
    if normal.shape != (EXPR_DIM,):
        raise PlaneError(f"{path}: normal must have {EXPR_DIM} entries")
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise PlaneError(f"{path}: stored normal is not unit length")
    return EmotionHyperplane(normal=normal, bias=float(doc["bias"]),
                             emotion_tag=doc["emotion_tag"],
                             train_accuracy=float(doc["train_accuracy"]))
