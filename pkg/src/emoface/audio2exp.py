"""Audio-to-expression regression with fused cross-modal attention.

Per frame, the three projected feature streams of a neighbor window are
combined into two correlation matrices - one over the summed audio+emotion
rows, one over the text rows - whose sum drives the attention that produces
the audio hidden state.  The emotion and text streams keep their own
single-correlation attentions.  The current frame's three hidden rows are
concatenated and fed to two feed-forward heads: a 10-wide expression vector
and a scalar manipulation weight.

Training minimizes a many-to-one regression loss: distance of the refined
prediction to the speaker's own target plus `rho` times the distance to a
random same-emotion target from a different speaker.
"""

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_weights, save_weights
from .features import AUDIO_DIM, EMOTION_DIM, EXPR_DIM, TEXT_DIM, window
from .nn import MLP, adam_init, adam_step, mlp_apply, mlp_init, uniform_init

log = logging.getLogger(__name__)

MODES = ("full", "no_alignment")


class ConfigurationError(RuntimeError):
    pass


@dataclass
class AlignmentConfig:
    d: int = 512
    d_h: int = 512
    n: int = 5
    ffn_hidden: tuple = (512, 256, 256, 128)
    rho: float = 0.5
    lr: float = 5e-4
    iterations: int = 20000
    batch_size: int = 16
    seed: int = 0
    mode: str = "full"
    single_speaker_ok: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")


@dataclass
class AlignmentParams:
    config: AlignmentConfig
    e1: Tensor = None
    e2: Tensor = None
    e3: Tensor = None
    wq1: Tensor = None
    wk1: Tensor = None
    wv1: Tensor = None
    wq2: Tensor = None
    wk2: Tensor = None
    wv2: Tensor = None
    wv3: Tensor = None
    # plain self-attention variant ("no_alignment" ablation)
    wq: Tensor = None
    wk: Tensor = None
    wv: Tensor = None
    ffn1: MLP = None
    ffn2: MLP = None

    def named_params(self):
        cfg = self.config
        if cfg.mode == "full":
            names = ["e1", "e2", "e3", "wq1", "wk1", "wv1", "wq2", "wk2", "wv2", "wv3"]
        else:
            names = ["e1", "e2", "e3", "wq", "wk", "wv"]
        out = [(n, getattr(self, n)) for n in names]
        out += self.ffn1.named_params("ffn1")
        out += self.ffn2.named_params("ffn2")
        return out

    def params(self):
        return [t for _, t in self.named_params()]


@dataclass
class AlignmentOutput:
    h_v: Tensor
    h_e: Tensor
    h_g: Tensor
    alpha_tilde: Tensor     # (10,)
    tau: Tensor             # scalar


def init_alignment_params(config, rng=None):
    rng = np.random.default_rng(config.seed) if rng is None else rng
    d, dh = config.d, config.d_h
    p = AlignmentParams(config=config)
    p.e1 = Tensor(uniform_init(rng, (AUDIO_DIM, d), AUDIO_DIM))
    p.e2 = Tensor(uniform_init(rng, (EMOTION_DIM, d), EMOTION_DIM))
    p.e3 = Tensor(uniform_init(rng, (TEXT_DIM, d), TEXT_DIM))
    if config.mode == "full":
        for name, shape in (("wq1", (d, dh)), ("wk1", (d, dh)), ("wv1", (d, d)),
                            ("wq2", (d, dh)), ("wk2", (d, dh)), ("wv2", (d, d)),
                            ("wv3", (d, d))):
            setattr(p, name, Tensor(uniform_init(rng, shape, shape[0])))
    else:
        for name, shape in (("wq", (3 * d, dh)), ("wk", (3 * d, dh)),
                            ("wv", (3 * d, 3 * d))):
            setattr(p, name, Tensor(uniform_init(rng, shape, shape[0])))
    ffn_sizes = [3 * d, *config.ffn_hidden]
    p.ffn1 = mlp_init(ffn_sizes + [EXPR_DIM], rng, hidden="tanh")
    p.ffn2 = mlp_init(ffn_sizes + [1], rng, hidden="tanh")
    return p


def project_features(frame, params):
    """Project one frame's raw features to the shared width d."""
    u = ad.matmul(np.asarray(frame.audio, dtype=np.float64), params.e1)
    e = ad.matmul(np.asarray(frame.emotion, dtype=np.float64), params.e2)
    g = ad.matmul(np.asarray(frame.text, dtype=np.float64), params.e3)
    return u, e, g


def fuse_window(win, params):
    """Stack the window's projections: S = audio+emotion rows, plus text and audio."""
    u = ad.matmul(np.asarray(win.audio, dtype=np.float64), params.e1)
    e = ad.matmul(np.asarray(win.emotion, dtype=np.float64), params.e2)
    g = ad.matmul(np.asarray(win.text, dtype=np.float64), params.e3)
    s = ad.add(u, e)
    return s, g, u


def fused_attention(s, g, v, params):
    """Attention over window rows with summed audio-emotion and text logits."""
    dh = params.config.d_h
    inv = 1.0 / np.sqrt(dh)
    c_ve = ad.matmul(ad.matmul(s, params.wq1), ad.transpose(ad.matmul(s, params.wk1)))
    c_g = ad.matmul(ad.matmul(g, params.wq2), ad.transpose(ad.matmul(g, params.wk2)))
    h_v = ad.matmul(ad.softmax_rows(ad.scale(ad.add(c_ve, c_g), inv)),
                    ad.matmul(v, params.wv1))
    h_e = ad.matmul(ad.softmax_rows(ad.scale(c_ve, inv)), ad.matmul(s, params.wv2))
    h_g = ad.matmul(ad.softmax_rows(ad.scale(c_g, inv)), ad.matmul(g, params.wv3))
    return h_v, h_e, h_g


def predict_expression(h_v, h_e, h_g, params):
    """Read the current-frame (last) row of each stream and run both heads."""
    last = h_v.shape[0] - 1
    cat = ad.concat([ad.take_row(h_v, last), ad.take_row(h_e, last),
                     ad.take_row(h_g, last)])
    alpha_tilde = mlp_apply(params.ffn1, cat)
    tau = ad.reshape(mlp_apply(params.ffn2, cat), ())
    return AlignmentOutput(h_v, h_e, h_g, alpha_tilde, tau)


def _self_attention(win, params):
    u = ad.matmul(np.asarray(win.audio, dtype=np.float64), params.e1)
    e = ad.matmul(np.asarray(win.emotion, dtype=np.float64), params.e2)
    g = ad.matmul(np.asarray(win.text, dtype=np.float64), params.e3)
    x = ad.concat([u, e, g], axis=1)
    inv = 1.0 / np.sqrt(params.config.d_h)
    c = ad.matmul(ad.matmul(x, params.wq), ad.transpose(ad.matmul(x, params.wk)))
    h = ad.matmul(ad.softmax_rows(ad.scale(c, inv)), ad.matmul(x, params.wv))
    return h


def forward_window(win, params):
    """Window -> AlignmentOutput under the configured attention variant."""
    if params.config.mode == "no_alignment":
        h = _self_attention(win, params)
        last = h.shape[0] - 1
        cat = ad.take_row(h, last)
        alpha_tilde = mlp_apply(params.ffn1, cat)
        tau = ad.reshape(mlp_apply(params.ffn2, cat), ())
        return AlignmentOutput(h, h, h, alpha_tilde, tau)
    s, g, v = fuse_window(win, params)
    h_v, h_e, h_g = fused_attention(s, g, v, params)
    return predict_expression(h_v, h_e, h_g, params)


def contrastive_loss(alpha_hat, alpha_own, alpha_other, rho):
    """|own - pred| + rho * |other - pred| with Euclidean (unsquared) norms."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    loss = ad.l2norm(ad.sub(alpha_own, alpha_hat))
    if rho != 0.0:
        loss = ad.add(loss, ad.scale(ad.l2norm(ad.sub(alpha_other, alpha_hat)), rho))
    return loss


def refined_prediction(win, params, plane):
    """Forward pass plus tape-tracked refinement along the plane normal."""
    out = forward_window(win, params)
    alpha_hat = ad.add(out.alpha_tilde, ad.mul(out.tau, plane.normal))
    return out, alpha_hat


@dataclass
class TrainResult:
    params: AlignmentParams
    losses: list = field(default_factory=list)


def _sample_index(dataset):
    pairs = []
    for ci, (clip, truth) in enumerate(dataset):
        if truth.alphas.shape[0] != len(clip):
            raise ConfigurationError("truth length does not match clip length")
        pairs.extend((ci, fi) for fi in range(len(clip)))
    return pairs


def train_audio2exp(dataset, planes, config=None):
    """Seeded minibatch training of the alignment parameters.

    dataset: list of (InputClip, ClipTruth).  Every emotion tag present must
    have a trained plane; tags represented by a single speaker raise unless
    config.single_speaker_ok, in which case their contrastive term is
    dropped (rho treated as 0 for those samples).
    """
    cfg = config or AlignmentConfig()
    tags = {clip.emotion_tag for clip, _ in dataset}
    for tag in sorted(tags):
        if tag not in planes:
            raise ConfigurationError(f"no trained hyperplane for tag {tag!r}")
    by_tag = {}
    for ci, (clip, _) in enumerate(dataset):
        by_tag.setdefault(clip.emotion_tag, {}).setdefault(clip.speaker_id, []).append(ci)
    single = {tag for tag, speakers in by_tag.items() if len(speakers) < 2}
    if single and cfg.rho != 0.0:
        if not cfg.single_speaker_ok:
            raise ConfigurationError(
                f"tags with a single speaker need single_speaker_ok: {sorted(single)}")
        log.warning("tags %s have one speaker; contrastive term disabled for them",
                    sorted(single))

    params = init_alignment_params(cfg)
    opt = adam_init(params.params(), lr=cfg.lr)
    samples = _sample_index(dataset)
    ss = np.random.SeedSequence(cfg.seed)
    batch_rng, partner_rng = [np.random.default_rng(c) for c in ss.spawn(2)]

    losses = []
    for _ in range(cfg.iterations):
        idx = batch_rng.choice(len(samples), size=cfg.batch_size, replace=True)
        plist = params.params()
        ad.zero_grads(plist)
        with ad.Tape() as tape:
            total = None
            for k in idx:
                ci, fi = samples[k]
                clip, truth = dataset[ci]
                tag = clip.emotion_tag
                win = window(clip, fi, cfg.n)
                _, alpha_hat = refined_prediction(win, params, planes[tag])
                rho_k = 0.0 if tag in single else cfg.rho
                alpha_other = truth.alphas[fi]
                if rho_k != 0.0:
                    others = [c for sp, cl in by_tag[tag].items()
                              if sp != clip.speaker_id for c in cl]
                    oc = int(partner_rng.choice(others))
                    of = int(partner_rng.integers(len(dataset[oc][0])))
                    alpha_other = dataset[oc][1].alphas[of]
                term = contrastive_loss(alpha_hat, truth.alphas[fi], alpha_other, rho_k)
                total = term if total is None else ad.add(total, term)
            total = ad.scale(total, 1.0 / cfg.batch_size)
            tape.backward(total)
        adam_step(opt, plist, [p.grad for p in plist])
        losses.append(float(total.data))
    return TrainResult(params=params, losses=losses)


def eval_rmse(dataset, params, planes):
    """RMSE between refined predictions and ground truth over all frames/dims."""
    total, count = 0.0, 0
    for clip, truth in dataset:
        plane = planes[clip.emotion_tag]
        for fi in range(len(clip)):
            win = window(clip, fi, params.config.n)
            out = forward_window(win, params)
            ahat = out.alpha_tilde.data + float(out.tau.data) * plane.normal
            diff = ahat - truth.alphas[fi]
            total += float((diff * diff).sum())
            count += diff.size
    return float(np.sqrt(total / count))


def save_alignment(params, path):
    meta = asdict(params.config)
    meta["ffn_hidden"] = list(meta["ffn_hidden"])
    named = [(n, t.data) for n, t in params.named_params()]
    save_weights(path, named, meta={"alignment": meta})


def load_alignment(path):
    arrays, meta = load_weights(path)
    cfgd = dict(meta["alignment"])
    cfgd["ffn_hidden"] = tuple(cfgd["ffn_hidden"])
    cfg = AlignmentConfig(**cfgd)
    params = init_alignment_params(cfg)
    for name, tensor in params.named_params():
        stored = arrays[name]
        if stored.shape != tensor.data.shape:
            raise ConfigurationError(
                f"checkpoint shape {stored.shape} != expected {tensor.data.shape} "
                f"for {name!r}")
        tensor.data = stored.astype(np.float64)
    return params
