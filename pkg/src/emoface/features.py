"""Per-frame feature clips: file I/O, transcript alignment, neighbor windows.

Upstream encoders are out of scope; clips arrive as files holding one audio
(768), one audio-emotion (768) and one text (4096) vector per frame, plus a
word list with millisecond timestamps.  `emit_synthetic_clip` generates
learnable stand-in clips whose features are a fixed seeded function of a
latent per-frame expression vector.
"""

import json
import zlib
from dataclasses import dataclass

import numpy as np

AUDIO_DIM = 768
EMOTION_DIM = 768
TEXT_DIM = 4096
EXPR_DIM = 10
SILENCE_TOKEN = 0
DEFAULT_FPS = 25

FEATURE_MAGIC = b"EFFT0001"
_FRAME_BYTES = (AUDIO_DIM + EMOTION_DIM + TEXT_DIM) * 4


class LoadError(RuntimeError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Word:
    token_id: int
    start_ms: int
    end_ms: int


@dataclass(frozen=True)
class FeatureFrame:
    """One frame's feature triple; arrays are float32 views into the clip."""

    index: int
    audio: np.ndarray
    emotion: np.ndarray
    text: np.ndarray
    token_id: int
    timestamp_ms: int


class InputClip:
    """Ordered frames plus emotion tag and speaker identity; immutable."""

    def __init__(self, audio, emotion, text, token_ids, emotion_tag, speaker_id,
                 fps=DEFAULT_FPS, words=(), timestamps_ms=None):
        audio = np.asarray(audio, dtype=np.float32)
        emotion = np.asarray(emotion, dtype=np.float32)
        text = np.asarray(text, dtype=np.float32)
        n = audio.shape[0]
        if n == 0:
            raise LoadError("clip must contain at least one frame")
        if audio.shape != (n, AUDIO_DIM) or emotion.shape != (n, EMOTION_DIM) \
                or text.shape != (n, TEXT_DIM):
            raise LoadError(
                f"feature dims must be {AUDIO_DIM}/{EMOTION_DIM}/{TEXT_DIM}, got "
                f"{audio.shape}/{emotion.shape}/{text.shape}")
        for name, arr in (("audio", audio), ("emotion", emotion), ("text", text)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0][0])
                raise LoadError(f"non-finite {name} features at frame {bad}")
        if fps <= 0:
            raise LoadError("fps must be positive")
        if timestamps_ms is None:
            timestamps_ms = [(i * 1000) // fps for i in range(n)]
        timestamps_ms = [int(t) for t in timestamps_ms]
        if len(timestamps_ms) != n:
            raise LoadError("timestamp count does not match frame count")
        for i in range(1, n):
            if timestamps_ms[i] <= timestamps_ms[i - 1]:
                raise LoadError(f"non-monotone timestamps at frame {i}")
        self.audio = audio
        self.emotion = emotion
        self.text = text
        self.token_ids = np.asarray(token_ids, dtype=np.int64)
        if self.token_ids.shape != (n,):
            raise LoadError("token id count does not match frame count")
        self.emotion_tag = str(emotion_tag)
        self.speaker_id = str(speaker_id)
        self.fps = int(fps)
        self.words = tuple(words)
        self.timestamps_ms = timestamps_ms
        self._frames = None
        for arr in (self.audio, self.emotion, self.text, self.token_ids):
            arr.setflags(write=False)

    def __len__(self):
        return self.audio.shape[0]

    @property
    def frames(self):
        if self._frames is None:
            self._frames = [
                FeatureFrame(i, self.audio[i], self.emotion[i], self.text[i],
                             int(self.token_ids[i]), self.timestamps_ms[i])
                for i in range(len(self))
            ]
        return self._frames


@dataclass
class Window:
    """n+1 feature rows ending at a frame, oldest first; leading pads are zero."""

    audio: np.ndarray
    emotion: np.ndarray
    text: np.ndarray
    token_ids: np.ndarray
    pad_count: int

    def __len__(self):
        return self.audio.shape[0]


@dataclass
class ClipTruth:
    """Generator-side ground truth for a synthetic clip."""

    alphas: np.ndarray          # (n_frames, 10)
    mar: np.ndarray             # (n_frames,) in [0, 1]
    emotion_tag: str = ""
    speaker_id: str = ""


def align_transcript(words, fps, n_frames):
    """Assign a token id to each frame by its center time.

    A frame's center is (i + 0.5) * 1000 / fps ms; the first word whose
    [start, end] interval contains it wins (boundary times therefore fall to
    the earlier word).  Frames outside every word get the silence token.
    """
    ws = [w if isinstance(w, Word) else Word(*w) for w in words]
    ws.sort(key=lambda w: (w.start_ms, w.end_ms))
    for a, b in zip(ws, ws[1:]):
        if b.start_ms < a.end_ms:
            raise AlignmentError(
                f"overlapping word intervals [{a.start_ms},{a.end_ms}] and "
                f"[{b.start_ms},{b.end_ms}]")
    out = []
    j = 0
    for i in range(n_frames):
        center = (i + 0.5) * 1000.0 / fps
        while j < len(ws) and ws[j].end_ms < center:
            j += 1
        if j < len(ws) and ws[j].start_ms <= center <= ws[j].end_ms:
            out.append(ws[j].token_id)
        else:
            out.append(SILENCE_TOKEN)
    return out


def window(clip, i, n):
    """Rows for frames i-n..i; missing leading frames become silence pads."""
    length = len(clip)
    if not (0 <= i < length):
        raise IndexError(f"frame {i} out of range for clip of length {length}")
    pad = max(0, n - i)
    lo = max(0, i - n)
    audio = np.zeros((n + 1, AUDIO_DIM), dtype=np.float32)
    emotion = np.zeros((n + 1, EMOTION_DIM), dtype=np.float32)
    text = np.zeros((n + 1, TEXT_DIM), dtype=np.float32)
    tokens = np.full(n + 1, SILENCE_TOKEN, dtype=np.int64)
    audio[pad:] = clip.audio[lo:i + 1]
    emotion[pad:] = clip.emotion[lo:i + 1]
    text[pad:] = clip.text[lo:i + 1]
    tokens[pad:] = clip.token_ids[lo:i + 1]
    return Window(audio, emotion, text, tokens, pad)


# ---------------------------------------------------------------------------
# feature files


def save_features(clip, path):
    manifest = {
        "version": 1,
        "fps": clip.fps,
        "emotion_tag": clip.emotion_tag,
        "speaker_id": clip.speaker_id,
        "n_frames": len(clip),
        "dims": {"audio": AUDIO_DIM, "emotion": EMOTION_DIM, "text": TEXT_DIM},
        "words": [{"token_id": w.token_id, "start_ms": w.start_ms, "end_ms": w.end_ms}
                  for w in clip.words],
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(np.uint32(len(mbytes)).tobytes())
        fh.write(mbytes)
        for i in range(len(clip)):
            fh.write(clip.audio[i].astype("<f4", copy=False).tobytes())
            fh.write(clip.emotion[i].astype("<f4", copy=False).tobytes())
            fh.write(clip.text[i].astype("<f4", copy=False).tobytes())


def load_features(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != FEATURE_MAGIC:
        raise LoadError(f"{path}: not a feature clip file")
    mlen = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    manifest = json.loads(raw[12:12 + mlen].decode("utf-8"))
    dims = manifest.get("dims", {})
    if (dims.get("audio"), dims.get("emotion"), dims.get("text")) != \
            (AUDIO_DIM, EMOTION_DIM, TEXT_DIM):
        raise LoadError(f"{path}: dimension mismatch in manifest: {dims}")
    n = int(manifest["n_frames"])
    payload = raw[12 + mlen:]
    if len(payload) < n * _FRAME_BYTES:
        complete = len(payload) // _FRAME_BYTES
        raise LoadError(
            f"{path}: payload truncated; last complete frame is {complete - 1} "
            f"of {n} expected")
    flat = np.frombuffer(payload[:n * _FRAME_BYTES], dtype="<f4").reshape(n, -1)
    audio = flat[:, :AUDIO_DIM]
    emotion = flat[:, AUDIO_DIM:AUDIO_DIM + EMOTION_DIM]
    text = flat[:, AUDIO_DIM + EMOTION_DIM:]
    words = [Word(int(w["token_id"]), int(w["start_ms"]), int(w["end_ms"]))
             for w in manifest.get("words", [])]
    fps = int(manifest["fps"])
    tokens = align_transcript(words, fps, n)
    return InputClip(audio, emotion, text, tokens,
                     emotion_tag=manifest["emotion_tag"],
                     speaker_id=manifest["speaker_id"],
                     fps=fps, words=words,
                     timestamps_ms=manifest.get("timestamps_ms"))


# ---------------------------------------------------------------------------
# synthetic clips

_MIXER_SEED = 20240
_VOCAB = 64


def _crc(s):
    return zlib.crc32(s.encode("utf-8"))


def _mixers():
    rng = np.random.default_rng(_MIXER_SEED)
    scale = 1.0 / np.sqrt(EXPR_DIM)
    return {
        "lin_a": rng.normal(0, scale, (EXPR_DIM, AUDIO_DIM)),
        "nl_a": rng.normal(0, scale, (EXPR_DIM, AUDIO_DIM)),
        "lin_e": rng.normal(0, scale, (EXPR_DIM, EMOTION_DIM)),
        "nl_e": rng.normal(0, scale, (EXPR_DIM, EMOTION_DIM)),
        "lin_g": rng.normal(0, scale, (EXPR_DIM, TEXT_DIM)),
        "tok": rng.normal(0, 0.3, (_VOCAB, TEXT_DIM)),
    }


_MIX = None


def _mix():
    global _MIX
    if _MIX is None:
        _MIX = _mixers()
    return _MIX


def tag_mean(emotion_tag, magnitude=1.5):
    """Deterministic per-tag cluster center in expression space."""
    rng = np.random.default_rng(_crc(emotion_tag))
    v = rng.normal(size=EXPR_DIM)
    return magnitude * v / np.linalg.norm(v)


def _speaker_offsets(speaker_id):
    rng = np.random.default_rng(_crc(speaker_id) ^ 0xA5A5)
    return (rng.normal(0, 0.2, AUDIO_DIM), rng.normal(0, 0.2, EMOTION_DIM),
            rng.normal(0, 0.2, TEXT_DIM))


def _synthetic_words(rng, n_frames, fps):
    total_ms = int(n_frames * 1000 / fps)
    words = []
    t = int(rng.integers(0, 80))
    while t < total_ms:
        dur = int(rng.integers(120, 400))
        words.append(Word(int(rng.integers(1, _VOCAB)), t, min(t + dur, total_ms)))
        t += dur + int(rng.integers(0, 160))
    return words


def emit_synthetic_clip(seed, n_frames, emotion_tag, speaker_id, fps=DEFAULT_FPS,
                        wander_scale=0.35, noise_scale=0.02, with_words=True):
    """Deterministic clip whose features encode a latent per-frame alpha.

    alpha(i) = tag mean + smooth seeded wander; features are a fixed linear +
    tanh mixture of alpha plus a speaker offset, token embedding and small
    seeded noise.  Returns (InputClip, ClipTruth).  With wander_scale=0,
    noise_scale=0 and with_words=False every frame is identical.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    key = np.uint64(seed) ^ (np.uint64(_crc(speaker_id)) << np.uint64(16)) \
        ^ np.uint64(_crc(emotion_tag))
    rng = np.random.default_rng(np.random.Philox(key=int(key)))
    mix = _mix()

    idx = np.arange(n_frames)[:, None]
    n_waves = 4
    amp = rng.uniform(0.12, 0.3, (n_waves, EXPR_DIM)) * wander_scale / 0.35 \
        if wander_scale > 0 else np.zeros((n_waves, EXPR_DIM))
    freq = rng.uniform(0.004, 0.05, (n_waves, EXPR_DIM))
    phase = rng.uniform(0, 2 * np.pi, (n_waves, EXPR_DIM))
    wander = sum(amp[k] * np.sin(2 * np.pi * freq[k] * idx + phase[k])
                 for k in range(n_waves))
    alphas = tag_mean(emotion_tag) + wander
    mar = 1.0 / (1.0 + np.exp(-1.5 * alphas[:, 0]))

    words = _synthetic_words(rng, n_frames, fps) if with_words else []
    tokens = np.asarray(align_transcript(words, fps, n_frames))

    off_a, off_e, off_g = _speaker_offsets(speaker_id)
    audio = alphas @ mix["lin_a"] + 0.15 * np.tanh(alphas @ mix["nl_a"]) + off_a
    emotion = alphas @ mix["lin_e"] + 0.15 * np.tanh(alphas @ mix["nl_e"]) + off_e
    text = alphas @ mix["lin_g"] + 0.3 * mix["tok"][tokens] + off_g
    if noise_scale > 0:
        audio = audio + rng.normal(0, noise_scale, audio.shape)
        emotion = emotion + rng.normal(0, noise_scale, emotion.shape)
        text = text + rng.normal(0, noise_scale, text.shape)

    clip = InputClip(audio.astype(np.float32), emotion.astype(np.float32),
                     text.astype(np.float32), tokens, emotion_tag, speaker_id,
                     fps=fps, words=words)
    truth = ClipTruth(alphas=alphas, mar=mar, emotion_tag=emotion_tag,
                      speaker_id=speaker_id)
    return clip, truth


# ---------------------------------------------------------------------------
# ground-truth label files (generator output, consumed by training commands)


def save_clip_truth(truths_with_files, path):
    """truths_with_files: list of (feature_file_name, ClipTruth)."""
    payload = {
        "version": 1,
        "clips": [
            {
                "file": name,
                "emotion_tag": t.emotion_tag,
                "speaker_id": t.speaker_id,
                "alphas": np.asarray(t.alphas).tolist(),
                "mar": np.asarray(t.mar).tolist(),
            }
            for name, t in truths_with_files
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_clip_truth(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    out = []
    for ent in payload["clips"]:
        out.append((ent["file"], ClipTruth(
            alphas=np.asarray(ent["alphas"], dtype=np.float64),
            mar=np.asarray(ent["mar"], dtype=np.float64),
            emotion_tag=ent["emotion_tag"], speaker_id=ent["speaker_id"])))
    return out
