"""Project configuration: one JSON document driving every command.

Unknown keys are rejected with the offending dotted path; paths a command
reads must exist when it starts.  Values can be overridden from the command
line with repeated `--set section.key=value` flags, and the config path
itself falls back to the EMOFACE_CONFIG environment variable.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .audio2exp import AlignmentConfig
from .hyperplane import PlaneConfig
from .renderfield import FieldConfig, RenderConfig

CONFIG_ENV = "EMOFACE_CONFIG"


class ConfigError(RuntimeError):
    pass


@dataclass
class PathsConfig:
    features_dir: str = "data/features"
    planes_dir: str = "data/planes"
    checkpoints_dir: str = "data/checkpoints"
    scenes_dir: str = "data/scenes"
    out_dir: str = "out"


@dataclass
class DataConfig:
    tags: tuple = ("happy", "sad")
    speakers: tuple = ("spk_a", "spk_b")
    frames_per_clip: int = 240
    heldout_frames: int = 60
    seed: int = 0


@dataclass
class SceneConfig:
    seed: int = 42
    n_poses: int = 8
    image_size: int = 32
    orbit_radius: float = 3.0


@dataclass
class TrainingConfig:
    total_iters: int = 200000
    lr: float = 5e-3
    rays_per_batch: int = 1024
    seed: int = 0
    lambda_photo: float = 1.0
    lambda_cord: float = 1e-3
    lambda_shape: float = 1e-9
    checkpoint_every: int = 0
    train_samples_per_ray: int = 16
    mode: str = "full"


@dataclass
class ProjectConfig:
    seed: int = 0
    scene: SceneConfig = dc_field(default_factory=SceneConfig)
    paths: PathsConfig = dc_field(default_factory=PathsConfig)
    data: DataConfig = dc_field(default_factory=DataConfig)
    audio2exp: AlignmentConfig = dc_field(default_factory=AlignmentConfig)
    hyperplane: PlaneConfig = dc_field(default_factory=PlaneConfig)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    render: RenderConfig = dc_field(default_factory=RenderConfig)
    training: TrainingConfig = dc_field(default_factory=TrainingConfig)


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if key not in fields:
            raise ConfigError(f"unknown key {dotted!r}")
        ftype = fields[key].type
        sub = _DATACLASS_FIELDS.get((cls, key))
        if sub is not None:
            kwargs[key] = _build(sub, value, dotted)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
        del ftype
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


_DATACLASS_FIELDS = {
    (ProjectConfig, "scene"): SceneConfig,
    (ProjectConfig, "paths"): PathsConfig,
    (ProjectConfig, "data"): DataConfig,
    (ProjectConfig, "audio2exp"): AlignmentConfig,
    (ProjectConfig, "hyperplane"): PlaneConfig,
    (ProjectConfig, "field"): FieldConfig,
    (ProjectConfig, "render"): RenderConfig,
    (ProjectConfig, "training"): TrainingConfig,
}


def load_config(path=None, overrides=()):
    """Load the project config (JSON or key=value) plus --set overrides."""
    path = path or os.environ.get(CONFIG_ENV)
    doc = {}
    if path:
        text = Path(path).read_text(encoding="utf-8")
        stripped = text.lstrip()
        if stripped.startswith("{"):
            doc = json.loads(text)
        else:
            doc = _parse_keyvalues(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        _set_dotted(doc, key.strip(), _parse_scalar(value.strip()))
    return _build(ProjectConfig, doc, "")


def _parse_keyvalues(text):
    doc = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        _set_dotted(doc, key.strip(), _parse_scalar(value.strip()))
    return doc


def _parse_scalar(text):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.startswith(("[", "{")):
        return json.loads(text)
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _set_dotted(doc, dotted, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override scalar {p!r} with a section")
    node[parts[-1]] = value


def require_dirs(cfg, names):
    """Commands call this for the paths they read; missing -> ConfigError."""
    for name in names:
        p = Path(getattr(cfg.paths, name))
        if not p.exists():
            raise ConfigError(f"required path does not exist: paths.{name} = {p}")


def ensure_dirs(cfg, names):
    for name in names:
        Path(getattr(cfg.paths, name)).mkdir(parents=True, exist_ok=True)
