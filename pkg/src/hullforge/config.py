"""Pipeline configuration: one JSON document, overridable from the command line."""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .net import Architecture, TrainConfig
from .patch import PatchSpec
from .pvh import FUSION_MODES
from .synth import SceneFamilySpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    root: str = "run"
    dataset: str = "dataset"
    grids: str = "grids"
    models: str = "models"
    meshes: str = "meshes"
    reports: str = "reports"

    def resolve(self, name):
        p = Path(getattr(self, name))
        return p if p.is_absolute() or name == "root" else Path(self.root) / p


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 240
    kind: str = "humanoid"
    families: int = 12
    test_families: int = 2
    supersample: int = 4
    jitter: float = 0.35
    cameras: int = 8
    ring_radius: float = 4.0
    ring_height: float = 2.0
    image_size: int = 128
    focal_px: float = 120.0

    def family_spec(self):
        return SceneFamilySpec(self.kind, self.families, self.test_families, self.supersample, self.jitter)


@dataclass(frozen=True)
class NetConfig:
    channels: tuple = (64, 64, 128, 128, 256)
    latent_dim: int = 100
    kernel: int = 3
    epochs: int = 10
    batch_size: int = 8
    rho: float = 0.95
    eps: float = 1e-6
    fill: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    synth: SynthConfig = field(default_factory=SynthConfig)
    resolution: int = 64
    patch_size: int = 32
    stride: int = 16
    fusion: str = "calibrated_sigmoid"
    low_views: tuple = (0, 1)
    high_views: tuple = (0, 1, 2, 3, 4, 5, 6, 7)
    eval_cameras: tuple = (4,)
    net: NetConfig = field(default_factory=NetConfig)
    threads: int = 0  # 0 = HULLFORGE_THREADS or 1

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self):
        out = []
        if self.fusion not in FUSION_MODES:
            out.append(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.patch_size > self.resolution:
            out.append(f"patch_size {self.patch_size} exceeds grid resolution {self.resolution}")
        if not 1 <= self.stride <= self.patch_size:
            out.append(f"stride must lie in [1, patch_size], got {self.stride}")
        n = self.synth.cameras
        for name in ("low_views", "high_views", "eval_cameras"):
            idx = getattr(self, name)
            if name != "eval_cameras" and not idx:
                out.append(f"{name} is empty")
            if any(not 0 <= i < n for i in idx):
                out.append(f"{name} {list(idx)} has indices outside the {n}-camera rig")
            if len(set(idx)) != len(idx):
                out.append(f"{name} has repeated cameras")
        if not set(self.low_views) <= set(range(n)):
            out.append("low_views must be a subset of the rig cameras")
        if self.threads < 0:
            out.append("threads must be >= 0")
        return out

    @property
    def patch_spec(self):
        return PatchSpec(self.patch_size, self.stride)

    @property
    def architecture(self):
        return Architecture(
            patch_size=self.patch_size,
            channels=tuple(self.net.channels),
            kernel=self.net.kernel,
            latent_dim=self.net.latent_dim,
        )

    @property
    def train_config(self):
        n = self.net
        return TrainConfig(n.epochs, n.rho, n.eps, n.batch_size, self.seed, self.architecture)

    def to_dict(self):
        d = asdict(self)
        for k in ("low_views", "high_views", "eval_cameras"):
            d[k] = list(d[k])
        d["net"]["channels"] = list(d["net"]["channels"])
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            for key, sub in (("paths", Paths), ("synth", SynthConfig), ("net", NetConfig)):
                if key in doc:
                    doc[key] = _sub(sub, doc[key], key)
            for key in ("low_views", "high_views", "eval_cameras"):
                if key in doc:
                    doc[key] = tuple(int(i) for i in doc[key])
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **kw):
        """Copy with top-level (``seed=...``) or nested (``net__epochs=...``) fields replaced."""
        top = {}
        nested = {}
        for k, v in kw.items():
            if v is None:
                continue
            if "__" in k:
                sec, name = k.split("__", 1)
                nested.setdefault(sec, {})[name] = v
            else:
                top[k] = v
        for sec, vals in nested.items():
            top[sec] = replace(getattr(self, sec), **vals)
        return replace(self, **top)


def _sub(cls, doc, name):
    if not isinstance(doc, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {unknown}")
    if "channels" in doc:
        doc = dict(doc, channels=tuple(int(c) for c in doc["channels"]))
    return cls(**doc)


def load_config(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return PipelineConfig.from_dict(doc)
