"""Experiment configuration.

A single TOML file with one table per section::

    seed = 0
    [loss]
    lambda1 = 10.0        # "λ1" is accepted as an alias
    [train]
    batch_size = 16

Missing keys take their defaults (which follow the published training table
where one exists); unknown keys and invalid values are errors naming the key.
Command-line overrides use the same dotted paths (``train.batch_size=16``) and
win over the file.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .errors import InvalidValue, ParseError, UnknownKey


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = -10.0
    window_s: float = 1.25
    overlap: float = 0.5

    def validate(self, p):
        _positive(p, self, "sample_rate", "frame_ms", "hop_ms", "n_mels", "window_s")
        if not 0.0 <= self.overlap < 1.0:
            raise InvalidValue(f"{p}.overlap", "must lie in [0, 1)")
        if not 0.0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise InvalidValue(f"{p}.fmax", "need 0 <= fmin < fmax <= sample_rate / 2")


@dataclass
class DataConfig:
    manifest: str = ""
    n_identities: int = 64
    dataset_seed: int = 0
    resolution: int = 64
    faces_min: int = 3
    faces_max: int = 7
    utterances: int = 2
    utterance_s: float = 12.0
    split_ratios: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])

    def validate(self, p):
        _positive(p, self, "n_identities", "faces_min", "utterances", "utterance_s")
        if self.resolution not in (64, 128):
            raise InvalidValue(f"{p}.resolution", "must be 64 or 128")
        if self.faces_max < self.faces_min:
            raise InvalidValue(f"{p}.faces_max", "must be >= faces_min")
        r = self.split_ratios
        if len(r) != 3 or any(x <= 0 for x in r) or not math.isclose(sum(r), 1.0, abs_tol=1e-9):
            raise InvalidValue(f"{p}.split_ratios", "three positive ratios summing to 1")


@dataclass
class EncoderConfig:
    kind: str = "inception"
    channels: list[int] = field(default_factory=lambda: [256, 384, 576, 864, 512])
    kernel_sizes: list[int] = field(default_factory=lambda: [2, 3, 5, 7])
    bn_momentum: float = 0.1

    @property
    def embed_dim(self) -> int:
        return self.channels[-1]

    def validate(self, p):
        if self.kind not in ("inception", "cnn"):
            raise InvalidValue(f"{p}.kind", "inception or cnn")
        if not self.channels or any(c <= 0 or c % len(self.kernel_sizes) for c in self.channels):
            raise InvalidValue(f"{p}.channels", "positive widths divisible by the branch count")
        if not 0 < self.bn_momentum <= 1:
            raise InvalidValue(f"{p}.bn_momentum", "must lie in (0, 1]")


@dataclass
class FuserConfig:
    dim: int = 512
    init: str = "mean"

    def validate(self, p):
        _positive(p, self, "dim")
        if self.init not in ("mean", "random"):
            raise InvalidValue(f"{p}.init", "mean or random")


@dataclass
class DecoderConfig:
    kind: str = "upsample"
    channels: list[int] = field(default_factory=lambda: [1024, 512, 256, 128, 64, 32])
    extra_channels: int = 16
    resolution: int = 64
    multi: bool = False
    upsample: str = "bilinear"

    def validate(self, p):
        if self.kind not in ("upsample", "deconv"):
            raise InvalidValue(f"{p}.kind", "upsample or deconv")
        if len(self.channels) != 6 or any(c <= 0 for c in self.channels):
            raise InvalidValue(f"{p}.channels", "exactly six positive widths")
        if self.resolution not in (64, 128):
            raise InvalidValue(f"{p}.resolution", "must be 64 or 128")
        if self.upsample not in ("bilinear", "nearest"):
            raise InvalidValue(f"{p}.upsample", "bilinear or nearest")
        _positive(p, self, "extra_channels")


@dataclass
class DiscConfig:
    channels: list[int] = field(default_factory=lambda: [64, 128, 256])
    extra_channels: int = 512
    hidden: int = 1024

    def validate(self, p):
        if len(self.channels) != 3 or any(c <= 0 for c in self.channels):
            raise InvalidValue(f"{p}.channels", "exactly three positive widths")
        _positive(p, self, "extra_channels", "hidden")


@dataclass
class LossConfig:
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 0.05
    lambda4: float = 100.0
    saturating: bool = False
    prob_eps: float = 1e-7

    def validate(self, p):
        for k in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v >= 0.0):
                raise InvalidValue(f"{p}.{k}", "must be finite and >= 0")
        if not 0.0 < self.prob_eps < 0.5:
            raise InvalidValue(f"{p}.prob_eps", "must lie in (0, 0.5)")


@dataclass
class TrainSection:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.98
    batch_size: int = 256
    stage1_iterations: int = 120000
    stage2_iterations: int = 360
    stage1_window_s: list[float] = field(default_factory=lambda: [1.0, 1.5])
    stage2_audio_s: list[float] = field(default_factory=lambda: [6.0, 25.0])
    ckpt_every: int = 10000
    log_every: int = 50
    divergence_patience: int = 3
    ablations: list[str] = field(default_factory=list)

    def validate(self, p):
        _positive(p, self, "lr", "batch_size", "stage1_iterations", "stage2_iterations",
                  "log_every", "divergence_patience")
        if self.ckpt_every < 0:
            raise InvalidValue(f"{p}.ckpt_every", "must be >= 0 (0 disables periodic checkpoints)")
        for k in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, k) < 1.0:
                raise InvalidValue(f"{p}.{k}", "must lie in [0, 1)")
        for k in ("stage1_window_s", "stage2_audio_s"):
            lo_hi = getattr(self, k)
            if len(lo_hi) != 2 or not 0.0 < lo_hi[0] <= lo_hi[1]:
                raise InvalidValue(f"{p}.{k}", "need [min, max] with 0 < min <= max")
        from .trainer import ABLATIONS
        for a in self.ablations:
            if a not in ABLATIONS:
                raise InvalidValue(f"{p}.ablations", f"unknown switch {a!r}")


@dataclass
class EvalConfig:
    runs: int = 10
    split: str = "test"
    audio_min_s: float = 5.0
    audio_max_s: float = 5.0
    no_fuser: bool = False
    ks: list[int] = field(default_factory=lambda: [1, 2, 5, 10])
    vfs_eps: float = 1e-12
    proxy_source: str = "reference"
    proxy_identities: int = 96
    proxy_faces: int = 6
    proxy_iterations: int = 600
    proxy_batch: int = 64
    proxy_width: int = 32
    proxy_embed_dim: int = 128
    proxy_lr: float = 1e-3
    proxy_seed: int = 12345

    def validate(self, p):
        _positive(p, self, "runs", "proxy_identities", "proxy_faces", "proxy_iterations",
                  "proxy_batch", "proxy_width", "proxy_embed_dim", "proxy_lr")
        if not 0.0 < self.audio_min_s <= self.audio_max_s:
            raise InvalidValue(f"{p}.audio_max_s", "need 0 < audio_min_s <= audio_max_s")
        if self.split not in ("train", "val", "test"):
            raise InvalidValue(f"{p}.split", "train, val or test")
        if self.proxy_source not in ("reference", "manifest"):
            raise InvalidValue(f"{p}.proxy_source", "reference or manifest")
        if not self.ks or any(k <= 0 for k in self.ks):
            raise InvalidValue(f"{p}.ks", "positive integers")


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    audio: AudioConfig = field(default_factory=AudioConfig)
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fuser: FuserConfig = field(default_factory=FuserConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            if dataclasses.is_dataclass(section):
                section.validate(f.name)
        if self.fuser.dim != self.encoder.embed_dim:
            raise InvalidValue("fuser.dim", f"must equal the encoder embedding width {self.encoder.embed_dim}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def loss_weights(self):
        from .objectives import LossWeights
        return LossWeights(self.loss.lambda1, self.loss.lambda2, self.loss.lambda3, self.loss.lambda4)


ALIASES = {"λ1": "lambda1", "λ2": "lambda2", "λ3": "lambda3", "λ4": "lambda4"}


def _positive(prefix, obj, *names):
    for n in names:
        v = getattr(obj, n)
        if not v > 0:
            raise InvalidValue(f"{prefix}.{n}", "must be > 0")


def _coerce(path: str, value: Any, default: Any):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidValue(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidValue(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValue(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidValue(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise InvalidValue(path, f"expected a list, got {value!r}")
        proto = default[0] if default else (value[0] if value else None)
        if proto is None:
            return list(value)
        return [_coerce(f"{path}[{i}]", v, proto) for i, v in enumerate(value)]
    raise InvalidValue(path, "unsupported value type")


def _merge(obj, values: dict, prefix: str = ""):
    names = {f.name: f for f in dataclasses.fields(obj)}
    for raw_key, value in values.items():
        key = ALIASES.get(raw_key, raw_key)
        path = f"{prefix}{key}"
        if key not in names:
            raise UnknownKey(f"{prefix}{raw_key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise InvalidValue(path, "expected a table")
            _merge(current, value, path + ".")
        else:
            if isinstance(value, dict):
                raise InvalidValue(path, "expected a value, got a table")
            setattr(obj, key, _coerce(path, value, current))


def from_dict(values: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    _merge(cfg, values)
    return cfg.validate()


def parse_override(item: str) -> tuple[str, Any]:
    """``"train.batch_size=16"`` to ``("train.batch_size", 16)``; values use TOML syntax,
    bare words fall back to strings."""
    if "=" not in item:
        raise ParseError(f"override {item!r} is not of the form key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, value


def _nest(flat: dict) -> dict:
    out: dict = {}
    for dotted, value in flat.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _deep_update(base: dict, extra: dict):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def loads_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        values = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from exc
    # dotted keys in the file itself are already nested by the TOML parser
    if overrides:
        _deep_update(values, _nest(overrides))
    return from_dict(values)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the file (if any), then ``overrides`` (dotted key -> value)."""
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text, overrides)


def smoke_config(**overrides) -> ExperimentConfig:
    """Quarter-width networks at 64 x 64 for CPU-scale runs."""
    cfg = ExperimentConfig()
    cfg.encoder.channels = [64, 96, 144, 216, 128]
    cfg.fuser.dim = 128
    cfg.decoder.channels = [256, 128, 64, 32, 16, 8]
    cfg.decoder.extra_channels = 8
    cfg.disc.channels = [16, 32, 64]
    cfg.disc.extra_channels = 128
    cfg.disc.hidden = 256
    cfg.train.batch_size = 16
    cfg.train.stage1_iterations = 2000
    cfg.train.ckpt_every = 0
    cfg.data.n_identities = 16
    if overrides:
        _merge(cfg, _nest(overrides))
    return cfg.validate()
