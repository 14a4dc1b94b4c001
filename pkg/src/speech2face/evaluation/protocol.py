"""Multi-run evaluation: crop fresh audio per identity, generate faces, score them."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..errors import EmptySplit, InsufficientAudio
from ..forge.synth import _seed_words
from ..pipeline import VoiceToFace, resize_faces
from .metrics import (EmbeddingMatrix, build_gt_matrix, recall_at_k, similarity_metrics, usable_ks, vfs)

METRIC_KEYS = ("cosine_mean", "l1_mean", "vfs")


@dataclass
class MetricsReport:
    runs: list[dict]
    ks: list[int]
    config_hash: str = ""
    split: str = "test"
    no_fuser: bool = False
    n_identities: int = 0
    audio_s: list[float] = field(default_factory=list)

    def __post_init__(self):
        for row in self.runs:
            rec = [row[f"recall@{k}"] for k in self.ks]
            if any(not 0.0 <= r <= 100.0 for r in rec) or any(b < a for a, b in zip(rec, rec[1:])):
                raise ValueError(f"recall values must lie in [0, 100] and not decrease with K: {rec}")

    @property
    def run_count(self) -> int:
        return len(self.runs)

    @property
    def aggregate(self) -> dict:
        keys = list(METRIC_KEYS) + [f"recall@{k}" for k in self.ks]
        out = {k: float(np.mean([r[k] for r in self.runs])) for k in keys}
        out["vfs_std"] = float(np.std([r["vfs"] for r in self.runs]))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aggregate"] = self.aggregate
        d["run_count"] = self.run_count
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(runs=d["runs"], ks=d["ks"], config_hash=d.get("config_hash", ""), split=d.get("split", "test"),
                   no_fuser=d.get("no_fuser", False), n_identities=d.get("n_identities", 0),
                   audio_s=d.get("audio_s", []))


def _crop(w, rng, lo_s: float, hi_s: float, min_s: float):
    sr = w.sample_rate
    length = min(int(round(rng.uniform(lo_s, hi_s) * sr)), len(w.samples))
    if length < int(round(min_s * sr)):
        raise InsufficientAudio(f"utterance of {w.duration_s:.2f}s is shorter than {min_s}s")
    start = int(rng.integers(0, len(w.samples) - length + 1))
    return w.crop(start, length)


def real_faces(identities, resolution: int = 64):
    return [resize_faces(torch.as_tensor(np.stack([r.load_image() for r in i.faces]), dtype=torch.float32),
                         resolution).numpy() for i in identities]


def evaluate(models, manifest, eval_cfg, audio_cfg, proxy, seed: int = 0, config_hash: str = "",
             identities=None) -> MetricsReport:
    """Run ``eval_cfg.runs`` seeded rounds over ``eval_cfg.split`` (or ``identities``).

    Each round crops one clip of ``[audio_min_s, audio_max_s]`` seconds per
    identity, generates a face, and scores the set against per-identity
    groundtruth rows built from that identity's real faces.
    """
    identities = list(identities if identities is not None else manifest.split(eval_cfg.split))
    if not identities:
        raise EmptySplit(f"split {eval_cfg.split!r} is empty")
    v2f = VoiceToFace(models, audio_cfg)
    ids = [i.id for i in identities]
    gt = build_gt_matrix(real_faces(identities), proxy, ids)
    ks = usable_ks(eval_cfg.ks, len(identities))
    min_s = 0.0 if eval_cfg.no_fuser else audio_cfg.window_s
    waves = [[s.load() for s in i.speech] for i in identities]
    runs = []
    for r in range(eval_cfg.runs):
        rng = np.random.default_rng(_seed_words("eval", seed, r))
        clips = []
        for ws in waves:
            w = ws[int(rng.integers(len(ws)))]
            clips.append(_crop(w, rng, eval_cfg.audio_min_s, eval_cfg.audio_max_s, min_s))
        faces = v2f.faces(clips, use_fuser=not eval_cfg.no_fuser)
        with torch.no_grad():
            gen = EmbeddingMatrix(proxy(faces).double().numpy(), ids)
            post = proxy.posteriors(faces).double().numpy()
        cos, l1 = similarity_metrics(gt, gen)
        row = {"run": r, "cosine_mean": cos, "l1_mean": l1, "vfs": vfs(post, eval_cfg.vfs_eps)}
        row.update({f"recall@{k}": v for k, v in recall_at_k(gt, gen, ks).items()})
        runs.append(row)
    return MetricsReport(runs, ks, config_hash, eval_cfg.split, eval_cfg.no_fuser, len(identities),
                         [eval_cfg.audio_min_s, eval_cfg.audio_max_s])
