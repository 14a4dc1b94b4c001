"""Identity manifests: face and speech records grouped by identity and split.

On disk a manifest is JSON::

    {"identities": [{"id": ..., "split": "train",
                     "faces": [{"uri": ..., "yaw_deg": 0.0, "emotion": "neutral",
                                "pupils": [[x, y], [x, y]]}],
                     "speech": ["clip.wav", ...]}]}

URIs are paths relative to the manifest file. In memory, records may also carry
their decoded payload so synthetic datasets never have to touch the disk.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..audio import Waveform, read_wav, write_wav
from ..errors import EmptyManifest, IOFailure

SPLITS = ("train", "val", "test")


@dataclass
class FaceRecord:
    uri: str | None = None
    image: np.ndarray | None = None          # 3 x H x W in [-1, 1]
    pupils: tuple[tuple[float, float], tuple[float, float]] | None = None
    yaw_deg: float | None = None
    emotion: str | None = None
    root: Path | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.pupils is not None:
            self.pupils = tuple(tuple(float(c) for c in p) for p in self.pupils)
            if self.image is not None:
                _, h, w = self.image.shape
                for x, y in self.pupils:
                    if not (0.0 <= x < w and 0.0 <= y < h):
                        raise ValueError(f"pupil ({x}, {y}) outside a {w}x{h} image")

    @property
    def pupil_distance(self) -> float | None:
        if self.pupils is None:
            return None
        (x0, y0), (x1, y1) = self.pupils
        return math.hypot(x1 - x0, y1 - y0)

    def load_image(self) -> np.ndarray:
        if self.image is None:
            if self.uri is None:
                raise IOFailure("face record has neither an image nor a uri")
            self.image = read_png(_resolve(self.root, self.uri))
        return self.image


@dataclass
class SpeechRecord:
    uri: str | None = None
    waveform: Waveform | None = None
    root: Path | None = field(default=None, repr=False, compare=False)

    def load(self) -> Waveform:
        if self.waveform is None:
            if self.uri is None:
                raise IOFailure("speech record has neither a waveform nor a uri")
            self.waveform = read_wav(_resolve(self.root, self.uri))
        return self.waveform


@dataclass
class Identity:
    id: str
    faces: list[FaceRecord] = field(default_factory=list)
    speech: list[SpeechRecord] = field(default_factory=list)
    split: str = "train"


@dataclass
class IdentityManifest:
    identities: list[Identity]

    def __len__(self):
        return len(self.identities)

    def split(self, name: str) -> list[Identity]:
        return [i for i in self.identities if i.split == name]

    def ids(self, split: str | None = None) -> list[str]:
        return [i.id for i in self.identities if split is None or i.split == split]


def _resolve(root: Path | None, uri: str) -> Path:
    p = Path(uri)
    return p if p.is_absolute() or root is None else root / p


def _rebase(rec, root: Path):
    """Point an existing relative uri at the same file from a new manifest directory."""
    if rec.uri is not None and rec.root is not None and not Path(rec.uri).is_absolute():
        target = (rec.root / rec.uri).resolve()
        rec.uri = Path(os.path.relpath(target, root.resolve())).as_posix()
    rec.root = root


def read_png(path: str | Path) -> np.ndarray:
    try:
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise IOFailure(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[-1, 1] channel-first image to an H x W x 3 uint8 array."""
    img = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    return np.round((img + 1.0) * 127.5).astype(np.uint8).transpose(1, 2, 0)


def write_png(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def split_dataset(manifest: IdentityManifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> IdentityManifest:
    """Assign whole identities to train/val/test by a seeded shuffle.

    Counts come from largest-remainder rounding of ``ratios * N`` so each split
    is within one identity of its target.
    """
    if not manifest.identities:
        raise EmptyManifest("cannot split an empty manifest")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0) or not math.isclose(ratios.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("split ratios must be three positive numbers summing to 1")
    n = len(manifest.identities)
    raw = ratios * n
    counts = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=object)
    labels[order[:counts[0]]] = "train"
    labels[order[counts[0]:counts[0] + counts[1]]] = "val"
    labels[order[counts[0] + counts[1]:]] = "test"
    return IdentityManifest([replace(ident, split=str(lab))
                             for ident, lab in zip(manifest.identities, labels)])


# serialisation ---------------------------------------------------------------

def _face_to_json(rec: FaceRecord) -> dict:
    out = {"uri": rec.uri}
    if rec.yaw_deg is not None:
        out["yaw_deg"] = rec.yaw_deg
    if rec.emotion is not None:
        out["emotion"] = rec.emotion
    if rec.pupils is not None:
        out["pupils"] = [list(p) for p in rec.pupils]
    return out


def manifest_to_json(manifest: IdentityManifest) -> dict:
    return {"identities": [
        {"id": ident.id, "split": ident.split,
         "faces": [_face_to_json(f) for f in ident.faces],
         "speech": [s.uri for s in ident.speech]}
        for ident in manifest.identities]}


def load_manifest(path: str | Path) -> IdentityManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IOFailure(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    idents = []
    for entry in doc.get("identities", []):
        faces = [FaceRecord(uri=f.get("uri"), pupils=f.get("pupils"), yaw_deg=f.get("yaw_deg"),
                            emotion=f.get("emotion"), root=root) for f in entry.get("faces", [])]
        speech = [SpeechRecord(uri=u, root=root) for u in entry.get("speech", [])]
        idents.append(Identity(str(entry["id"]), faces, speech, entry.get("split", "train")))
    return IdentityManifest(idents)


def save_manifest(manifest: IdentityManifest, path: str | Path, write_payloads: bool = True) -> Path:
    """Write the manifest JSON; in-memory payloads without a uri are saved next to it."""
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    for ident in manifest.identities:
        for k, face in enumerate(ident.faces):
            if face.uri is None and write_payloads and face.image is not None:
                face.uri = f"faces/{ident.id}_{k}.png"
                (root / "faces").mkdir(exist_ok=True)
                write_png(root / face.uri, face.image)
            _rebase(face, root)
        for k, sp in enumerate(ident.speech):
            if sp.uri is None and write_payloads and sp.waveform is not None:
                sp.uri = f"speech/{ident.id}_{k}.wav"
                (root / "speech").mkdir(exist_ok=True)
                write_wav(root / sp.uri, sp.waveform)
            _rebase(sp, root)
    path.write_text(json.dumps(manifest_to_json(manifest), indent=2, sort_keys=True))
    return path
