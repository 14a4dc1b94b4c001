"""Versioned, atomically written checkpoint directories.

Layout::

    ckpt-<iter>/
        state.pt     torch-serialised state dicts
        meta.json    format tag, sha256 of state.pt, iteration, config hash, ...
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import shutil
import tempfile
import warnings
from pathlib import Path

import torch

from .errors import CorruptCheckpoint, IOFailure

FORMAT_TAG = "speech2face-ckpt"
FORMAT_VERSION = 1
STATE_FILE = "state.pt"
META_FILE = "meta.json"


class ConfigHashWarning(UserWarning):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(state: dict, path: str | Path, meta: dict | None = None) -> Path:
    """Write ``state`` (nested dicts of tensors / plain values) to directory ``path``.

    The directory is assembled next to its destination and renamed into place,
    so readers never observe a half-written checkpoint.
    """
    path = Path(path)
    buf = io.BytesIO()
    torch.save(state, buf)
    blob = buf.getvalue()
    record = dict(meta or {})
    record.update(format=FORMAT_TAG, format_version=FORMAT_VERSION, sha256=_sha256(blob))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
        (tmp / STATE_FILE).write_bytes(blob)
        (tmp / META_FILE).write_text(json.dumps(record, sort_keys=True, indent=2))
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except OSError as exc:
        raise IOFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_meta(path: str | Path) -> dict:
    path = Path(path)
    try:
        meta = json.loads((path / META_FILE).read_text())
    except (OSError, ValueError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint metadata in {path}: {exc}") from exc
    if meta.get("format") != FORMAT_TAG:
        raise CorruptCheckpoint(f"{path} is not a checkpoint (format={meta.get('format')!r})")
    if int(meta.get("format_version", 0)) > FORMAT_VERSION:
        raise CorruptCheckpoint(
            f"{path} uses checkpoint format {meta['format_version']}, newer than supported {FORMAT_VERSION}")
    return meta


def load_checkpoint(path: str | Path, expected_config_hash: str | None = None) -> tuple[dict, dict]:
    """Return ``(state, meta)`` after verifying the content hash.

    A config-hash mismatch is reported as a :class:`ConfigHashWarning`, not an error.
    """
    path = Path(path)
    meta = read_meta(path)
    try:
        blob = (path / STATE_FILE).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"missing state file in {path}: {exc}") from exc
    if _sha256(blob) != meta.get("sha256"):
        raise CorruptCheckpoint(f"content hash mismatch in {path}")
    try:
        state = torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CorruptCheckpoint(f"cannot deserialise {path}: {exc}") from exc
    if expected_config_hash is not None and meta.get("config_hash") != expected_config_hash:
        warnings.warn(f"checkpoint {path} was written under config {meta.get('config_hash')}, "
                      f"current config is {expected_config_hash}", ConfigHashWarning, stacklevel=2)
    return state, meta


def latest_checkpoint(run_dir: str | Path) -> Path | None:
    run_dir = Path(run_dir)
    found = []
    for p in run_dir.glob("ckpt-*"):
        suffix = p.name[len("ckpt-"):]
        if p.is_dir() and suffix.isdigit():
            found.append((int(suffix), p))
    return max(found)[1] if found else None


def parameter_hash(module: torch.nn.Module, buffers: bool = True) -> str:
    """sha256 over every parameter (and, by default, buffer) in name order."""
    h = hashlib.sha256()
    items = module.state_dict().items() if buffers else module.named_parameters()
    for name, t in sorted(items):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
