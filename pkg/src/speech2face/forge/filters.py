"""Annotation-driven quality rules for face records.

The perception models that produce the annotations (landmarks, head pose,
emotion) are outside this package; the rules only consume their outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import tomli

from ..errors import InvalidValue, MissingAnnotation, ParseError, UnknownKey
from .manifest import FaceRecord, Identity, IdentityManifest


@dataclass(frozen=True)
class FilterRules:
    max_yaw_deg: float = 5.0
    min_pupil_distance: float = 30.0
    required_emotion: str = "neutral"
    check_yaw: bool = True
    check_pupils: bool = True
    check_emotion: bool = True
    min_faces: int = 3
    max_faces: int = 7


def load_rules(path) -> FilterRules:
    """Rules from a TOML file whose top-level keys are :class:`FilterRules` fields."""
    try:
        values = tomli.loads(Path(path).read_text())
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ParseError(f"cannot read filter rules {path}: {exc}") from exc
    known = {f.name: f.type for f in fields(FilterRules)}
    for key, value in values.items():
        if key not in known:
            raise UnknownKey(key)
        expected = type(getattr(FilterRules(), key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            values[key] = float(value)
        elif not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise InvalidValue(key, f"expected {expected.__name__}, got {value!r}")
    return FilterRules(**values)


@dataclass(frozen=True)
class FilterDecision:
    reasons: tuple[str, ...] = ()

    @property
    def keep(self) -> bool:
        return not self.reasons

    def __str__(self):
        return "keep" if self.keep else "reject(" + ", ".join(self.reasons) + ")"


def yaw_ok(rec: FaceRecord, rules: FilterRules) -> bool:
    if rec.yaw_deg is None:
        raise MissingAnnotation("yaw_deg")
    return abs(rec.yaw_deg) <= rules.max_yaw_deg


def pupils_ok(rec: FaceRecord, rules: FilterRules) -> bool:
    if rec.pupils is None:
        raise MissingAnnotation("pupils")
    return rec.pupil_distance >= rules.min_pupil_distance


def emotion_ok(rec: FaceRecord, rules: FilterRules) -> bool:
    if rec.emotion is None:
        raise MissingAnnotation("emotion")
    return rec.emotion.strip().lower() == rules.required_emotion


def apply_quality_filters(rec: FaceRecord, rules: FilterRules | None = None) -> FilterDecision:
    """Keep a record only if every enabled rule passes; list every violated rule."""
    rules = rules or FilterRules()
    checks = (("yaw", rules.check_yaw, yaw_ok),
              ("pupil_distance", rules.check_pupils, pupils_ok),
              ("emotion", rules.check_emotion, emotion_ok))
    reasons = tuple(name for name, enabled, rule in checks if enabled and not rule(rec, rules))
    return FilterDecision(reasons)


def filter_manifest(manifest: IdentityManifest, rules: FilterRules | None = None):
    """Apply the record rules, cap faces per identity, drop identities left with too few.

    Returns the filtered manifest and a ``{identity_id: [decision, ...]}`` log.
    """
    rules = rules or FilterRules()
    log = {}
    kept = []
    for ident in manifest.identities:
        decisions = [apply_quality_filters(f, rules) for f in ident.faces]
        log[ident.id] = decisions
        faces = [f for f, d in zip(ident.faces, decisions) if d.keep][: rules.max_faces]
        if len(faces) >= rules.min_faces:
            kept.append(Identity(ident.id, faces, list(ident.speech), ident.split))
    return IdentityManifest(kept), log
