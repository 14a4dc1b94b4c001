from __future__ import annotations

import numpy as np

from .manifest import FaceRecord, Identity, IdentityManifest, SpeechRecord, split_dataset
from .synth import _seed_words, make_latent, photo_variant, pupil_coords, render_face, synth_voice


def identity_name(k: int) -> str:
    return f"id{k:04d}"


def synth_identity(latent, seed: int, size: int = 64, n_faces: int = 3, n_utterances: int = 2,
                   utterance_s: float = 8.0, sample_rate: int = 16000) -> Identity:
    canonical = render_face(latent, size)
    faces = [FaceRecord(image=canonical if k == 0 else photo_variant(canonical, seed * 7919 + k),
                        pupils=pupil_coords(size), yaw_deg=0.0, emotion="neutral")
             for k in range(n_faces)]
    speech = [SpeechRecord(waveform=synth_voice(latent, utterance_s, noise_seed=seed * 1000 + k,
                                                sample_rate=sample_rate))
              for k in range(n_utterances)]
    return Identity(latent.id, faces, speech)


def synth_manifest(n_identities: int, seed: int = 0, size: int = 64, faces_range=(3, 7),
                   n_utterances: int = 2, utterance_s: float = 8.0, ratios=(0.8, 0.1, 0.1),
                   sample_rate: int = 16000, split: bool = True) -> IdentityManifest:
    """A fully in-memory synthetic dataset, split by identity."""
    rng = np.random.default_rng(_seed_words("manifest", seed))
    idents = []
    for k in range(n_identities):
        latent = make_latent(seed, identity_name(k))
        n_faces = int(rng.integers(faces_range[0], faces_range[1] + 1))
        idents.append(synth_identity(latent, seed * 100003 + k, size, n_faces, n_utterances,
                                     utterance_s, sample_rate))
    manifest = IdentityManifest(idents)
    return split_dataset(manifest, ratios, seed) if split else manifest
