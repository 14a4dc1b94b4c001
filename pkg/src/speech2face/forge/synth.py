"""Synthetic paired voice/face identities with a known latent oracle.

Every identity is an 8-dimensional attribute vector in [-1, 1]. Attribute ``k``
drives one voice property and one face property, so a model can only map voice
to face by recovering the shared latent:

====  ==========================================  ===============================
attr  voice                                       face
====  ==========================================  ===============================
0     fundamental frequency 150 * 2**(0.7 a) Hz   face width (+ hair length via
                                                  the gender flag, set when a < 0)
1     first formant 600 * 2**(0.35 a) Hz          face height
2     second formant 1600 * 2**(0.3 a) Hz         skin tone
3     amplitude flutter rate 12 * 2**(0.5 a) Hz   hair colour
4     breath noise level                          hairline height
5     intonation range (syllable pitch spread)    nose length
6     third formant 3000 * 2**(0.25 a) Hz         mouth width
7     even-harmonic gain 2**(1.2 a)               iris colour / brow weight
====  ==========================================  ===============================

Speech content (syllable timing, vowel colour, intonation, pauses and
occasional noise bursts) comes from the noise seed alone, so the same identity
produces different utterances but always the same canonical face.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..audio import Waveform
from ..errors import DurationTooShort

N_ATTRIBUTES = 8
MIN_DURATION_S = 1.25
HARMONIC_CUTOFF_HZ = 4500.0
BREATH_BAND_HZ = 5000.0
VIBRATO_RATE_HZ = 5.5
VIBRATO_DEPTH = 0.01


@dataclass(frozen=True)
class IdentityLatent:
    id: str
    attributes: tuple[float, ...]
    gender_flag: int

    def __post_init__(self):
        if len(self.attributes) != N_ATTRIBUTES:
            raise ValueError(f"expected {N_ATTRIBUTES} attributes")
        if any(abs(a) > 1.0 for a in self.attributes):
            raise ValueError("attributes must lie in [-1, 1]")

    @classmethod
    def from_attributes(cls, id: str, attributes) -> "IdentityLatent":
        attrs = tuple(float(a) for a in attributes)
        return cls(id, attrs, int(attrs[0] < 0.0))

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.attributes, dtype=np.float64)


def _seed_words(*parts) -> list[int]:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def make_latent(dataset_seed: int, identity_id: str) -> IdentityLatent:
    """Deterministic latent for ``identity_id`` within a dataset seed."""
    rng = np.random.default_rng(_seed_words("latent", dataset_seed, identity_id))
    return IdentityLatent.from_attributes(identity_id, rng.uniform(-1.0, 1.0, N_ATTRIBUTES))


# voice -----------------------------------------------------------------------

@dataclass(frozen=True)
class VoiceParams:
    f0_hz: float
    formants_hz: tuple[float, float, float]
    flutter_hz: float
    breath: float
    intonation: float
    even_gain: float


def voice_params(latent: IdentityLatent) -> VoiceParams:
    a = latent.attributes
    return VoiceParams(
        f0_hz=150.0 * 2.0 ** (0.7 * a[0]),
        formants_hz=(600.0 * 2.0 ** (0.35 * a[1]),
                     1600.0 * 2.0 ** (0.3 * a[2]),
                     3000.0 * 2.0 ** (0.25 * a[6])),
        flutter_hz=12.0 * 2.0 ** (0.5 * a[3]),
        breath=0.02 + 0.18 * (a[4] + 1.0) / 2.0,
        intonation=0.02 + 0.2 * (a[5] + 1.0) / 2.0,
        even_gain=2.0 ** (1.2 * a[7]),
    )


def _spectral_envelope(freq: np.ndarray, formants: np.ndarray) -> np.ndarray:
    """Formant bumps on a flat floor; ``formants`` is (3, N) per sample."""
    gains = (1.0, 0.7, 0.8)
    out = np.full_like(freq, 0.06)
    for g, fk in zip(gains, formants):
        out += g * np.exp(-0.5 * (np.log2(freq / fk) / 0.2) ** 2)
    return out


def _syllable_track(n: int, sr: int, intonation: float, rng: np.random.Generator):
    """Piecewise-constant content controls plus a smooth loudness envelope."""
    pitch = np.ones(n)
    vowel = np.ones((3, n))
    env = np.zeros(n)
    pos = int(rng.integers(0, int(0.05 * sr)))
    while pos < n:
        length = int(rng.uniform(0.12, 0.30) * sr)
        stop = min(n, pos + length)
        seg = stop - pos
        ramp = np.sin(np.pi * np.arange(seg) / max(seg, 1)) ** 0.5
        env[pos:stop] = ramp * rng.uniform(0.7, 1.0)
        pitch[pos:stop] = 2.0 ** rng.uniform(-intonation, intonation)
        vowel[:, pos:stop] = 2.0 ** rng.uniform(-0.08, 0.08, size=(3, 1))
        pos = stop
        if rng.random() < 0.25:
            pos += int(rng.uniform(0.04, 0.15) * sr)
    return pitch, vowel, env


def _highpass_noise(n: int, cutoff_hz: float, sr: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[freqs < cutoff_hz] = 0.0
    return np.fft.irfft(spec, n)


def synth_voice(latent: IdentityLatent, duration_s: float, noise_seed: int,
                sample_rate: int = 16000, bursts: bool = True) -> Waveform:
    if duration_s < MIN_DURATION_S:
        raise DurationTooShort(f"need at least {MIN_DURATION_S}s of audio, got {duration_s}")
    p = voice_params(latent)
    sr = sample_rate
    n = int(round(duration_s * sr))
    rng = np.random.default_rng(_seed_words("voice", latent.id, latent.attributes, noise_seed))
    t = np.arange(n) / sr

    pitch, vowel, env = _syllable_track(n, sr, p.intonation, rng)
    vib_phase = rng.uniform(0, 2 * np.pi)
    f0 = p.f0_hz * pitch * (1.0 + VIBRATO_DEPTH * np.sin(2 * np.pi * VIBRATO_RATE_HZ * t + vib_phase))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    formants = np.asarray(p.formants_hz)[:, None] * vowel

    voiced = np.zeros(n)
    n_harm = int(HARMONIC_CUTOFF_HZ / f0.min())
    for h in range(1, n_harm + 1):
        fh = h * f0
        live = fh < HARMONIC_CUTOFF_HZ
        if not live.any():
            break
        amp = _spectral_envelope(np.maximum(fh, 1.0), formants) / h
        if h % 2 == 0:
            amp = amp * p.even_gain
        voiced += np.where(live, amp, 0.0) * np.sin(h * phase)
    flutter = 1.0 + 0.35 * np.sin(2 * np.pi * p.flutter_hz * t + rng.uniform(0, 2 * np.pi))
    voiced *= env * flutter
    rms = np.sqrt(np.mean(voiced ** 2)) + 1e-12
    voiced *= 0.1 / rms

    breath = _highpass_noise(n, BREATH_BAND_HZ, sr, rng)
    breath *= p.breath * 0.1 / (np.sqrt(np.mean(breath ** 2)) + 1e-12)
    signal = voiced + breath * np.maximum(env, 0.3)

    if bursts:
        n_bursts = rng.poisson(duration_s * 0.2)
        for _ in range(n_bursts):
            length = int(rng.uniform(0.15, 0.5) * sr)
            start = int(rng.integers(0, max(1, n - length)))
            stop = min(n, start + length)
            noise = rng.standard_normal(stop - start)
            noise = np.convolve(noise, np.ones(4) / 4, mode="same")
            taper = np.hanning(stop - start)
            signal[start:stop] += rng.uniform(0.1, 0.25) * taper * noise / (noise.std() + 1e-12)
    return Waveform(np.clip(signal, -1.0, 1.0), sr)


# face ------------------------------------------------------------------------

SKIN_LIGHT = np.array([0.96, 0.83, 0.72])
SKIN_DARK = np.array([0.42, 0.28, 0.19])
HAIR_DARK = np.array([0.08, 0.06, 0.05])
HAIR_LIGHT = np.array([0.86, 0.68, 0.36])
IRIS_BLUE = np.array([0.25, 0.45, 0.80])
IRIS_BROWN = np.array([0.35, 0.20, 0.08])
PUPIL_LEFT = (0.35, 0.4)
PUPIL_RIGHT = (0.65, 0.4)


@dataclass(frozen=True)
class FaceParams:
    half_width: float
    half_height: float
    skin: tuple[float, float, float]
    hair: tuple[float, float, float]
    hairline: float
    nose_length: float
    mouth_half_width: float
    iris: tuple[float, float, float]
    brow_thickness: float
    long_hair: bool


def face_params(latent: IdentityLatent) -> FaceParams:
    a = latent.attributes

    def lerp(c0, c1, x):
        w = (x + 1.0) / 2.0
        return tuple(float(v) for v in (1 - w) * c0 + w * c1)

    return FaceParams(
        half_width=0.27 - 0.045 * a[0],
        half_height=0.35 + 0.045 * a[1],
        skin=lerp(SKIN_DARK, SKIN_LIGHT, a[2]),
        hair=lerp(HAIR_DARK, HAIR_LIGHT, a[3]),
        hairline=0.25 + 0.05 * a[4],
        nose_length=0.10 + 0.05 * a[5],
        mouth_half_width=0.09 + 0.04 * a[6],
        iris=lerp(IRIS_BROWN, IRIS_BLUE, a[7]),
        brow_thickness=0.022 + 0.012 * a[7],
        long_hair=latent.gender_flag == 0,
    )


def pupil_coords(size: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """Pixel (x, y) centres of the left and right pupils on the canonical grid."""
    return ((PUPIL_LEFT[0] * size, PUPIL_LEFT[1] * size),
            (PUPIL_RIGHT[0] * size, PUPIL_RIGHT[1] * size))


def _ellipse(u, v, cu, cv, ru, rv, soft):
    r = np.sqrt(((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2)
    return 1.0 / (1.0 + np.exp(np.clip((r - 1.0) * min(ru, rv) / soft, -50, 50)))


def _box(u, v, u0, u1, v0, v1, soft):
    def step(x):
        return 1.0 / (1.0 + np.exp(np.clip(-x / soft, -50, 50)))
    return step(u - u0) * step(u1 - u) * step(v - v0) * step(v1 - v)


def render_face(latent: IdentityLatent, size: int = 64) -> np.ndarray:
    """Procedural portrait on a white background, ``(3, size, size)`` in [-1, 1]."""
    fp = face_params(latent)
    soft = 0.6 / size
    # pixel centres at integer coordinates
    v, u = (np.mgrid[0:size, 0:size].astype(np.float64)) / size
    img = np.ones((size, size, 3))

    def paint(mask, colour):
        nonlocal img
        mask = np.where(mask < 1e-9, 0.0, mask)   # keep the background exactly white
        img = img * (1.0 - mask[..., None]) + mask[..., None] * np.asarray(colour)

    face_cv = 0.5
    hair = np.asarray(fp.hair)
    if fp.long_hair:
        paint(_box(u, v, 0.5 - fp.half_width - 0.06, 0.5 + fp.half_width + 0.06, 0.3, 0.82, soft)
              * _ellipse(u, v, 0.5, 0.55, fp.half_width + 0.07, 0.45, soft), hair)
    paint(_box(u, v, 0.43, 0.57, 0.75, 1.2, soft), fp.skin)                       # neck
    paint(_ellipse(u, v, 0.5, 1.12, 0.42, 0.22, soft), (0.45, 0.5, 0.58))         # shoulders
    paint(_ellipse(u, v, 0.5, face_cv, fp.half_width, fp.half_height, soft), fp.skin)
    cap = _ellipse(u, v, 0.5, face_cv - 0.02, fp.half_width + 0.035, fp.half_height + 0.03, soft)
    paint(cap * _box(u, v, -1.0, 2.0, -1.0, face_cv - fp.half_height + fp.hairline, soft), hair)

    for (pu, pv) in (PUPIL_LEFT, PUPIL_RIGHT):
        paint(_box(u, v, pu - 0.065, pu + 0.065, pv - 0.085 - fp.brow_thickness, pv - 0.085, soft),
              0.6 * hair)
        paint(_ellipse(u, v, pu, pv, 0.062, 0.035, soft), (1.0, 1.0, 1.0))
        paint(_ellipse(u, v, pu, pv, 0.03, 0.03, soft), fp.iris)
        paint(_ellipse(u, v, pu, pv, 0.014, 0.014, soft), (0.02, 0.02, 0.02))

    skin = np.asarray(fp.skin)
    paint(_box(u, v, 0.485, 0.515, 0.45, 0.45 + fp.nose_length, soft), 0.8 * skin)
    paint(_ellipse(u, v, 0.5, 0.70, fp.mouth_half_width, 0.025, soft), (0.72, 0.22, 0.25))
    return (np.transpose(img, (2, 0, 1)) * 2.0 - 1.0).clip(-1.0, 1.0)


def photo_variant(face: np.ndarray, seed: int) -> np.ndarray:
    """A plausible re-capture of ``face``: lighting gradient, exposure and sensor noise."""
    rng = np.random.default_rng(_seed_words("photo", seed))
    c, h, w = face.shape
    img01 = (face + 1.0) / 2.0
    background = np.all(img01 > 0.999, axis=0)
    x = np.linspace(-0.5, 0.5, w)[None, :]
    y = np.linspace(-0.5, 0.5, h)[:, None]
    light = rng.uniform(0.93, 1.05) * (1.0 + rng.uniform(-0.15, 0.15) * x + rng.uniform(-0.08, 0.08) * y)
    out = img01 * light[None] + rng.normal(0.0, 0.012, size=img01.shape)
    out[:, background] = 1.0
    return (out.clip(0.0, 1.0) * 2.0 - 1.0)


def synth_pair(latent: IdentityLatent, duration_s: float, noise_seed: int,
               size: int = 64, sample_rate: int = 16000) -> tuple[Waveform, np.ndarray]:
    """One utterance and the canonical face of ``latent``."""
    return synth_voice(latent, duration_s, noise_seed, sample_rate), render_face(latent, size)
