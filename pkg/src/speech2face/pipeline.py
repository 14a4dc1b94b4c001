"""Model construction from a config and voice-to-face inference helpers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import STFTConfig, Waveform, log_mel_frames, mel_segments
from .models.adversaries import Discriminator
from .models.decoder import FaceDecoder
from .models.encoder import CNNEncoder, VoiceEncoder, mel_batch
from .models.fuser import EmbeddingFuser, pad_sequences


def stft_config(audio_cfg) -> STFTConfig:
    return STFTConfig(sample_rate=audio_cfg.sample_rate, frame_ms=audio_cfg.frame_ms, hop_ms=audio_cfg.hop_ms,
                      n_mels=audio_cfg.n_mels, fmin=audio_cfg.fmin, fmax=audio_cfg.fmax,
                      log_floor=audio_cfg.log_floor)


def build_encoder(cfg) -> nn.Module:
    e = cfg.encoder
    if e.kind == "cnn":
        return CNNEncoder(cfg.audio.n_mels, e.channels, bn_momentum=e.bn_momentum)
    return VoiceEncoder(cfg.audio.n_mels, e.channels, e.kernel_sizes, e.bn_momentum)


def build_decoder(cfg) -> FaceDecoder:
    d = cfg.decoder
    return FaceDecoder(cfg.encoder.embed_dim, d.channels, d.extra_channels, d.resolution, d.multi,
                       d.kind, d.upsample)


def output_resolutions(cfg) -> list[int]:
    return [64, 128] if cfg.decoder.multi else [cfg.decoder.resolution]


@dataclass
class ModelSet:
    """Everything a run trains or consults."""
    encoder: nn.Module
    fuser: EmbeddingFuser
    decoder: FaceDecoder
    discriminators: dict = field(default_factory=dict)   # resolution -> (D_real, D_id)
    proxy: nn.Module | None = None

    def generator_parameters(self):
        return list(self.encoder.parameters()) + list(self.decoder.parameters())

    def discriminator_modules(self) -> nn.ModuleList:
        return nn.ModuleList([m for pair in self.discriminators.values() for m in pair])

    def state_dict(self) -> dict:
        return {
            "encoder": self.encoder.state_dict(),
            "fuser": self.fuser.state_dict(),
            "decoder": self.decoder.state_dict(),
            "discriminators": {str(r): {"real": dr.state_dict(), "id": di.state_dict()}
                               for r, (dr, di) in self.discriminators.items()},
            "proxy": None if self.proxy is None else self.proxy.state_dict(),
        }

    def load_state_dict(self, state: dict):
        self.encoder.load_state_dict(state["encoder"])
        self.fuser.load_state_dict(state["fuser"])
        self.decoder.load_state_dict(state["decoder"])
        for r, (dr, di) in self.discriminators.items():
            dr.load_state_dict(state["discriminators"][str(r)]["real"])
            di.load_state_dict(state["discriminators"][str(r)]["id"])
        if self.proxy is not None and state.get("proxy") is not None:
            self.proxy.load_state_dict(state["proxy"])

    def eval(self) -> "ModelSet":
        for m in (self.encoder, self.fuser, self.decoder, *self.discriminator_modules()):
            m.eval()
        return self


def build_models(cfg, n_identities: int, proxy: nn.Module | None = None) -> ModelSet:
    # adversaries judge only the final (largest) output resolution
    r = max(output_resolutions(cfg))
    d = cfg.disc
    discs = {r: (Discriminator(2, r, d.channels, d.extra_channels, d.hidden),
                 Discriminator(n_identities, r, d.channels, d.extra_channels, d.hidden))}
    return ModelSet(build_encoder(cfg), EmbeddingFuser(cfg.fuser.dim, cfg.fuser.init), build_decoder(cfg),
                    discs, proxy)


def decoder_outputs(decoder: FaceDecoder, f: torch.Tensor) -> dict[int, torch.Tensor]:
    out = decoder(f)
    if decoder.multi:
        return {64: out[0], 128: out[1]}
    return {decoder.resolution: out}


def resize_faces(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-1] == size:
        return x
    if x.shape[-1] > size and x.shape[-1] % size == 0:
        return F.avg_pool2d(x, x.shape[-1] // size)
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


class VoiceToFace:
    """Inference wrapper: waveform in, face tensor out, in eval mode without gradients."""

    def __init__(self, models: ModelSet, audio_cfg):
        self.models = models
        self.audio_cfg = audio_cfg
        self.stft = stft_config(audio_cfg)

    def window_stack(self, w: Waveform) -> np.ndarray:
        seq = mel_segments(w, self.stft, self.audio_cfg.window_s, self.audio_cfg.overlap)
        return seq.as_array()

    @torch.no_grad()
    def fused_embeddings(self, waveforms) -> torch.Tensor:
        self.models.eval()
        stacks = [self.window_stack(w) for w in waveforms]
        flat = mel_batch(np.concatenate(stacks))
        e = self.models.encoder(flat)
        seqs, start = [], 0
        for s in stacks:
            seqs.append(e[start:start + len(s)])
            start += len(s)
        E, mask = pad_sequences(seqs)
        return self.models.fuser(E, mask)

    @torch.no_grad()
    def direct_embeddings(self, waveforms) -> torch.Tensor:
        """Encoder applied once to each whole clip; clips of unequal length run one by one."""
        self.models.eval()
        out = [self.models.encoder(mel_batch(log_mel_frames(w.samples, self.stft))) for w in waveforms]
        return torch.cat(out)

    @torch.no_grad()
    def faces(self, waveforms, use_fuser: bool = True) -> torch.Tensor:
        f = self.fused_embeddings(waveforms) if use_fuser else self.direct_embeddings(waveforms)
        out = decoder_outputs(self.models.decoder, f)
        return out[max(out)]
