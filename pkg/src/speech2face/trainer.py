"""Two-stage adversarial training.

Stage 1 trains the voice encoder, face decoder and both discriminators on short
single-window clips. Stage 2 freezes all of them and trains only the embedding
fuser on long clips cut into overlapping windows. Each stage-1 iteration
updates the discriminators first and the generator second.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import Waveform, log_mel_frames, mel_segments
from .checkpoint import latest_checkpoint, load_checkpoint, parameter_hash, save_checkpoint
from .config import ExperimentConfig, from_dict
from .errors import DivergenceDetected, EmptySplit, MissingStage1, NonFinite, UnknownSwitch
from .forge.synth import _seed_words
from .models.encoder import mel_batch
from .models.fuser import pad_sequences
from .objectives import LossBreakdown, adversarial_terms, aux_class_loss, conjugate, perceptual_loss, recon_l1
from .pipeline import ModelSet, build_models, decoder_outputs, output_resolutions, resize_faces, stft_config

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iter", "l1", "l_g", "l_c", "l_p", "conj", "d_loss")

_LAMBDA_SWITCHES = {"no_l1": "lambda1", "no_lg": "lambda2", "no_lc": "lambda3", "no_lp": "lambda4"}
ABLATIONS = frozenset({*_LAMBDA_SWITCHES, "baseline_encoder", "baseline_decoder"})


def apply_ablation(cfg: ExperimentConfig, switch: str) -> ExperimentConfig:
    """Copy of ``cfg`` with one ablation applied (and recorded in ``train.ablations``)."""
    if switch not in ABLATIONS:
        raise UnknownSwitch(f"unknown ablation {switch!r}; choose from {sorted(ABLATIONS)}")
    out = copy.deepcopy(cfg)
    if switch in _LAMBDA_SWITCHES:
        setattr(out.loss, _LAMBDA_SWITCHES[switch], 0.0)
    elif switch == "baseline_encoder":
        out.encoder.kind = "cnn"
    else:
        out.decoder.kind = "deconv"
    out.train.ablations = sorted(set(out.train.ablations) | {switch})
    return out


def resolve_ablations(cfg: ExperimentConfig) -> ExperimentConfig:
    """Apply every switch listed in ``train.ablations``; idempotent."""
    out = cfg
    for s in cfg.train.ablations:
        out = apply_ablation(out, s)
    return out


# data ------------------------------------------------------------------------

class TrainingData:
    """Train-split faces and speech, held in memory in model-ready form."""

    def __init__(self, identities, cfg: ExperimentConfig, resolution: int):
        if not identities:
            raise EmptySplit("training split is empty")
        for ident in identities:
            if not ident.faces or not ident.speech:
                raise EmptySplit(f"identity {ident.id} needs at least one face and one speech record")
        self.cfg = cfg
        self.stft = stft_config(cfg.audio)
        self.ids = [i.id for i in identities]
        self.faces = [resize_faces(torch.as_tensor(np.stack([r.load_image() for r in i.faces]),
                                                   dtype=torch.float32), resolution)
                      for i in identities]
        self.waves: list[list[Waveform]] = [[s.load() for s in i.speech] for i in identities]
        self._frames = None

    def __len__(self):
        return len(self.ids)

    @property
    def frames(self):
        """Log-mel frames of every full utterance, computed once."""
        if self._frames is None:
            self._frames = [[log_mel_frames(w.samples, self.stft).astype(np.float32) for w in ws]
                            for ws in self.waves]
        return self._frames

    def _pick(self, rng, batch: int):
        labels = rng.integers(0, len(self), size=batch)
        faces = torch.stack([self.faces[k][rng.integers(len(self.faces[k]))] for k in labels])
        utts = [int(rng.integers(len(self.waves[k]))) for k in labels]
        return labels, faces, utts

    def stage1_batch(self, rng, batch: int, window_s: float):
        """Single-window clips of ``window_s`` seconds starting on a frame boundary."""
        n_frames = self.stft.n_frames(int(round(window_s * self.stft.sample_rate)))
        labels, faces, utts = self._pick(rng, batch)
        clips = []
        for k, u in zip(labels, utts):
            frames = self.frames[k][u]
            t = min(n_frames, len(frames))
            start = int(rng.integers(0, len(frames) - t + 1))
            clips.append(frames[start:start + t])
        t = min(len(c) for c in clips)
        mel = mel_batch(np.stack([c[:t] for c in clips]))
        return mel, faces, torch.as_tensor(labels, dtype=torch.long)

    def stage2_batch(self, rng, batch: int, audio_s):
        """Per item a random long crop, cut into windows: list of ``(T_i, F, frames)`` arrays."""
        labels, faces, utts = self._pick(rng, batch)
        sr = self.stft.sample_rate
        stacks = []
        for k, u in zip(labels, utts):
            w = self.waves[k][u]
            length = min(int(round(rng.uniform(*audio_s) * sr)), len(w.samples))
            start = int(rng.integers(0, len(w.samples) - length + 1))
            seq = mel_segments(w.crop(start, length), self.stft, self.cfg.audio.window_s, self.cfg.audio.overlap)
            stacks.append(seq.as_array().astype(np.float32))
        return stacks, faces, torch.as_tensor(labels, dtype=torch.long)


# checkpoints -------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ExperimentConfig
    models: ModelSet
    stage: int
    iteration: int
    identity_ids: list
    losses: list = field(default_factory=list)
    optimizer_state: dict | None = None
    path: Path | None = None

    def metric_snapshot(self) -> dict:
        return dict(self.losses[-1]) if self.losses else {}

    def save(self, path) -> Path:
        state = {"models": self.models.state_dict(), "optimizer": self.optimizer_state or {}}
        meta = {
            "stage": self.stage,
            "iteration": self.iteration,
            "config_hash": self.config.hash(),
            "config": self.config.to_dict(),
            "identity_ids": list(self.identity_ids),
            "proxy_config": None if self.models.proxy is None else self.models.proxy.config(),
            "metrics": self.metric_snapshot(),
        }
        self.path = save_checkpoint(state, path, meta)
        return self.path

    @classmethod
    def load(cls, path, expected_config: ExperimentConfig | None = None) -> "Checkpoint":
        path = Path(path)
        if path.is_dir() and not (path / "meta.json").exists():
            found = latest_checkpoint(path)
            if found is not None:
                path = found
        state, meta = load_checkpoint(path, None if expected_config is None else expected_config.hash())
        cfg = from_dict(meta["config"])
        proxy = None
        if meta.get("proxy_config"):
            from .evaluation.proxy import ProxyFaceModel
            proxy = ProxyFaceModel(**meta["proxy_config"])
        models = build_models(cfg, len(meta["identity_ids"]), proxy)
        models.load_state_dict(state["models"])
        if proxy is not None:
            proxy.freeze()
        models.eval()
        return cls(cfg, models, meta["stage"], meta["iteration"], meta["identity_ids"],
                   losses=[meta["metrics"]] if meta.get("metrics") else [],
                   optimizer_state=state.get("optimizer"), path=path)


def write_loss_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOSS_COLUMNS})
    return path


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iter" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


# helpers -----------------------------------------------------------------------

def _freeze(module):
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _finite(*values) -> bool:
    return all(math.isfinite(float(v)) for v in values)


class _DivergenceGuard:
    def __init__(self, patience: int):
        self.patience = patience
        self.streak = 0

    def update(self, ok: bool) -> bool:
        """Record one iteration; True once the non-finite streak reaches the patience."""
        self.streak = 0 if ok else self.streak + 1
        return self.streak >= self.patience


def _generator_terms(models: ModelSet, real: dict, fake: dict, labels, cfg) -> LossBreakdown:
    """Loss terms for one batch.

    L1 and perceptual terms are summed over every output resolution with equal
    weight; the adversarial terms come from the final resolution only.
    """
    sat, eps = cfg.loss.saturating, cfg.loss.prob_eps
    l1 = l_p = 0.0
    per_res = {}
    for r in sorted(fake):
        r_l1 = recon_l1(real[r], fake[r])
        r_lp = perceptual_loss(models.proxy, real[r], fake[r])
        per_res[r] = {"l1": float(r_l1.detach()), "l_p": float(r_lp.detach())}
        l1, l_p = l1 + r_l1, l_p + r_lp
    top = max(fake)
    d_real, d_id = models.discriminators[top]
    with torch.no_grad():
        p_rr = d_real.probs(real[top])[:, 0]
    _, l_g = adversarial_terms(p_rr, d_real.probs(fake[top])[:, 0], saturating=sat, eps=eps)
    l_c = aux_class_loss(d_id.probs(fake[top]), labels, eps)
    return LossBreakdown(l1, l_g, l_c, l_p, per_resolution=per_res if len(fake) > 1 else {})


def _discriminator_loss(models: ModelSet, real: dict, fake: dict, labels, cfg):
    sat, eps = cfg.loss.saturating, cfg.loss.prob_eps
    total = 0.0
    for r, (d_real, d_id) in models.discriminators.items():
        d_adv, _ = adversarial_terms(d_real.probs(real[r])[:, 0], d_real.probs(fake[r].detach())[:, 0],
                                     saturating=sat, eps=eps)
        total = total + d_adv + aux_class_loss(d_id.probs(real[r]), labels, eps)
    return total


def _record(it, breakdown: LossBreakdown, d_loss) -> dict:
    def f(v):
        try:
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        except (TypeError, ValueError):
            return float("nan")
    return {"iter": it, "l1": f(breakdown.l1), "l_g": f(breakdown.l_g), "l_c": f(breakdown.l_c),
            "l_p": f(breakdown.l_p), "conj": f(breakdown.conjugated), "d_loss": f(d_loss)}


def _resolve_proxy(cfg, identities, proxy):
    if proxy is not None:
        return _freeze(proxy)
    from .evaluation.proxy import manifest_proxy, reference_proxy
    if cfg.eval.proxy_source == "manifest":
        return manifest_proxy(identities, cfg.eval)
    return reference_proxy(cfg.eval)


class OwnershipViolation(AssertionError):
    pass


def _check_owner(before: str, module, what: str):
    if parameter_hash(module, buffers=False) != before:
        raise OwnershipViolation(f"{what} parameters changed during the other player's update")


# stage 1 -----------------------------------------------------------------------

def train_stage1(cfg: ExperimentConfig, data, run_dir=None, proxy=None, check_ownership: bool = False,
                 iterations: int | None = None) -> Checkpoint:
    """Train encoder, decoder and discriminators on single-window clips.

    ``data`` is an :class:`IdentityManifest` (its train split is used) or a
    prepared :class:`TrainingData`. With ``run_dir`` set, loss CSV and
    checkpoints are written there.
    """
    cfg = resolve_ablations(cfg)
    identities = data.split("train") if hasattr(data, "split") else None
    resolution = max(output_resolutions(cfg))
    td = data if isinstance(data, TrainingData) else TrainingData(identities, cfg, resolution)
    proxy = _resolve_proxy(cfg, identities, proxy)
    resolutions = output_resolutions(cfg)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(_seed_words("stage1", cfg.seed))
    models = build_models(cfg, len(td), proxy)
    t = cfg.train
    opt_g = torch.optim.Adam(models.generator_parameters(), lr=t.lr, betas=(t.beta1, t.beta2))
    discs = models.discriminator_modules()
    opt_d = torch.optim.Adam(discs.parameters(), lr=t.lr, betas=(t.beta1, t.beta2))
    weights = cfg.loss_weights()
    generator = torch.nn.ModuleList([models.encoder, models.decoder])

    n_iter = iterations or t.stage1_iterations
    guard = _DivergenceGuard(t.divergence_patience)
    losses: list[dict] = []
    run_dir = None if run_dir is None else Path(run_dir)
    started = time.monotonic()

    def snapshot(it):
        return Checkpoint(cfg, models, 1, it, td.ids, losses,
                          {"g": opt_g.state_dict(), "d": opt_d.state_dict()})

    for it in range(1, n_iter + 1):
        models.encoder.train()
        models.decoder.train()
        discs.train()
        mel, faces, labels = td.stage1_batch(rng, t.batch_size, rng.uniform(*t.stage1_window_s))
        real = {r: resize_faces(faces, r) for r in resolutions}

        fake = decoder_outputs(models.decoder, models.encoder(mel))

        # discriminator update
        g_hash = parameter_hash(generator, buffers=False) if check_ownership else None
        d_loss = _discriminator_loss(models, real, fake, labels, cfg)
        d_ok = _finite(d_loss.detach())
        opt_d.zero_grad(set_to_none=True)
        if d_ok:
            d_loss.backward()
            opt_d.step()
        if check_ownership:
            _check_owner(g_hash, generator, "generator")

        # generator update
        d_hash = parameter_hash(discs, buffers=False) if check_ownership else None
        breakdown = _generator_terms(models, real, fake, labels, cfg)
        try:
            total = conjugate(breakdown, weights)
            g_ok = _finite(total.detach())
        except NonFinite:
            g_ok = False
        opt_g.zero_grad(set_to_none=True)
        if g_ok:
            total.backward()
            opt_g.step()
        if check_ownership:
            _check_owner(d_hash, discs, "discriminator")

        losses.append(_record(it, breakdown, d_loss))
        if guard.update(d_ok and g_ok):
            path = snapshot(it).save(run_dir / f"ckpt-{it}") if run_dir else None
            if run_dir:
                write_loss_csv(losses, run_dir / "losses.csv")
            raise DivergenceDetected(f"losses non-finite for {guard.patience} consecutive iterations "
                                     f"(stopped at iteration {it})", path)
        if it % t.log_every == 0:
            row = losses[-1]
            log.info("stage1 it %d/%d l1=%.4f l_g=%.4f l_c=%.4f l_p=%.4f d=%.4f (%.0fs)", it, n_iter,
                     row["l1"], row["l_g"], row["l_c"], row["l_p"], row["d_loss"], time.monotonic() - started)
        if run_dir and t.ckpt_every and it % t.ckpt_every == 0 and it != n_iter:
            snapshot(it).save(run_dir / f"ckpt-{it}")
            write_loss_csv(losses, run_dir / "losses.csv")

    models.eval()
    ckpt = snapshot(n_iter)
    if run_dir:
        ckpt.save(run_dir / f"ckpt-{n_iter}")
        write_loss_csv(losses, run_dir / "losses.csv")
    return ckpt


# stage 2 -----------------------------------------------------------------------

def train_stage2(cfg: ExperimentConfig, stage1: Checkpoint | None, data, run_dir=None,
                 iterations: int | None = None) -> Checkpoint:
    """Train only the fuser on long windowed clips; everything else stays fixed."""
    if stage1 is None:
        raise MissingStage1("stage 2 needs a stage-1 checkpoint")
    if isinstance(stage1, (str, Path)):
        if not Path(stage1).exists():
            raise MissingStage1(f"no stage-1 checkpoint at {stage1}")
        stage1 = Checkpoint.load(stage1)
    if stage1.stage not in (1, 2):
        raise MissingStage1(f"checkpoint stage {stage1.stage} is not a stage-1 checkpoint")
    cfg = resolve_ablations(cfg)
    models = copy.deepcopy(stage1.models)
    for m in (models.encoder, models.decoder, *models.discriminator_modules(), models.proxy):
        _freeze(m)
    identities = data.split("train") if hasattr(data, "split") else None
    resolutions = output_resolutions(stage1.config)
    td = data if isinstance(data, TrainingData) else TrainingData(identities, cfg, max(resolutions))
    if td.ids != list(stage1.identity_ids):
        raise EmptySplit("stage-2 training identities differ from the stage-1 checkpoint")

    torch.manual_seed(cfg.seed + 1)
    rng = np.random.default_rng(_seed_words("stage2", cfg.seed))
    t = cfg.train
    fuser = models.fuser
    fuser.train()
    opt = torch.optim.Adam(fuser.parameters(), lr=t.lr, betas=(t.beta1, t.beta2))
    weights = cfg.loss_weights()
    n_iter = iterations or t.stage2_iterations
    guard = _DivergenceGuard(t.divergence_patience)
    losses: list[dict] = []
    run_dir = None if run_dir is None else Path(run_dir)

    def snapshot(it):
        return Checkpoint(cfg, models, 2, it, td.ids, losses, {"fuser": opt.state_dict()})

    for it in range(1, n_iter + 1):
        stacks, faces, labels = td.stage2_batch(rng, t.batch_size, t.stage2_audio_s)
        real = {r: resize_faces(faces, r) for r in resolutions}
        with torch.no_grad():
            e = models.encoder(mel_batch(np.concatenate(stacks)))
        seqs, start = [], 0
        for s in stacks:
            seqs.append(e[start:start + len(s)])
            start += len(s)
        E, mask = pad_sequences(seqs)
        fake = decoder_outputs(models.decoder, fuser(E, mask))
        breakdown = _generator_terms(models, real, fake, labels, cfg)
        with torch.no_grad():
            d_loss = _discriminator_loss(models, real, fake, labels, cfg)
        try:
            total = conjugate(breakdown, weights)
            ok = _finite(total.detach())
        except NonFinite:
            ok = False
        opt.zero_grad(set_to_none=True)
        if ok:
            total.backward()
            opt.step()
        losses.append(_record(it, breakdown, d_loss))
        if guard.update(ok):
            path = snapshot(it).save(run_dir / f"ckpt-{it}") if run_dir else None
            raise DivergenceDetected(f"stage-2 losses non-finite for {guard.patience} iterations", path)
        if it % t.log_every == 0:
            log.info("stage2 it %d/%d l1=%.4f conj=%.4f", it, n_iter, losses[-1]["l1"], losses[-1]["conj"])

    fuser.eval()
    ckpt = snapshot(n_iter)
    if run_dir:
        ckpt.save(run_dir / f"ckpt-{n_iter}")
        write_loss_csv(losses, run_dir / "losses.csv")
    return ckpt
