import copy
import dataclasses
import math

import numpy as np
import pytest
import torch

from speech2face.checkpoint import parameter_hash
from speech2face.errors import DivergenceDetected, EmptySplit, MissingStage1, UnknownSwitch
from speech2face.forge.manifest import Identity, IdentityManifest
from speech2face.objectives import LossWeights
from speech2face.pipeline import build_encoder
from speech2face.trainer import (ABLATIONS, LOSS_COLUMNS, Checkpoint, TrainingData, apply_ablation,
                                 read_loss_csv, resolve_ablations, train_stage1, train_stage2)
import speech2face.trainer as trainer_mod

from conftest import tiny_config, tiny_proxy


def fresh_proxy():
    torch.manual_seed(123)
    return tiny_proxy()


@pytest.fixture(scope="module")
def stage1_run(tiny_manifest, tmp_path_factory):
    run = tmp_path_factory.mktemp("stage1")
    cfg = tiny_config(**{"train.ckpt_every": 3})
    return cfg, train_stage1(cfg, tiny_manifest, run_dir=run, proxy=fresh_proxy()), run


# stage 1 ----------------------------------------------------------------------------

def test_loss_trajectory_is_seeded(tiny_manifest, stage1_run):
    cfg, first, _ = stage1_run
    second = train_stage1(cfg, tiny_manifest, proxy=fresh_proxy())
    assert len(first.losses) == len(second.losses) == 6
    for a, b in zip(first.losses, second.losses):
        for k in LOSS_COLUMNS:
            assert abs(a[k] - b[k]) <= 1e-6


def test_losses_are_finite(stage1_run):
    _, ck, _ = stage1_run
    assert all(math.isfinite(row[k]) for row in ck.losses for k in LOSS_COLUMNS)


def test_conjugated_value_is_weighted_sum(stage1_run):
    cfg, ck, _ = stage1_run
    w = LossWeights(*cfg.loss_weights().as_tuple())
    for row in ck.losses:
        expected = sum(lam * row[k] for lam, k in zip(w.as_tuple(), ("l1", "l_g", "l_c", "l_p")))
        assert abs(row["conj"] - expected) <= 1e-4 * max(1.0, expected)


def test_run_directory_layout(stage1_run):
    _, ck, run = stage1_run
    assert sorted(p.name for p in run.iterdir()) == ["ckpt-3", "ckpt-6", "losses.csv"]
    for d in ("ckpt-3", "ckpt-6"):
        assert (run / d / "state.pt").exists() and (run / d / "meta.json").exists()
    header = (run / "losses.csv").read_text().splitlines()[0]
    assert header == "iter,l1,l_g,l_c,l_p,conj,d_loss"
    rows = read_loss_csv(run / "losses.csv")
    assert [r["iter"] for r in rows] == list(range(1, 7))


def test_checkpoint_reload_is_bit_identical(stage1_run):
    _, ck, run = stage1_run
    back = Checkpoint.load(run)
    assert back.iteration == 6 and back.stage == 1 and back.identity_ids == ck.identity_ids
    mel = torch.randn(2, 40, 123, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        a = ck.models.decoder(ck.models.encoder(mel))
        b = back.models.decoder(back.models.encoder(mel))
    assert torch.equal(a, b)


def test_identity_without_speech_rejected(tiny_manifest):
    broken = copy.deepcopy(tiny_manifest)
    broken.identities[1] = dataclasses.replace(broken.identities[1], speech=[])
    with pytest.raises(EmptySplit):
        train_stage1(tiny_config(), broken, proxy=fresh_proxy())


def test_empty_train_split(tiny_manifest):
    held_out = IdentityManifest([dataclasses.replace(i, split="test") for i in tiny_manifest.identities])
    with pytest.raises(EmptySplit):
        train_stage1(tiny_config(), held_out, proxy=fresh_proxy())


def test_players_never_touch_each_others_parameters(tiny_manifest):
    ck = train_stage1(tiny_config(), tiny_manifest, proxy=fresh_proxy(), check_ownership=True, iterations=3)
    assert ck.iteration == 3


def test_divergence_guard_stops_and_dumps(tiny_manifest, tmp_path, monkeypatch):
    real_terms = trainer_mod._generator_terms

    def poisoned(*args, **kwargs):
        out = real_terms(*args, **kwargs)
        out.l1 = out.l1 * float("nan")
        return out
    monkeypatch.setattr(trainer_mod, "_generator_terms", poisoned)
    with pytest.raises(DivergenceDetected) as exc:
        train_stage1(tiny_config(), tiny_manifest, run_dir=tmp_path, proxy=fresh_proxy())
    assert exc.value.checkpoint_path is not None
    assert exc.value.checkpoint_path.name == "ckpt-3"
    assert len(read_loss_csv(tmp_path / "losses.csv")) == 3


def test_window_lengths_follow_config(tiny_manifest):
    cfg = tiny_config()
    td = TrainingData(tiny_manifest.split("train"), cfg, 64)
    rng = np.random.default_rng(0)
    mel, faces, labels = td.stage1_batch(rng, 4, 1.0)
    assert mel.shape == (4, 40, 98) and faces.shape == (4, 3, 64, 64)
    mel, _, _ = td.stage1_batch(rng, 4, 1.5)
    assert mel.shape[2] == 148
    assert labels.dtype == torch.long and labels.max() < len(td)


# stage 2 ----------------------------------------------------------------------------

def test_stage2_changes_only_the_fuser(tiny_manifest, stage1_run):
    cfg, ck, _ = stage1_run
    before = {name: parameter_hash(getattr(ck.models, name)) for name in ("encoder", "decoder", "fuser")}
    before_d = parameter_hash(ck.models.discriminator_modules())
    out = train_stage2(cfg, ck, tiny_manifest)
    for name in ("encoder", "decoder"):
        assert parameter_hash(getattr(out.models, name)) == before[name]
        assert parameter_hash(getattr(ck.models, name)) == before[name]
    assert parameter_hash(out.models.discriminator_modules()) == before_d
    assert parameter_hash(out.models.fuser) != before["fuser"]
    assert out.stage == 2 and len(out.losses) == 3


def test_stage2_default_iterations():
    assert tiny_config(**{"train.stage2_iterations": 360}).train.stage2_iterations == 360
    from speech2face.config import ExperimentConfig
    assert ExperimentConfig().train.stage2_iterations == 360
    assert ExperimentConfig().train.stage1_iterations == 120000


def test_stage2_needs_stage1(tiny_manifest, tmp_path):
    with pytest.raises(MissingStage1):
        train_stage2(tiny_config(), None, tiny_manifest)
    with pytest.raises(MissingStage1):
        train_stage2(tiny_config(), tmp_path / "nothing-here", tiny_manifest)


def test_stage2_batches_are_windowed(tiny_manifest):
    td = TrainingData(tiny_manifest.split("train"), tiny_config(), 64)
    stacks, faces, _ = td.stage2_batch(np.random.default_rng(0), 3, (2.0, 3.0))
    assert len(stacks) == 3 and faces.shape[0] == 3
    for s in stacks:
        assert s.shape[1:] == (123, 40) and 2 <= len(s) <= 3


# ablations ---------------------------------------------------------------------------

def test_no_lp_zeroes_only_lambda4():
    cfg = tiny_config()
    out = apply_ablation(cfg, "no_lp")
    assert out.loss_weights().as_tuple() == (10.0, 1.0, 0.05, 0.0)
    assert out.encoder == cfg.encoder and out.decoder == cfg.decoder
    assert cfg.loss.lambda4 == 100.0


def test_baseline_encoder_keeps_dimension():
    from speech2face.config import ExperimentConfig
    out = apply_ablation(ExperimentConfig(), "baseline_encoder")
    enc = build_encoder(out).eval()
    assert enc(torch.randn(1, 40, 123)).shape == (1, 512)


def test_baseline_decoder_matches_shapes():
    out = apply_ablation(tiny_config(), "baseline_decoder")
    assert out.decoder.kind == "deconv"


@pytest.mark.parametrize("pair", [("no_l1", "baseline_encoder"), ("no_lg", "no_lc"),
                                  ("baseline_decoder", "no_lp")])
def test_switches_commute(pair):
    a, b = pair
    cfg = tiny_config()
    ab = apply_ablation(apply_ablation(cfg, a), b)
    ba = apply_ablation(apply_ablation(cfg, b), a)
    assert ab.to_dict() == ba.to_dict()
    assert ab.train.ablations == sorted(pair)


def test_resolve_is_idempotent():
    cfg = tiny_config(**{"train.ablations": ["no_lc"]})
    once = resolve_ablations(cfg)
    assert resolve_ablations(once).to_dict() == once.to_dict()
    assert once.loss.lambda3 == 0.0


def test_unknown_switch():
    assert ABLATIONS == {"no_l1", "no_lg", "no_lc", "no_lp", "baseline_encoder", "baseline_decoder"}
    with pytest.raises(UnknownSwitch):
        apply_ablation(tiny_config(), "no_everything")
