"""Command-line entry point.

Every subcommand accepts ``--config FILE`` and repeated ``--set key=value``
overrides. Outputs go under ``--out`` when given, otherwise under the output
root (``$SPEECH2FACE_OUTPUT`` if set, else the config's ``output_dir``).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import load_config, parse_override
from .errors import ConfigError, DataError, DivergenceDetected, Speech2FaceError

OUTPUT_ENV = "SPEECH2FACE_OUTPUT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("speech2face")


def _config(args):
    overrides = dict(parse_override(s) for s in args.set or [])
    return load_config(args.config, overrides)


def _root(args, cfg) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def _out(args, cfg, default: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else _root(args, cfg) / default


def _manifest(args, cfg):
    from .forge.dataset import synth_manifest
    from .forge.manifest import load_manifest
    if getattr(args, "manifest", None):
        return load_manifest(args.manifest)
    d = cfg.data
    if d.manifest:
        return load_manifest(d.manifest)
    return synth_manifest(d.n_identities, d.dataset_seed, d.resolution, (d.faces_min, d.faces_max),
                          d.utterances, d.utterance_s, tuple(d.split_ratios), cfg.audio.sample_rate)


# subcommands -------------------------------------------------------------------

def cmd_synth(args, cfg):
    from .forge.manifest import save_manifest
    if args.n_identities is not None:
        cfg.data.n_identities = args.n_identities
    if args.seed is not None:
        cfg.data.dataset_seed = args.seed
    cfg.validate()
    path = save_manifest(_manifest(argparse.Namespace(manifest=None), cfg), _out(args, cfg, "data") / "manifest.json")
    print(path)


def cmd_filter(args, cfg):
    from .forge.filters import FilterRules, filter_manifest, load_rules
    from .forge.manifest import save_manifest
    rules = load_rules(args.rules) if args.rules else FilterRules()
    kept, decisions = filter_manifest(_manifest(args, cfg), rules)
    out = _out(args, cfg, "filtered")
    path = save_manifest(kept, out / "manifest.json")
    rejected = {i: [list(d.reasons) for d in ds] for i, ds in decisions.items()}
    (out / "filter_log.json").write_text(json.dumps(rejected, sort_keys=True, indent=2))
    print(path)


def cmd_align(args, cfg):
    from .forge.align import align_record
    from .forge.manifest import save_manifest
    manifest = _manifest(args, cfg)
    size = args.size or cfg.data.resolution
    for ident in manifest.identities:
        ident.faces = [align_record(r, out_size=size) for r in ident.faces]
    print(save_manifest(manifest, _out(args, cfg, "aligned") / "manifest.json"))


def cmd_preprocess(args, cfg):
    from .audio import mel_segments
    from .pipeline import stft_config
    manifest = _manifest(args, cfg)
    out = _out(args, cfg, "mels")
    out.mkdir(parents=True, exist_ok=True)
    stft, index = stft_config(cfg.audio), {}
    for ident in manifest.identities:
        for k, rec in enumerate(ident.speech):
            seq = mel_segments(rec.load(), stft, cfg.audio.window_s, cfg.audio.overlap, ident.id)
            name = f"{ident.id}_{k}.npy"
            np.save(out / name, seq.as_array().astype(np.float32))
            index.setdefault(ident.id, []).append(name)
    (out / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2))
    print(out)


def cmd_train_stage1(args, cfg):
    from .trainer import train_stage1
    run = _out(args, cfg, "stage1")
    ckpt = train_stage1(cfg, _manifest(args, cfg), run_dir=run, iterations=args.iterations)
    print(ckpt.path)


def cmd_train_stage2(args, cfg):
    from .errors import MissingStage1
    from .trainer import Checkpoint, train_stage2
    if not args.stage1 or not Path(args.stage1).exists():
        raise MissingStage1(f"stage-1 checkpoint not found: {args.stage1}")
    stage1 = Checkpoint.load(args.stage1, cfg)
    run = _out(args, cfg, "stage2")
    ckpt = train_stage2(cfg, stage1, _manifest(args, cfg), run_dir=run, iterations=args.iterations)
    print(ckpt.path)


def _load_models(args, cfg):
    from .evaluation.proxy import reference_proxy
    from .trainer import Checkpoint
    ckpt = Checkpoint.load(args.checkpoint)
    proxy = ckpt.models.proxy or reference_proxy(cfg.eval)
    return ckpt, proxy


def cmd_eval(args, cfg):
    from .evaluation.protocol import evaluate
    from .report import emit_report
    from .trainer import read_loss_csv
    e = cfg.eval
    if args.runs is not None:
        e.runs = args.runs
    if args.audio_min_s is not None:
        e.audio_min_s = args.audio_min_s
    if args.audio_max_s is not None:
        e.audio_max_s = args.audio_max_s
    if args.no_fuser:
        e.no_fuser = True
    cfg.validate()
    ckpt, proxy = _load_models(args, cfg)
    report = evaluate(ckpt.models, _manifest(args, cfg), e, ckpt.config.audio, proxy, seed=cfg.seed,
                      config_hash=cfg.hash())
    losses_csv = Path(ckpt.path).parent / "losses.csv"
    losses = read_loss_csv(losses_csv) if losses_csv.exists() else []
    written = emit_report(report, losses, _out(args, cfg, "eval"))
    print(written["json"])


def cmd_generate(args, cfg):
    from .audio import read_wav
    from .forge.manifest import write_png
    from .models.decoder import dequantize, export_image
    from .pipeline import VoiceToFace
    ckpt, _ = _load_models(args, cfg)
    v2f = VoiceToFace(ckpt.models, ckpt.config.audio)
    out = _out(args, cfg, "faces")
    out.mkdir(parents=True, exist_ok=True)
    for wav in args.speech:
        face = v2f.faces([read_wav(wav)], use_fuser=not args.no_fuser)
        path = out / (Path(wav).stem + ".png")
        write_png(path, dequantize(export_image(face))[0].numpy())
        print(path)


def cmd_report(args, cfg):
    from .report import emit_report, load_report
    from .trainer import read_loss_csv
    losses = read_loss_csv(args.losses) if args.losses else []
    written = emit_report(load_report(args.metrics), losses, _out(args, cfg, "report"))
    print(written["json"])
    for note in written["notes"]:
        print("note:", note)


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="speech2face", description="Voice-to-face synthesis pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, manifest=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", help="output directory")
        if manifest:
            sp.add_argument("--manifest", help="manifest JSON (default: synthesise from data.*)")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "write a synthetic dataset", manifest=False)
    sp.add_argument("--n-identities", type=int)
    sp.add_argument("--seed", type=int, help="dataset seed")
    sp = add("filter", cmd_filter, "apply face quality rules")
    sp.add_argument("--rules", help="TOML file of filter rule overrides")
    sp = add("align", cmd_align, "align faces on the pupils")
    sp.add_argument("--size", type=int, help="output image size in pixels")
    add("preprocess", cmd_preprocess, "cache windowed log-mel features")
    sp = add("train-stage1", cmd_train_stage1, "train encoder, decoder and discriminators")
    sp.add_argument("--iterations", type=int)
    sp = add("train-stage2", cmd_train_stage2, "train the embedding fuser")
    sp.add_argument("--stage1", required=True, help="stage-1 checkpoint directory")
    sp.add_argument("--iterations", type=int)
    sp = add("eval", cmd_eval, "score a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--audio-min-s", type=float)
    sp.add_argument("--audio-max-s", type=float)
    sp.add_argument("--no-fuser", action="store_true")
    sp = add("generate", cmd_generate, "speech file(s) to face PNGs", manifest=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--no-fuser", action="store_true")
    sp.add_argument("speech", nargs="+", help="WAV files")
    sp = add("report", cmd_report, "render an existing metrics JSON", manifest=False)
    sp.add_argument("--metrics", required=True)
    sp.add_argument("--losses", help="loss CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceDetected as exc:
        print(f"training diverged: {exc} (checkpoint: {exc.checkpoint_path})", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Speech2FaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
