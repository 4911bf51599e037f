"""Command-line entry point: ``dyadflow <subcommand> [options]``."""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import ConfigError, load_config
from .evaluation import EvaluationError, mismatch_table
from .features import audio as audio_mod
from .features.dataset import DatasetError, generate_synthetic_corpus, split_dataset, window_sessions
from .features.facial import savgol_smooth
from .features.io import (FormatError, read_face, read_sessions, read_speech, write_face,
                          write_feature_file, write_sessions, write_speech)
from .flow import NonFiniteError
from .gradcheck import model_gradcheck
from .model import DyadFlowModel, GenerationConfig, ModelError
from .train import Trainer, TrainingError


class UsageError(Exception):
    pass


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.generate = dataclasses.replace(cfg.generate, seed=args.seed)
    if getattr(args, "ablation", "none") != "none":
        flag = {"no-face": "no_face", "no-speech": "no_speech"}[args.ablation]
        cfg.model = dataclasses.replace(cfg.model, **{flag: True})
    if getattr(args, "no_neg_train", False):
        cfg.train = dataclasses.replace(cfg.train, negative_prob=0.0)
    if getattr(args, "temperature", None) is not None:
        cfg.generate = dataclasses.replace(cfg.generate, temperature=args.temperature)
    return cfg


def cmd_synth_data(args):
    cfg = _config(args)
    syn = cfg.synthetic
    if args.sessions is not None:
        syn = dataclasses.replace(syn, n_sessions=args.sessions)
    if args.frames is not None:
        syn = dataclasses.replace(syn, session_len=args.frames)
    rng = np.random.default_rng(cfg.train.seed if args.seed is None else args.seed)
    sessions = generate_synthetic_corpus(syn, rng)
    out = Path(args.out)
    if args.split:
        split = split_dataset(sessions, rng)
        for name in ("train", "val", "test"):
            write_sessions(out / name, getattr(split, name))
        write_sessions(out / "holdout", [split.holdout])
        print(f"wrote {len(split.train)}/{len(split.val)}/{len(split.test)} segments + 1 held-out session to {out}")
    else:
        path = write_sessions(out, sessions)
        print(f"wrote {len(sessions)} sessions to {path}")
    return 0


def cmd_featurize(args):
    audio = audio_mod.read_wav(args.audio)
    speech = audio_mod.acoustic_features(audio)
    write_speech(args.out_speech, speech)
    print(f"{args.out_speech}: {len(speech)} frames")
    if args.face:
        if not args.out_face:
            raise UsageError("--face needs --out-face")
        face = savgol_smooth(read_face(args.face))
        write_face(args.out_face, face)
        print(f"{args.out_face}: {len(face)} frames")
    if args.vad_other:
        if not args.vad_out:
            raise UsageError("--vad-other needs --vad-out")
        other = audio_mod.read_wav(args.vad_other)
        m1, m2 = audio_mod.vad_mask(audio, other)
        write_feature_file(args.vad_out, np.column_stack([m1, m2]).astype(float), ["vad_self", "vad_other"])
    return 0


def cmd_train(args):
    cfg = _config(args)
    sessions = read_sessions(args.manifest)
    if args.no_split:
        segments = sessions
    else:
        segments = split_dataset(sessions, np.random.default_rng(cfg.train.seed)).train
    if args.resume:
        trainer = ckpt_io.load_checkpoint(args.resume, metrics_path=args.metrics)
    else:
        model = DyadFlowModel(cfg.model, seed=cfg.train.seed)
        trainer = Trainer(model, cfg.train, metrics_path=args.metrics)
    epochs = cfg.train.epochs if args.epochs is None else args.epochs
    while trainer.epoch < epochs:
        m = trainer.train_epoch(segments, max_batches=args.max_batches)
        print(f"epoch {trainer.epoch} batches {m['batches']} nll {m['positive_nll']:.3f} "
              f"negatives {m['negative_batches']} skipped {m['skipped']}")
        if args.max_batches is not None:
            break
    ckpt_io.save_checkpoint(args.out, trainer)
    print(f"saved {args.out}")
    return 0


def cmd_generate(args):
    model = ckpt_io.load_model(args.checkpoint)
    gen = _config(args).generate
    speech_a, speech_i, face_i = read_speech(args.speech_a), read_speech(args.speech_i), read_face(args.face_i)
    init = read_face(args.init_frames) if args.init_frames else None
    out = model.generate(speech_a, speech_i, face_i, gen, init_frames=init)
    write_face(args.out, out)
    print(f"{args.out}: {len(out)} frames at temperature {gen.temperature}")
    return 0


def _parse_named(items):
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        out[name] = path
    return out


def cmd_evaluate(args):
    models = {name: ckpt_io.load_model(path) for name, path in _parse_named(args.checkpoint).items()}
    sessions = read_sessions(args.manifest)
    roles = tuple(args.roles)
    seqs = window_sessions(sessions, args.length, args.length, roles=roles)
    seed = 0 if args.seed is None else args.seed
    table = mismatch_table(models, seqs, np.random.default_rng(seed))
    print("total log-likelihood per sequence")
    print(table.format_text())
    print("\nlog-likelihood per frame")
    print(table.format_text(per_frame=True))
    if args.out:
        table.write_records(args.out)
    return 0


def cmd_gradcheck(args):
    results = model_gradcheck(seed=0 if args.seed is None else args.seed)
    worst = max(r.max_rel_error for r in results)
    for r in results:
        status = "ok" if r.max_rel_error < args.tolerance else "FAIL"
        print(f"{status:4s} {r.name:45s} n={r.n_entries:5d} rel={r.max_rel_error:.2e}")
    print(f"max relative error {worst:.2e} (tolerance {args.tolerance:g})")
    return 0 if worst < args.tolerance else 1


def build_parser():
    p = argparse.ArgumentParser(prog="dyadflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="INI configuration file")
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth-data", help="write a synthetic dyadic corpus")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--split", action="store_true", help="also split into train/val/test/holdout manifests")
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("featurize", help="audio (+ facial track) to feature files")
    sp.add_argument("--audio", required=True)
    sp.add_argument("--out-speech", required=True)
    sp.add_argument("--face")
    sp.add_argument("--out-face")
    sp.add_argument("--vad-other")
    sp.add_argument("--vad-out")
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="train a model from a session manifest")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--metrics", help="append-only metrics log")
    sp.add_argument("--ablation", choices=["none", "no-face", "no-speech"], default="none")
    sp.add_argument("--no-neg-train", action="store_true")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--max-batches", type=int, help="stop after this many batches (mid-epoch)")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--no-split", action="store_true", help="train on every session in the manifest")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="sample an avatar facial track")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--speech-a", required=True)
    sp.add_argument("--speech-i", required=True)
    sp.add_argument("--face-i", required=True)
    sp.add_argument("--init-frames")
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="log-likelihood table under mismatched conditioning")
    common(sp)
    sp.add_argument("--checkpoint", action="append", required=True, help="[name=]path, repeatable")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--length", type=int, default=80)
    sp.add_argument("--roles", nargs="+", choices=["a", "b"], default=["a", "b"])
    sp.add_argument("--out", help="machine-readable records (JSON lines)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"dyadflow: error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetError, EvaluationError, FormatError, ModelError, TrainingError,
            ckpt_io.CheckpointError, audio_mod.FeatureError, NonFiniteError, OSError,
            json.JSONDecodeError) as e:
        print(f"dyadflow: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
