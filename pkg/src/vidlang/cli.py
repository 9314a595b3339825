"""Command-line entry points.

Subcommands: data synth, tokenizer train/encode, pretrain, finetune, eval,
ablate. Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import generate_synthetic_corpus, load_manifest, save_corpus
from .errors import ConfigError, DataError
from .harness import (AblationBudget, ExperimentConfig, load_checkpoint,
                      load_config_file, run_ablation, run_finetune,
                      run_pretrain, save_checkpoint, train_corpus_tokenizer)
from .vq import load_tokenizer, save_tokenizer, train_tokenizer


def _cmd_data_synth(args) -> int:
    corpus = generate_synthetic_corpus(args.n_clips, args.frames, args.resolution,
                                       args.seed)
    manifest = save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} clips, manifest at {manifest}")
    return 0


def _load_corpus(manifest_path: str):
    return [entry.load() for entry in load_manifest(manifest_path)]


def _cmd_tokenizer_train(args) -> int:
    corpus = _load_corpus(args.corpus)
    frames = np.concatenate([c.frames for c in corpus])
    model, history = train_tokenizer(frames, args.codebook_size, args.steps,
                                     args.seed, patch_size=args.patch_size)
    save_tokenizer(model, args.out)
    print(f"trained tokenizer on {len(frames)} frames; "
          f"final reconstruction mse {history[-1]:.6f}; saved to {args.out}")
    return 0


def _cmd_tokenizer_encode(args) -> int:
    model = load_tokenizer(args.ckpt)
    frames = np.load(args.infile)
    if frames.ndim == 3:
        frames = frames[None]
    grids = np.stack([model.tokenize(f) for f in frames])
    np.save(args.out, grids)
    print(f"encoded {len(frames)} frames to token grids at {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_config_file(args.config) if args.config else ExperimentConfig()
    tokenizer = load_tokenizer(args.tokenizer) if args.tokenizer else None
    if tokenizer is None and cfg.pretrain.mvm_active:
        if not args.train_tokenizer:
            raise ConfigError(
                "masked visual modeling needs --tokenizer or --train-tokenizer")
        from .harness import build_corpus
        corpus = build_corpus(cfg.resolved())
        tokenizer = train_corpus_tokenizer(cfg.resolved(), corpus)
    model, vocab, trace = run_pretrain(cfg, tokenizer=tokenizer, out_dir=args.out)
    print(f"pretrained {len(trace)} steps; final total loss {trace[-1]['total']:.4f}")
    return 0


def _cmd_finetune(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    from .harness import build_corpus
    corpus = build_corpus(ckpt.cfg)
    split = max(1, int(len(corpus) * 0.75))
    metrics = run_finetune(ckpt.model, ckpt.vocab, args.task,
                           corpus[:split], corpus[split:],
                           ckpt.cfg.n_frames, args.steps, ckpt.cfg.batch_size,
                           args.lr, ckpt.cfg.seed)
    if args.out:
        save_checkpoint(args.out, ckpt.model, None, ckpt.step, ckpt.cfg, ckpt.vocab)
    print(json.dumps({"task": args.task, **metrics}))
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    from .harness import build_corpus
    corpus = build_corpus(ckpt.cfg)
    split = max(1, int(len(corpus) * 0.75))
    metrics = run_finetune(ckpt.model, ckpt.vocab, args.task,
                           corpus[:split], corpus[split:],
                           ckpt.cfg.n_frames, 0, ckpt.cfg.batch_size,
                           0.0, ckpt.cfg.seed)
    print(json.dumps({"task": args.task, **metrics}))
    return 0


def _cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")]
    table = run_ablation(args.axis, seeds, AblationBudget())
    print(json.dumps(table, indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidlang")
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="corpus utilities")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)
    p_synth = data_sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--n-clips", type=int, required=True)
    p_synth.add_argument("--frames", type=int, default=4)
    p_synth.add_argument("--resolution", type=int, default=64)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=_cmd_data_synth)

    p_tok = sub.add_parser("tokenizer", help="visual tokenizer utilities")
    tok_sub = p_tok.add_subparsers(dest="tokenizer_command", required=True)
    p_tt = tok_sub.add_parser("train")
    p_tt.add_argument("--corpus", required=True, help="manifest path")
    p_tt.add_argument("--codebook-size", "--K", type=int, default=256, dest="codebook_size")
    p_tt.add_argument("--steps", type=int, default=800)
    p_tt.add_argument("--seed", type=int, default=0)
    p_tt.add_argument("--patch-size", type=int, default=8)
    p_tt.add_argument("--out", required=True)
    p_tt.set_defaults(func=_cmd_tokenizer_train)
    p_te = tok_sub.add_parser("encode")
    p_te.add_argument("--ckpt", required=True)
    p_te.add_argument("--in", dest="infile", required=True)
    p_te.add_argument("--out", required=True)
    p_te.set_defaults(func=_cmd_tokenizer_encode)

    p_pre = sub.add_parser("pretrain")
    p_pre.add_argument("--config")
    p_pre.add_argument("--tokenizer")
    p_pre.add_argument("--train-tokenizer", action="store_true")
    p_pre.add_argument("--out")
    p_pre.set_defaults(func=_cmd_pretrain)

    p_fine = sub.add_parser("finetune")
    p_fine.add_argument("--config")
    p_fine.add_argument("--task", required=True)
    p_fine.add_argument("--ckpt", required=True)
    p_fine.add_argument("--steps", type=int, default=200)
    p_fine.add_argument("--lr", type=float, default=1.2e-5)
    p_fine.add_argument("--out")
    p_fine.set_defaults(func=_cmd_finetune)

    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--task", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_abl = sub.add_parser("ablate")
    p_abl.add_argument("--axis", required=True,
                       choices=("video_encoding", "masking", "mvm_variant"))
    p_abl.add_argument("--seeds", default="0,1,2")
    p_abl.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
