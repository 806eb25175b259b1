"""``srvg`` command line: ingest, train, generate, eval, export.

Progress goes to stdout, diagnostics to stderr, artifacts to files.  All
randomness comes from ``--seed``; when it is omitted a random seed is drawn
and printed so the run can be replayed.  ``SRVG_THREADS`` caps BLAS
threads (default 1, which keeps runs bit-reproducible).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics
from .checkpoint import load_checkpoint
from .errors import ConfigError, SRVGError
from .generation import GenSpec, generate_sequence, pick_seed_bar
from .mididata import (
    corpus_pairs,
    export_midi,
    load_dataset,
    midi_file_to_sequence,
    parse_midi,
    save_dataset,
)
from .training import load_config, parse_config, resume, train_loop

log = logging.getLogger("srvaegan")

MIDI_SUFFIXES = (".mid", ".midi")


def _say(*args):
    print(*args, flush=True)


def _midi_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"{directory} is not a directory")
    return sorted(p for p in directory.rglob("*") if p.suffix.lower() in MIDI_SUFFIXES and p.is_file())


def cmd_ingest(args):
    sequences, skipped = [], 0
    for path in _midi_files(args.midi_dir):
        try:
            seq = midi_file_to_sequence(path)
        except (SRVGError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped += 1
            continue
        _say(f"{path}: {len(seq)} bars" + (f" ({seq.dropped_notes} notes outside piano range)" if seq.dropped_notes else ""))
        if len(seq):
            sequences.append(seq)
    if not sequences:
        raise ConfigError(f"no parseable MIDI files with notes under {args.midi_dir} ({skipped} skipped)")
    save_dataset(args.out, sequences)
    _say(f"total: {sum(len(s) for s in sequences)} bars in {len(sequences)} sequences, {skipped} files skipped")
    return 0


def _seed(args):
    if args.seed is None:
        args.seed = secrets.randbelow(2**31)
        _say(f"seed: {args.seed}")
    return args.seed


def cmd_train(args):
    overrides = dict(
        batch_size=args.batch_size, lr_eg=args.lr_eg, lr_d=args.lr_d, beta1=args.beta1, epochs=args.epochs,
        max_iters=args.max_iters, seed=args.seed, checkpoint_interval=args.checkpoint_interval,
        dataset=args.dataset, log=args.log, checkpoint=args.out_checkpoint,
    )
    cfg = load_config(args.config, **overrides)
    if cfg.dataset is None:
        raise ConfigError("no dataset given (--dataset or 'dataset' in the config)")
    if cfg.checkpoint is None:
        raise ConfigError("no checkpoint path given (--out-checkpoint or 'checkpoint' in the config)")
    if args.seed is None and "seed" not in _config_keys(args.config) and not args.resume:
        cfg.seed = _seed(args)
    log_path = cfg.log or str(Path(cfg.checkpoint).with_suffix(".log.jsonl"))
    pairs = corpus_pairs(load_dataset(cfg.dataset))
    _say(f"{len(pairs[0])} training pairs, batch {cfg.batch_size}, {cfg.epochs} epochs")

    def progress(it, report):
        _say(f"iter {it}: L_E {report.l_e:.4f} L_D {report.l_d:.4f} L_G {report.l_g:.4f} L_l {report.l_fm:.4f}")

    if args.resume:
        resume(args.resume, pairs, cfg, log_path=log_path, checkpoint_path=cfg.checkpoint, callback=progress)
    else:
        train_loop(pairs, cfg, log_path=log_path, checkpoint_path=cfg.checkpoint, callback=progress)
    _say(f"checkpoint written to {cfg.checkpoint}")
    return 0


def _config_keys(path):
    if not path:
        return set()
    return set(parse_config(Path(path).read_text(encoding="utf-8")))


def cmd_generate(args):
    if args.mode == 1 and not args.dataset:
        args.parser.error("--mode 1 needs --dataset to pick the seed bar")
    seed = _seed(args)
    model, _, _ = load_checkpoint(args.checkpoint)
    source = load_dataset(args.dataset) if args.dataset else None
    sequences = []
    for k in range(args.samples):
        sample_seed = seed + k
        seed_bar = None
        if args.mode == 1:
            seed_bar = pick_seed_bar(source, np.random.default_rng([sample_seed, 4]), args.seed_index)
        spec = GenSpec(mode=args.mode, n_bars=args.bars, seed=sample_seed, seed_bar=seed_bar,
                       include_seed=args.include_seed, deterministic=args.deterministic)
        seq = generate_sequence(spec, model)
        counts = [int(np.count_nonzero(b >= 0.05)) for b in seq.bars]
        _say(f"sample {k}: non-zero cells per bar {counts}")
        sequences.append(seq)
    save_dataset(args.out, sequences)
    if args.midi:
        target = Path(args.midi)
        if len(sequences) == 1 and target.suffix.lower() in MIDI_SUFFIXES:
            export_midi(sequences[0], target)
        else:
            _export_all(sequences, target)
    _say(f"{len(sequences)} sequence(s) of {len(sequences[0])} bars written to {args.out}")
    return 0


def _load_samples(path):
    path = Path(path)
    if path.is_dir():
        notes, tokens = [], []
        for f in _midi_files(path):
            try:
                n = metrics.notes_from_midi(parse_midi(f.read_bytes()))
            except SRVGError as exc:
                log.warning("skipping %s: %s", f, exc)
                continue
            notes.append(n)
            tokens.append(metrics.tokens_from_notes(n))
        return notes, tokens
    sequences = load_dataset(path)
    notes = [metrics.notes_from_roll(s.bars) for s in sequences]
    tokens = [metrics.tokens_from_notes(n, len(s) * 16) for n, s in zip(notes, sequences)]
    return notes, tokens


def cmd_eval(args):
    notes, tokens = _load_samples(args.input)
    if not notes:
        raise ConfigError(f"no samples found in {args.input}")
    report = metrics.evaluate(notes, tokens)
    Path(args.out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    for line in metrics.summary_lines(report):
        _say(line)
    return 0


def _export_all(sequences, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(sequences) - 1)))
    for k, seq in enumerate(sequences):
        export_midi(seq, out_dir / f"seq_{k:0{width}d}.mid")
    return len(sequences)


def cmd_export(args):
    n = _export_all(load_dataset(args.input), args.out_dir)
    _say(f"{n} MIDI files written to {args.out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="srvg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a directory of MIDI files into a dataset file")
    p.add_argument("--midi-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train E, G and D on a dataset file")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--out-checkpoint")
    p.add_argument("--log", help="JSON-lines loss log (default: next to the checkpoint)")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-eg", type=float)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-interval", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate bar sequences from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", type=int, choices=(1, 2), default=1)
    p.add_argument("--bars", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--seed-index", type=int, help="flat bar index of the mode-1 seed bar")
    p.add_argument("--dataset", help="dataset supplying the mode-1 seed bar")
    p.add_argument("--samples", type=int, default=1, help="number of sequences to generate")
    p.add_argument("--include-seed", action="store_true")
    p.add_argument("--deterministic", action="store_true", help="decode z = mu instead of sampling")
    p.add_argument("--out", required=True)
    p.add_argument("--midi", help="also export MIDI (a .mid path, or a directory for several samples)")
    p.set_defaults(func=cmd_generate, parser=p)

    p = sub.add_parser("eval", help="compute metrics for a dataset file or a directory of MIDI files")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write every sequence of a dataset as a MIDI file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def _thread_limit():
    try:
        n = int(os.environ.get("SRVG_THREADS", "1"))
    except ValueError:
        n = 1
    return threadpool_limits(max(n, 1))


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "bars", 1) < 1 or getattr(args, "samples", 1) < 1:
        parser.error("--bars and --samples must be >= 1")
    try:
        with _thread_limit():
            return args.func(args)
    except (SRVGError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
