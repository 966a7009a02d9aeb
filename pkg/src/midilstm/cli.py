"""Command-line pipeline: ingest, train, generate, baseline, analyze.

Exit codes: 0 success, 1 runtime or domain error, 2 usage error or missing input.
Options can also come from ``--config FILE`` (``key = value`` lines, keys
named like the long options); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, encoding, generate as gen, midi_io, model
from .dataset import CorpusTooSmall, make_batches

log = logging.getLogger("midilstm")

THREADS_ENV = "MIDILSTM_THREADS"
MIDI_SUFFIXES = {".mid", ".midi"}


class UsageError(Exception):
    """Bad invocation or missing input; exit code 2."""


def write_atomic(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    known = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in values.items():
        action = known.get(key)
        if action is None:
            continue  # keys for other subcommands
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            # argparse runs string defaults through the option's type
            defaults[key] = value
    parser.set_defaults(**defaults)


# -- ingest ----------------------------------------------------------------------

def find_midi_files(root: Path) -> list[Path]:
    files = [p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in MIDI_SUFFIXES]
    return sorted(files, key=lambda p: p.relative_to(root).as_posix())


def tokenize_file(path: Path, name: str, representation: str, tpb: int, seed: int) -> list[str]:
    midi = midi_io.normalize_ticks(midi_io.read_midi_file(path), tpb)
    if representation == "messages":
        events = midi_io.flatten_tracks(midi_io.extract_note_events(midi))
        return encoding.message_tokenize(events)
    # per-file stream keyed by name so adding files does not reshuffle others
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    return encoding.pianoroll_tokenize(midi, rng)


def cmd_ingest(args) -> int:
    root = require(args.corpus_dir, "corpus directory")
    files = find_midi_files(root)
    if not files:
        raise UsageError(f"no MIDI files found in {root}")
    names = [f.relative_to(root).as_posix() for f in files]

    def work(item):
        path, name = item
        try:
            return tokenize_file(path, name, args.representation, args.tpb, args.seed), None
        except (midi_io.MidiError, OSError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, zip(files, names)))

    pieces, failed = [], []
    for name, (tokens, err) in zip(names, results):
        if err is not None:
            failed.append((name, err))
            log.warning("skipping %s: %s", name, err)
        else:
            pieces.append(tokens)
    if not pieces:
        for name, err in failed:
            print(f"error: {name}: {err}", file=sys.stderr)
        print(f"error: none of {len(files)} files could be parsed", file=sys.stderr)
        return 1
    try:
        vocab = encoding.build_vocab(pieces)
    except encoding.EmptyCorpus as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out)
    write_atomic(out / "corpus.txt", encoding.corpus_to_text(pieces))
    write_atomic(out / "vocab.txt", vocab.to_text())
    report = analysis.frequency_report(vocab)
    print(f"{'Corpus':<24}{'Words':>14}{'Unique Tokens':>16}")
    print(f"{root.name[:23]:<24}{report.total_tokens:>14,}{report.unique_tokens:>16,}")
    print(f"{len(pieces)} pieces tokenized ({args.representation}), {len(failed)} skipped")
    for name, err in failed:
        print(f"  skipped {name}: {err}")
    return 0


# -- train -----------------------------------------------------------------------

def model_config_from_args(args, vocab_size: int) -> model.ModelConfig:
    preset = model.ModelConfig.classical if args.classical else model.ModelConfig
    kw = dict(embed_dim=args.embed_dim, hidden_dim=args.hidden_dim, learning_rate=args.lr,
              clip_norm=args.clip_norm, anneal_factor=args.anneal_factor, rng_seed=args.seed)
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size
    if args.seq_len is not None:
        kw["seq_len"] = args.seq_len
    return preset(vocab_size, **kw)


def run_header(config: model.ModelConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in asdict(config).items())


def _representation(vocab: encoding.Vocabulary, requested: str | None) -> str:
    kind = encoding.vocab_kind(vocab)
    if requested is None:
        if kind is None:
            raise UsageError("cannot tell the vocabulary's representation; pass --representation")
        return kind
    return requested


def cmd_train(args) -> int:
    vocab = encoding.read_vocab(require(args.vocab, "vocabulary"))
    pieces = encoding.read_corpus(require(args.corpus, "corpus"))
    representation = _representation(vocab, args.representation)
    config = model_config_from_args(args, len(vocab))
    print("run:", run_header(config), f"epochs={args.epochs} representation={representation}")

    ids = np.concatenate([vocab.encode(p) for p in pieces]) if pieces else np.zeros(0, np.int64)
    try:
        batches = make_batches(ids, config.batch_size, config.seq_len)
    except CorpusTooSmall as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    last_lr = [config.learning_rate]

    def report(rec: model.EpochRecord):
        if rec.learning_rate != last_lr[0]:
            print(f"annealed learning rate {last_lr[0]:.6g} -> {rec.learning_rate:.6g}")
            last_lr[0] = rec.learning_rate
        print(f"epoch {rec.epoch:4d}  loss {rec.loss:.6f}  lr {rec.learning_rate:.6g}")

    params, history = model.train(config, batches, epochs=args.epochs, on_epoch=report)
    ckpt = Path(args.checkpoint)
    meta = {"representation": representation, "vocab_size": len(vocab)}
    write_atomic(ckpt, model.save_checkpoint(params, config, meta))
    loss_csv = Path(args.loss_csv) if args.loss_csv else ckpt.with_suffix(".loss.csv")
    write_atomic(loss_csv, model.history_to_csv(history))
    print(f"wrote {ckpt} and {loss_csv}")
    return 0


# -- generate / baseline -----------------------------------------------------------

def _policy(args) -> gen.SamplingPolicy:
    return gen.SamplingPolicy(args.policy, args.greedy_prob, args.temperature, args.seed)


def _seed_tokens(args, vocab) -> list[str]:
    if args.seed_file:
        text = require(args.seed_file, "seed file").read_text(encoding="utf-8")
        return text.split()
    if args.seed_tokens:
        return args.seed_tokens.split()
    return [vocab.tokens[0]]


def render(tokens: list[str], representation: str) -> bytes:
    if representation == "pianoroll":
        return gen.render_chord_tokens(tokens)
    return gen.render_message_tokens(tokens)


def _write_outputs(prefix, tokens, representation) -> None:
    prefix = Path(prefix)
    midi_bytes = render(tokens, representation)
    midi_io.parse_midi(midi_bytes)  # never emit an unreadable file
    write_atomic(prefix.with_suffix(".txt"), " ".join(tokens) + "\n")
    write_atomic(prefix.with_suffix(".mid"), midi_bytes)
    print(f"wrote {len(tokens)} tokens to {prefix.with_suffix('.txt')} and {prefix.with_suffix('.mid')}")


def _load_checkpoint(path):
    try:
        return model.load_checkpoint(require(path, "checkpoint").read_bytes())
    except model.CheckpointError as exc:
        raise RuntimeError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_generate(args) -> int:
    params, _config, meta = _load_checkpoint(args.checkpoint)
    vocab = encoding.read_vocab(require(args.vocab, "vocabulary"))
    if len(vocab) != params.vocab_size:
        print(f"error: vocabulary has {len(vocab)} tokens, checkpoint expects {params.vocab_size}",
              file=sys.stderr)
        return 1
    representation = meta.get("representation") or _representation(vocab, None)
    seed = _seed_tokens(args, vocab)
    tokens = gen.generate(params, vocab, seed, args.length, _policy(args))
    _write_outputs(args.out, tokens, representation)
    return 0


def cmd_baseline(args) -> int:
    vocab = encoding.read_vocab(require(args.vocab, "vocabulary"))
    if args.kind == "weighted":
        if encoding.vocab_kind(vocab) != "pianoroll":
            print("error: the weighted baseline needs a piano-roll (chord token) vocabulary",
                  file=sys.stderr)
            return 1
        tokens = gen.baseline_weighted_chords(vocab, args.length, np.random.default_rng(args.seed))
        _write_outputs(args.out, tokens, "pianoroll")
        return 0
    representation = _representation(vocab, args.representation)
    config = model_config_from_args(args, len(vocab))
    tokens = gen.baseline_untrained(config, vocab, _seed_tokens(args, vocab), args.length,
                                    _policy(args), np.random.default_rng(args.seed))
    _write_outputs(args.out, tokens, representation)
    return 0


# -- analyze -----------------------------------------------------------------------

def cmd_analyze(args) -> int:
    if args.kind == "freq":
        vocab = encoding.read_vocab(require(args.vocab, "vocabulary"))
        report = analysis.frequency_report(vocab)
        write_atomic(args.out, report.to_csv())
        print(report.summary())
        return 0

    tcfg = analysis.TsneConfig(perplexity=args.perplexity, iterations=args.iterations,
                               rng_seed=args.seed)
    if args.points_from:
        X = np.loadtxt(require(args.points_from, "points file"), delimiter=",", ndmin=2)
        n = len(X)
        points = analysis.project_points(X, [f"p{i}" for i in range(n)], list(range(n)),
                                         ["point"] * n, tcfg)
    else:
        if not args.checkpoint or not args.vocab:
            raise UsageError("tsne needs --checkpoint and --vocab (or --points-from)")
        params, _config, _meta = _load_checkpoint(args.checkpoint)
        vocab = encoding.read_vocab(require(args.vocab, "vocabulary"))
        selection = analysis.select_tokens(vocab, analysis.parse_filter(args.filter))
        points = analysis.project_embeddings(params, vocab, selection, tcfg)
    write_atomic(args.out, analysis.projection_csv(points))
    if args.svg:
        write_atomic(args.svg, analysis.scatter_svg(points))
    print(f"projected {len(points)} points to {args.out}")
    return 0


# -- roundtrip -----------------------------------------------------------------------

def cmd_roundtrip(args) -> int:
    root = require(args.corpus_dir, "directory")
    files = find_midi_files(root)
    if not files:
        raise UsageError(f"no MIDI files found in {root}")
    bad = 0
    for path in files:
        name = path.relative_to(root).as_posix()
        try:
            midi = midi_io.read_midi_file(path)
            events = [midi_io.NoteEvent(e.kind, e.pitch, e.delta, 0) for e in
                      midi_io.flatten_tracks(midi_io.extract_note_events(midi))]
            back = midi_io.extract_note_events(
                midi_io.parse_midi(midi_io.write_midi(events, midi.ticks_per_beat)))
            ok = back == events
            msg = "ok" if ok else "MISMATCH"
        except midi_io.MidiError as exc:
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        bad += not ok
        print(f"{msg:<10} {name}")
    print(f"{len(files) - bad}/{len(files)} files round-trip")
    return 1 if bad else 0


# -- argument parsing -----------------------------------------------------------------

def _add_model_args(p):
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=None, help="default 50 (25 with --classical)")
    p.add_argument("--seq-len", type=int, default=None, help="default 50 (25 with --classical)")
    p.add_argument("--lr", type=float, default=model.ModelConfig.learning_rate)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--anneal-factor", type=float, default=0.97)
    p.add_argument("--classical", action="store_true",
                   help="batch 25 / sequence length 25 preset for large vocabularies")


def _add_policy_args(p, default_policy):
    p.add_argument("--seed-tokens", help="space separated seed tokens")
    p.add_argument("--seed-file", help="file with whitespace separated seed tokens")
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--policy", choices=[gen.GREEDY, gen.SAMPLED, gen.MIXED], default=default_policy)
    p.add_argument("--greedy-prob", type=float, default=0.5, help="greedy share for --policy mixed")
    p.add_argument("--temperature", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with option defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="midilstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{ingest,train,generate,baseline,analyze}")

    p = sub.add_parser("ingest", parents=[common], help="tokenize a directory of MIDI files")
    p.add_argument("corpus_dir")
    p.add_argument("--representation", choices=["messages", "pianoroll"], default="messages")
    p.add_argument("--out", default=".", help="output directory for corpus.txt and vocab.txt")
    p.add_argument("--tpb", type=int, default=midi_io.DEFAULT_TPB, help="normalized ticks per beat")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train the LSTM")
    p.add_argument("--corpus", default="corpus.txt")
    p.add_argument("--vocab", default="vocab.txt")
    p.add_argument("--checkpoint", default="model.ckpt")
    p.add_argument("--loss-csv")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--representation", choices=["messages", "pianoroll"])
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample from a trained checkpoint")
    p.add_argument("--checkpoint", default="model.ckpt")
    p.add_argument("--vocab", default="vocab.txt")
    p.add_argument("--out", default="generated", help="output prefix (.txt and .mid)")
    _add_policy_args(p, gen.MIXED)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("baseline", parents=[common], help="untrained-model or weighted-chord baseline")
    p.add_argument("kind", choices=["untrained", "weighted"])
    p.add_argument("--vocab", default="vocab.txt")
    p.add_argument("--out", default="baseline", help="output prefix (.txt and .mid)")
    p.add_argument("--representation", choices=["messages", "pianoroll"])
    _add_model_args(p)
    _add_policy_args(p, gen.SAMPLED)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("analyze", parents=[common], help="frequency tables or t-SNE of embeddings")
    p.add_argument("kind", choices=["freq", "tsne"])
    p.add_argument("--vocab")
    p.add_argument("--checkpoint")
    p.add_argument("--out", default="analysis.csv")
    p.add_argument("--svg")
    p.add_argument("--filter", default="duration=60", help="'duration=N' or 'single-note'")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--points-from", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("roundtrip", parents=[common])
    p.add_argument("corpus_dir")
    p.set_defaults(func=cmd_roundtrip)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            values = read_config_file(require(args.config, "config file"))
            subparser = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(subparser, values)
            args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
