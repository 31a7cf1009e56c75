"""Command-line entry point: ``smalltunes <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 contract violation.
Commands that produce a directory print its path on stdout so they can be
piped into ``evaluate``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .autodiff import Tensor
from .config import RunConfig, echo_config, load_config
from .corpus import FilteredOut, make_synthetic_corpus, read_midi_file, write_midi_file
from .errors import ContractViolation, DataError, SmallTunesError
from .generation import GenerationStall, extract_prompt, generate_tokens
from .layout import CorpusSong, load_corpus_dir, load_midi_dir, safe_name, write_corpus_dir
from .metrics import ORNAMENT_DEGREES, PENTATONIC_DEGREES, evaluate_corpus, theme_of
from .model import SkeletonTransformer, load_checkpoint
from .pipeline import ablation_variant, prepare_song
from .representation import decode, dump_corpus
from .segmentation import HeuristicConfig, SegmenterKind, read_labels, segment, validate_labels, write_labels
from .skeleton import extract_skeleton, remove_fraction, skeleton_sequence, write_annotation
from .training import build_examples, resume, train

log = logging.getLogger("smalltunes")

EPILOG = "exit codes: 0 success, 1 usage error, 2 data error, 3 contract violation"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared steps


def _corpus_songs(cfg: RunConfig, corpus: str | None, split: str) -> list[CorpusSong]:
    path = corpus or cfg.corpus
    if path is None:
        melodies = make_synthetic_corpus(cfg.synth.songs, cfg.seed, cfg.synth.style)
        # a synthetic corpus trains and generates on the same songs
        return [CorpusSong(safe_name(m.title, f"{i:04d}"), m, "train") for i, m in enumerate(melodies)]
    songs = load_corpus_dir(path, "all")
    if split == "auto":
        split = "train"
    return [s for s in songs if split == "all" or s.split == split]


def _prepared(cfg: RunConfig, songs: Sequence[CorpusSong], labels_dir: str | None = None):
    out = []
    for i, s in enumerate(songs):
        external = read_labels(Path(labels_dir) / f"{s.name}.phrases") if labels_dir else None
        variant = cfg.variant
        if external is not None:
            variant = replace(variant, segmenter=SegmenterKind.EXTERNAL)
        out.append(prepare_song(s.melody, variant, external, index=i))
    return out


def run_train(cfg: RunConfig, out: Path, corpus: str | None = None, labels_dir: str | None = None,
              resume_from: str | None = None) -> Path:
    songs = _corpus_songs(cfg, corpus, "train")
    if not songs:
        raise DataError("no training songs")
    prepared = _prepared(cfg, songs, labels_dir)
    if corpus is not None:
        cfg = replace(cfg, corpus=str(Path(corpus).resolve()))
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    (out / "full.tokens").write_text(dump_corpus(p.full for p in prepared), encoding="utf-8")
    (out / "skeleton.tokens").write_text(dump_corpus(p.skeleton for p in prepared), encoding="utf-8")
    meta = {"run": cfg.to_dict()}
    if resume_from:
        model, opt, start, _ = resume(resume_from)
    else:
        model, opt, start = SkeletonTransformer(cfg.model, seed=cfg.seed), None, 0

    def progress(step: int, loss: float) -> None:
        if step % 100 == 0:
            log.info("step %d loss %.4f", step, loss)

    result = train(build_examples(prepared), model, cfg.train_config, out, opt, start, meta, progress)
    if result.losses:
        log.info("final loss %.4f", result.losses[-1][1])
    return out / "final.ckpt"


_WORKER_MODEL: dict[str, SkeletonTransformer] = {}


def _generate_one(job: tuple) -> tuple[str, str | None, str]:
    ckpt, cfg_dict, song, index, gen, out = job
    model = _WORKER_MODEL.get(ckpt)
    if model is None:
        model = _WORKER_MODEL[ckpt] = SkeletonTransformer.load(ckpt)
    cfg = RunConfig.from_dict(cfg_dict)
    melody = song.melody
    try:
        prep = prepare_song(melody, cfg.variant, index=index)
        prompt = extract_prompt(melody, prep.labels, cfg.prompt_bars)
        tokens = generate_tokens(model, prep.skeleton, prompt, replace(gen, seed=gen.seed * 100_003 + index))
    except (GenerationStall, DataError) as exc:
        return song.name, None, str(exc)
    generated = decode(tokens, melody.time_signature, song.name)
    write_midi_file(generated, Path(out) / f"{song.name}.mid")
    (Path(out) / f"{song.name}.tokens").write_text(tokens.dumps() + "\n", encoding="utf-8")
    return song.name, song.name, ""


def run_generate(checkpoint: str | Path, out: Path, corpus: str | None = None, split: str = "auto",
                 overrides: dict | None = None, jobs: int = 1, prompt_bars: int | None = None) -> Path:
    model_cfg, params, meta, _ = load_checkpoint(checkpoint)
    model = SkeletonTransformer(model_cfg, {k: Tensor.param(v) for k, v in params.items()})
    cfg = RunConfig.from_dict(meta.get("run", {}))
    if prompt_bars is not None:
        cfg = replace(cfg, prompt_bars=prompt_bars)
    gen = replace(cfg.gen_config, **(overrides or {}))
    songs = _corpus_songs(cfg, corpus, "all")
    if split == "auto":
        test = [s for s in songs if s.split == "test"]
        songs = test or songs
    elif split != "all":
        songs = [s for s in songs if s.split == split]
    if not songs:
        raise DataError("no songs to generate from")
    out.mkdir(parents=True, exist_ok=True)
    echo_config(replace(cfg, generate=gen), out)
    _WORKER_MODEL[str(checkpoint)] = model
    jobs_list = [(str(checkpoint), cfg.to_dict(), s, i, gen, str(out)) for i, s in enumerate(songs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_one, jobs_list))
    else:
        results = [_generate_one(j) for j in jobs_list]
    written = [r for r in results if r[1] is not None]
    for name, _, why in results:
        if why:
            log.warning("%s: skipped (%s)", name, why)
    if not written:
        raise DataError("generation produced no melodies")
    return out


def run_evaluate(directory: str | Path, themes_dir: str | None = None, tonic: int | None = None,
                 bars: int = 2, ornament: frozenset[int] = ORNAMENT_DEGREES) -> str:
    songs = load_midi_dir(directory)
    themes = None
    if themes_dir:
        by_name = {s.name: s.melody for s in load_midi_dir(themes_dir)}
        missing = [s.name for s in songs if s.name not in by_name]
        if missing:
            raise DataError(f"no theme for {', '.join(missing)}")
        themes = [theme_of(by_name[s.name], bars) for s in songs]
    report = evaluate_corpus([s.melody for s in songs], themes, [s.name for s in songs], tonic, ornament)
    return report.to_tsv()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = Path(args.out or f"synth-{args.seed}-{args.songs}")
    melodies = make_synthetic_corpus(args.songs, args.seed, args.style)
    write_corpus_dir(melodies, out, args.seed, args.ratio)
    print(out)
    return 0


def cmd_ingest(args) -> int:
    src = Path(args.source)
    if not src.is_dir():
        raise DataError(f"{src}: not a directory")
    melodies, names = [], []
    for path in sorted(p for p in src.rglob("*") if p.suffix.lower() in (".mid", ".midi")):
        try:
            melody = read_midi_file(path)
        except FilteredOut as why:
            log.info("%s: filtered (%s)", path, why)
            continue
        except DataError as exc:
            log.warning("%s: skipped (%s)", path, exc)
            continue
        sidecar = path.with_suffix(".phrases")
        if sidecar.exists():
            melody = replace(melody, phrases=validate_labels(read_labels(sidecar), len(melody)))
        melodies.append(melody)
        names.append(safe_name(str(path.relative_to(src).with_suffix("")), f"{len(names):04d}"))
    if not melodies:
        raise DataError(f"{src}: no usable MIDI files")
    write_corpus_dir(melodies, args.out, args.seed, args.ratio, names)
    log.info("ingested %d songs", len(melodies))
    print(args.out)
    return 0


def cmd_segment(args) -> int:
    out = Path(args.out or Path(args.corpus) / "labels" / args.kind)
    out.mkdir(parents=True, exist_ok=True)
    heuristic = HeuristicConfig()
    for s in load_corpus_dir(args.corpus):
        labels = segment(s.melody, args.kind, external=s.melody.phrases, base=args.base, heuristic=heuristic)
        write_labels(labels, out / f"{s.name}.phrases")
    print(out)
    return 0


def cmd_skeleton(args) -> int:
    out = Path(args.out or Path(args.corpus) / "skeleton")
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(load_corpus_dir(args.corpus)):
        if args.labels:
            labels = read_labels(Path(args.labels) / f"{s.name}.phrases")
        else:
            labels = segment(s.melody, SegmenterKind.HEURISTIC)
        ann = extract_skeleton(s.melody, labels)
        if args.remove_half:
            ann = remove_fraction(ann, 0.5, seed=args.seed * 100_003 + i)
        write_annotation(ann, out / f"{s.name}.skel")
        seq = skeleton_sequence(s.melody, labels, ann)
        (out / f"{s.name}.tokens").write_text(seq.dumps() + "\n", encoding="utf-8")
    print(out)
    return 0


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, max_steps=args.steps))
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out or "run")
    run_train(cfg, out, args.corpus, args.labels, args.resume)
    print(out)
    return 0


def _gen_overrides(args) -> dict:
    over = {}
    for key in ("temperature", "top_k", "max_tokens"):
        if getattr(args, key) is not None:
            over[key] = getattr(args, key)
    if args.greedy:
        over["greedy"] = True
    return over


def cmd_generate(args) -> int:
    if args.prompt_bars < 1:
        raise DataError("--prompt-bars must be >= 1")
    out = Path(args.out or Path(args.checkpoint).parent / "generated")
    run_generate(args.checkpoint, out, args.corpus, args.split, _gen_overrides(args), args.jobs,
                 args.prompt_bars)
    print(out)
    return 0


def _ornament(text: str) -> frozenset[int]:
    try:
        degrees = frozenset(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated degrees, got {text!r}") from None
    if not degrees <= set(range(12)) or degrees & PENTATONIC_DEGREES:
        raise argparse.ArgumentTypeError("degrees must be in 0-11 and outside {0,2,4,7,9}")
    return degrees


def _pitch_class(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        value = -1
    if not 0 <= value < 12:
        raise argparse.ArgumentTypeError(f"expected a pitch class 0-11, got {text!r}")
    return value


def cmd_evaluate(args) -> int:
    directory = args.directory
    if directory is None:
        directory = sys.stdin.readline().strip()
        if not directory:
            raise DataError("no directory given on the command line or stdin")
    text = run_evaluate(directory, args.themes, args.tonic, ornament=args.ornament)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    variant = ablation_variant(args.group, cfg.base_segmenter, cfg.seed)
    cfg = replace(cfg, segmenter=variant.segmenter, remove_half=variant.remove_half)
    out = Path(args.out or f"ablate-g{args.group}")
    ckpt = run_train(cfg, out / "train", args.corpus)
    gen_dir = run_generate(ckpt, out / "generated", args.corpus, "auto", {}, args.jobs)
    text = run_evaluate(gen_dir)
    (out / "report.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smalltunes", description="Skeleton-conditioned folk melody generation.",
                epilog=EPILOG)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic pentatonic corpus", epilog=EPILOG)
    s.add_argument("--songs", type=int, default=8, help="number of songs (default 8)")
    s.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    s.add_argument("--style", choices=("pentatonic", "chromatic"), default="pentatonic")
    s.add_argument("--ratio", type=float, default=0.9, help="train share of the split (default 0.9)")
    s.add_argument("--out", help="corpus directory (default synth-SEED-SONGS)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="quantize a directory of MIDI files into a corpus", epilog=EPILOG)
    s.add_argument("source", help="directory searched recursively for .mid/.midi")
    s.add_argument("--out", required=True, help="corpus directory to write")
    s.add_argument("--seed", type=int, default=0, help="split seed (default 0)")
    s.add_argument("--ratio", type=float, default=0.9, help="train share of the split (default 0.9)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("segment", help="write phrase labels for every song", epilog=EPILOG)
    s.add_argument("--corpus", required=True, help="corpus directory")
    s.add_argument("--kind", choices=[k.value for k in SegmenterKind], default="heuristic")
    s.add_argument("--base", choices=[k.value for k in SegmenterKind], default="heuristic",
                   help="labels merged by --kind expansion (default heuristic)")
    s.add_argument("--out", help="label directory (default CORPUS/labels/KIND)")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("skeleton", help="annotate and encode skeleton notes", epilog=EPILOG)
    s.add_argument("--corpus", required=True, help="corpus directory")
    s.add_argument("--labels", help="label directory from 'segment' (default: heuristic labels)")
    s.add_argument("--remove-half", action="store_true", help="drop half of each phrase's skeleton notes")
    s.add_argument("--seed", type=int, default=0, help="seed for --remove-half (default 0)")
    s.add_argument("--out", help="output directory (default CORPUS/skeleton)")
    s.set_defaults(func=cmd_skeleton)

    s = sub.add_parser("train", help="train a model", epilog=EPILOG)
    s.add_argument("--config", help="JSON run config (default: built-in defaults)")
    s.add_argument("--corpus", help="corpus directory (default: config 'corpus', else synthetic)")
    s.add_argument("--labels", help="label directory overriding the configured segmenter")
    s.add_argument("--steps", type=int, help="override train.max_steps")
    s.add_argument("--seed", type=int, help="override the run seed")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--out", help="run directory (default ./run)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate melodies from skeletons and prompts", epilog=EPILOG)
    s.add_argument("--checkpoint", required=True, help="checkpoint written by 'train'")
    s.add_argument("--corpus", help="corpus directory (default: the one used for training)")
    s.add_argument("--split", choices=("auto", "train", "test", "all"), default="auto",
                   help="songs to continue; auto = test split if non-empty, else all")
    s.add_argument("--prompt-bars", type=int, default=2, help="prompt length in bars (default 2)")
    s.add_argument("--greedy", action="store_true", help="argmax decoding")
    s.add_argument("--temperature", type=float)
    s.add_argument("--top-k", type=int, dest="top_k")
    s.add_argument("--max-tokens", type=int, dest="max_tokens")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s.add_argument("--out", help="output directory (default CHECKPOINT_DIR/generated)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="write the metric table for a directory of MIDI files",
                       epilog=EPILOG)
    s.add_argument("directory", nargs="?", help="directory of .mid files (default: read from stdin)")
    s.add_argument("--themes", help="directory of reference songs whose first two bars are the themes")
    s.add_argument("--tonic", type=_pitch_class, help="pitch class 0-11 (default: detected per song)")
    s.add_argument("--ornament", type=_ornament, default=ORNAMENT_DEGREES,
                   help="comma-separated degrees scored 6 by PSC (default 5,6,10,11)")
    s.add_argument("--out", help="report file (default stdout)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train, generate and evaluate one ablation group", epilog=EPILOG)
    s.add_argument("--group", type=int, required=True, choices=range(1, 9), metavar="{1..8}")
    s.add_argument("--config", help="JSON run config")
    s.add_argument("--corpus", help="corpus directory (default: config 'corpus', else synthetic)")
    s.add_argument("--steps", type=int, help="override train.max_steps")
    s.add_argument("--seed", type=int, help="override the run seed")
    s.add_argument("--jobs", type=int, default=1, help="generation worker processes (default 1)")
    s.add_argument("--out", help="output directory (default ablate-gGROUP)")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"smalltunes: contract violation: {exc}", file=sys.stderr)
        return 3
    except (SmallTunesError, OSError) as exc:
        print(f"smalltunes: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
