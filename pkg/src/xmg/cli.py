"""``xmg`` command line: synth, calibrate, encode, decode, train, generate.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure. Log verbosity comes from ``XMG_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import svg
from .attention import attention_scores, self_reference_report
from .codec import (CLASS_COUNTS, FIELDS, CalibrationError, CodecConfig, NoteToken,
                    array_to_tokens, calibrate_config, decode, encode, extract_features,
                    quantize_array, read_tokens_csv, sort_notes, tokens_to_array,
                    weber_diagnostic, write_tokens_csv)
from .config import ConfigError, RunConfig
from .midi import MidiParseError, read_midi, write_midi
from .model import (NumericError, generate, load_checkpoint, save_checkpoint,
                    teacher_forced_entropies, train)
from .screen import (STAT_NAMES, GroundTruthStats, aesthetic_scores, ground_truth_stats,
                     rank_and_select, stats_matrix, write_scored_table)
from .synth import cycle_corpus, cycle_notes, performance_notes, planted_corpus

logger = logging.getLogger("xmg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- helpers ------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(args.set or [])


def _expand(paths, suffixes) -> list[Path]:
    """Files given directly, plus matching files inside given directories (sorted)."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(q for q in p.iterdir() if q.suffix.lower() in suffixes)
        else:
            out.append(p)
    return out


def _report_failures(failures: list[tuple[Path, str]]) -> None:
    for path, msg in failures:
        print(f"error: {path}: {msg}", file=sys.stderr)


def _read_token_corpus(paths) -> list[np.ndarray]:
    files = _expand(paths, {".csv"})
    if not files:
        raise DataError(f"no token CSV files in {', '.join(map(str, paths))}")
    corpus = []
    for f in files:
        try:
            corpus.append(tokens_to_array(read_tokens_csv(f)))
        except (OSError, ValueError) as exc:
            raise DataError(f"{f}: {exc}") from None
    return corpus


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _checkpoint_path(cfg: RunConfig, m: int) -> Path:
    return Path(cfg.paths.checkpoint_dir) / f"submodel_{FIELDS[m]}.xmg"


def _load_models(cfg: RunConfig):
    models = []
    for m in range(len(FIELDS)):
        path = _checkpoint_path(cfg, m)
        if not path.exists():
            raise DataError(f"missing checkpoint {path}")
        try:
            models.append(load_checkpoint(path))
        except ValueError as exc:
            raise DataError(str(exc)) from None
    return models


# --- synth ----------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "midi":
        for j in range(args.count):
            write_midi(out / f"performance_{j:02d}.mid",
                       performance_notes(args.length, seed=cfg.seed + j))
        for j in range(args.cycles):
            write_midi(out / f"cycle_{j:02d}.mid", cycle_notes(args.length))
        print(f"wrote {args.count + args.cycles} MIDI files to {out}")
        return EXIT_OK
    if args.kind == "planted":
        corpus = planted_corpus(args.count, args.length, seed=cfg.seed)
    else:
        corpus = cycle_corpus(args.count, args.length, seed=cfg.seed)
    for j, seq in enumerate(corpus):
        write_tokens_csv(out / f"{args.kind}_{j:03d}.csv", array_to_tokens(seq))
    print(f"wrote {len(corpus)} token sequences to {out}")
    return EXIT_OK


# --- codec ----------------------------------------------------------------------

def cmd_calibrate(args, cfg: RunConfig) -> int:
    files = _expand(args.midi or [cfg.paths.corpus_dir], {".mid", ".midi"})
    pieces, failures = [], []
    for f in files:
        try:
            notes = read_midi(f)
        except (OSError, MidiParseError) as exc:
            failures.append((f, str(exc)))
            continue
        if not notes:
            failures.append((f, "no notes"))
            continue
        pieces.append(notes)
    _report_failures(failures)
    if not pieces:
        raise DataError("no parsable MIDI files" + ("" if files else " (no .mid files found)"))

    codec = calibrate_config(pieces, cfg.codec.reference_velocity, cfg.codec.smoothing)
    out_path = Path(args.out or Path(cfg.paths.output_dir) / "codec.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    codec.save(out_path)

    hist_dir = out_path.parent / "histograms"
    hist_dir.mkdir(exist_ok=True)
    features = [extract_features(sort_notes(p), cfg.codec.reference_velocity) for p in pieces]
    specs = {"t": codec.time_shift_bins, "d": codec.duration_bins,
             "v": codec.velocity_change_bins}
    for col, (name, spec) in enumerate(specs.items()):
        values = np.concatenate([f[col] for f in features])
        counts = np.bincount(quantize_array(values, spec), minlength=spec.num_classes)
        rows = []
        for k in range(spec.num_classes):
            lo, hi = spec.class_interval(k)
            rows.append([k, lo, hi, spec.representatives[k], int(counts[k])])
        _write_csv(hist_dir / f"{name}_classes.csv",
                   ["class", "lower", "upper", "representative", "count"], rows)
        svg.write(hist_dir / f"{name}_classes.svg",
                  svg.histogram_svg(counts, f"{name}: notes per class ({len(values)} notes)"))
        violations = weber_diagnostic(spec)
        detail = ", ".join(f"{k} ({r:.2f})" for k, r in violations[:8])
        print(f"{name}: {spec.num_classes} classes, {len(violations)} Weber violation(s)"
              + (f": {detail}" + (" ..." if len(violations) > 8 else "") if violations else ""))
    print(f"wrote {out_path} from {len(pieces)} file(s)")
    return EXIT_DATA if failures and args.strict else EXIT_OK


def _load_codec(path) -> CodecConfig:
    try:
        return CodecConfig.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_encode(args, cfg: RunConfig) -> int:
    codec = _load_codec(args.codec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    files = _expand(args.files, {".mid", ".midi"})
    for f in files:
        try:
            tokens = encode(sort_notes(read_midi(f)), codec)
            write_tokens_csv(out / f"{f.stem}.csv", tokens)
        except (OSError, ValueError) as exc:
            failures.append((f, str(exc)))
    _report_failures(failures)
    print(f"encoded {len(files) - len(failures)} of {len(files)} file(s) into {out}")
    return EXIT_DATA if failures or not files else EXIT_OK


def cmd_decode(args, cfg: RunConfig) -> int:
    codec = _load_codec(args.codec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    files = _expand(args.files, {".csv"})
    for f in files:
        try:
            write_midi(out / f"{f.stem}.mid", decode(read_tokens_csv(f), codec))
        except (OSError, ValueError) as exc:
            failures.append((f, str(exc)))
    _report_failures(failures)
    print(f"decoded {len(files) - len(failures)} of {len(files)} file(s) into {out}")
    return EXIT_DATA if failures or not files else EXIT_OK


# --- training -------------------------------------------------------------------

def _write_attention(cfg: RunConfig) -> None:
    paths = [_checkpoint_path(cfg, m) for m in range(len(FIELDS))]
    if not all(p.exists() for p in paths):
        logger.info("attention report skipped: not all five checkpoints exist")
        return
    models = [load_checkpoint(p) for p in paths]
    att = attention_scores(models)
    ckpt = Path(cfg.paths.checkpoint_dir)
    att.to_csv(ckpt / "attention.csv")
    svg.write(ckpt / "attention.svg",
              svg.heatmap_svg(att.values, att.rows, att.columns, "input-field weight share"))
    for row in self_reference_report(att):
        logger.info("attention %s: own-field share %.3f (%.2fx column mean)",
                    row["submodel"], row["own"], row["ratio"])


def cmd_train(args, cfg: RunConfig) -> int:
    corpus = _read_token_corpus(args.corpus or [cfg.paths.corpus_dir])
    ckpt = Path(cfg.paths.checkpoint_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    todo = sorted({FIELDS.index(s) for s in args.submodel}) if args.submodel else range(len(FIELDS))
    for m in todo:
        path = _checkpoint_path(cfg, m)
        loss_path = ckpt / f"loss_{FIELDS[m]}.csv"
        params, done = None, []
        tcfg = cfg.model.train_config(cfg.seed + m, conditioned=not args.independent)
        if args.resume and path.exists():
            params = load_checkpoint(path)
            if params.conditioned == args.independent:
                raise UsageError(f"{path} was trained with conditioned={params.conditioned}")
            if loss_path.exists():
                with open(loss_path) as fh:
                    done = [row for row in csv.reader(fh)][1:]
            # keep the step-size schedule where the previous run left it
            tcfg.learning_rate *= tcfg.lr_decay ** len(done)
        t0 = time.perf_counter()
        params, losses = train(corpus, m, tcfg, params, log_every=1)
        save_checkpoint(path, params)
        rows = [[int(e), float(v)] for e, v in done]
        rows += [[len(done) + i + 1, f"{x:.6f}"] for i, x in enumerate(losses)]
        _write_csv(loss_path, ["epoch", "loss"], rows)
        final = f"{losses[-1]:.4f}" if losses else "n/a"
        print(f"submodel {FIELDS[m]}: {len(losses)} epoch(s), final loss {final} nats, "
              f"{time.perf_counter() - t0:.1f}s -> {path}")
    _write_attention(cfg)
    return EXIT_OK


# --- generation and screening ---------------------------------------------------

def _entropy_stat_report(out: Path, gt: GroundTruthStats | None, cand_stats) -> None:
    rows = []
    if gt is not None:
        for j, st in enumerate(gt.per_sequence):
            rows += [["reference", j, FIELDS[m], *st[m]] for m in range(len(FIELDS))]
    for j, st in enumerate(cand_stats):
        rows += [["generated", j, FIELDS[m], *st[m]] for m in range(len(FIELDS))]
    _write_csv(out / "entropy_stats.csv", ["source", "sequence", "field", *STAT_NAMES], rows)
    panels = []
    for m in range(len(FIELDS)):
        row = []
        for s in range(len(STAT_NAMES)):
            series = {}
            if gt is not None:
                series["reference"] = gt.per_sequence[:, m, s]
            series["generated"] = np.array([st[m, s] for st in cand_stats])
            row.append(series)
        panels.append(row)
    svg.write(out / "entropy_stats.svg",
              svg.grid_histograms_svg(panels, list(FIELDS), list(STAT_NAMES),
                                      "entropy-sequence statistics per submodel"))


def cmd_generate(args, cfg: RunConfig) -> int:
    codec = _load_codec(args.codec or Path(cfg.paths.output_dir) / "codec.json")
    models = _load_models(cfg)
    gen, scr = cfg.generation, cfg.screening
    ref_paths = args.reference or ([cfg.paths.corpus_dir] if Path(cfg.paths.corpus_dir).is_dir()
                                   else [])
    reference = _read_token_corpus(ref_paths) if ref_paths else []
    reference = [s for s in reference if len(s) > scr.window]

    if gen.seed_token is not None:
        seed_token = NoteToken(*gen.seed_token)
    elif reference:
        seed_token = NoteToken(*map(int, reference[0][0]))
    else:
        raise UsageError("no seed token: set generation.seed_token or give a reference corpus")
    if gen.length < scr.window:
        raise UsageError(f"generation.length {gen.length} is shorter than the screening window")

    gt = None
    if len(reference) >= 2:
        gt = ground_truth_stats(models, reference, scr.window)
    else:
        logger.warning("fewer than 2 reference sequences: screening without regulation")

    t0 = time.perf_counter()
    candidates = generate(models, seed_token, gen.length, gen.candidates, gen.temperature,
                          seed=cfg.seed)
    winner, table = rank_and_select([c.entropies for c in candidates], gt,
                                    scr.screening_config())
    out = Path(cfg.paths.output_dir)
    cand_dir = out / "candidates"
    cand_dir.mkdir(parents=True, exist_ok=True)
    for j, c in enumerate(candidates):
        write_tokens_csv(cand_dir / f"candidate_{j:03d}.csv", array_to_tokens(c.tokens))
    write_scored_table(out / "scored.csv", table)
    tokens = array_to_tokens(candidates[winner].tokens)
    write_tokens_csv(out / "winner.csv", tokens)
    write_midi(out / "winner.mid", decode(tokens, codec))

    cand_stats = [row.stats for row in table]
    _entropy_stat_report(out, gt, cand_stats)
    rows = []
    for j, c in enumerate(candidates):
        per_model, avg = aesthetic_scores(c.entropies, scr.window, scr.aesthetic_weight)
        rows.append([j, *(f"{x:.6g}" for x in per_model), f"{avg:.6g}"])
    _write_csv(out / "aesthetic.csv", ["candidate", *FIELDS, "mean"], rows)
    if gt is not None:
        tf = teacher_forced_entropies(models, candidates[winner].tokens)
        logger.info("winner teacher-forced stats: %s", stats_matrix(tf, scr.window).tolist())
    print(f"generated {len(candidates)} candidate(s) of {gen.length} notes in "
          f"{time.perf_counter() - t0:.1f}s; winner {winner} "
          f"(score {table[winner].score:.4f}) -> {out / 'winner.mid'}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    parser = _Parser(prog="xmg", description="Perceptual note codec, chain-rule LSTM "
                     "generator and entropy screening for expressive piano MIDI.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("kind", choices=["midi", "planted", "cycle"])
    p.add_argument("out", help="output directory")
    p.add_argument("--count", type=int, default=2,
                   help="random performances (midi) or token sequences")
    p.add_argument("--cycles", type=int, default=2, help="cycle performances (midi only)")
    p.add_argument("--length", type=int, default=400, help="notes per file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", parents=[common], help="fit the codec to a MIDI corpus")
    p.add_argument("midi", nargs="*", help="MIDI files or directories (default paths.corpus_dir)")
    p.add_argument("--out", help="codec config path (default <output_dir>/codec.json)")
    p.add_argument("--strict", action="store_true", help="exit 2 if any file failed to parse")
    p.set_defaults(func=cmd_calibrate)

    for name, func, what in (("encode", cmd_encode, "MIDI files to token CSVs"),
                             ("decode", cmd_decode, "token CSVs to MIDI files")):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("files", nargs="+", help="files or directories")
        p.add_argument("--codec", required=True, help="codec config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="train the five submodels")
    p.add_argument("corpus", nargs="*", help="token CSVs or directories (default paths.corpus_dir)")
    p.add_argument("--submodel", action="append", choices=list(FIELDS),
                   help="train only this submodel (repeatable)")
    p.add_argument("--resume", action="store_true", help="continue from existing checkpoints")
    p.add_argument("--independent", action="store_true",
                   help="ablation: train without the current-note conditioning")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="generate, screen and decode")
    p.add_argument("--codec", help="codec config (default <output_dir>/codec.json)")
    p.add_argument("--reference", nargs="*",
                   help="token corpus for ground-truth statistics (default paths.corpus_dir)")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("XMG_LOG_LEVEL", "WARNING").upper(), None)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"xmg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"xmg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CalibrationError, MidiParseError, ValueError, OSError) as exc:
        print(f"xmg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
