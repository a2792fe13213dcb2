"""Command line interface.

Settings resolve in precedence order: explicit flags, then a --config JSON
file, then built-in defaults. Every run echoes its resolved settings to
stderr as one JSON line. Exit codes: 0 on success, 1 when a requested
quality or ordering check fails, 2 on bad input, bad flags, or unreadable
models.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys

from . import modelio
from .baseline import CaseLexicon, build_lexicon
from .evalbench import bench_speed, eval_nl
from .figures import (
    save_bench_chart,
    save_eval_breakdown,
    save_lm_chart,
    save_training_curves,
)
from .hiermodel import PRESETS
from .lmexp import NoisifyConfig, check_ordering, noisify_sentences, run_lm_experiment
from .textcore import CorpusError, Sentence, ingest_lines
from .training import (
    TrainConfig,
    distill_lines,
    ingest_or_abort,
    load_model,
    train,
)


class CliError(Exception):
    """Bad invocation or bad input; maps to exit code 2."""


def _json_line(obj) -> str:
    return modelio.canonical_json(obj).decode("ascii")


DEFAULTS: dict[str, dict] = {
    "train": {
        "preset": "student", "arch": "hier", "epochs": 20, "batch_size": 32,
        "learning_rate": 1e-3, "clip_norm": 5.0, "seed": 0,
        "validation_fraction": 0.1, "patience": 5, "dtype": "float32",
        "eval_sentences": 400, "target_accuracy": None,
        "max_skip_fraction": 0.1, "quantize": False,
    },
    "distill": {"mode": "best-path", "beam_size": None, "seed": 0},
    "predict": {"mode": "best-path", "beam_size": None, "seed": 0},
    "eval": {"tsv": False, "min_f1": None, "seed": 0},
    "bench": {"runs": 5, "warmup": 1, "reference": None, "limit": None,
              "tsv": False, "seed": 0},
    "noisify": {"rate": 0.25, "seed": 0},
    "lm-exp": {"rates": "0.5,0.25", "seed": 0, "eval_fraction": 0.1,
               "k": 0.1, "min_count": 2, "limit": None, "check": False},
    "inspect": {"seed": 0},
    "build-lexicon": {"seed": 0},
}


@contextlib.contextmanager
def _open_in(path: str):
    if path == "-":
        # Detach instead of closing so the process stdin survives the block.
        wrapper = io.TextIOWrapper(sys.stdin.buffer, encoding="utf-8",
                                   errors="surrogateescape")
        try:
            yield wrapper
        finally:
            wrapper.detach()
        return
    with open(path, "r", encoding="utf-8", errors="surrogateescape") as fh:
        yield fh


@contextlib.contextmanager
def _open_out(path: str):
    if path == "-":
        wrapper = io.TextIOWrapper(sys.stdout.buffer, encoding="utf-8",
                                   errors="surrogateescape")
        try:
            yield wrapper
            wrapper.flush()
        finally:
            wrapper.detach()
        return
    with open(path, "w", encoding="utf-8", errors="surrogateescape") as fh:
        yield fh


def _resolve(args: argparse.Namespace, command: str) -> dict:
    """Merge flag, config-file, and default settings; echo to stderr."""
    settings = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"{config_path}: not valid JSON ({exc})")
        if not isinstance(loaded, dict):
            raise CliError(f"{config_path}: top level must be an object")
        unknown = sorted(set(loaded) - set(settings))
        if unknown:
            raise CliError(f"{config_path}: unknown config keys {unknown}")
        settings.update(loaded)
    for key in settings:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
    echo = {"command": command, **settings}
    print(_json_line(echo), file=sys.stderr)
    return settings


def _read_gold(path: str, limit: int | None = None) -> list[Sentence]:
    with _open_in(path) as fh:
        sentences, _skipped = ingest_lines(fh)
    if not sentences:
        raise CorpusError(f"{path}: no usable sentences")
    return sentences[:limit] if limit else sentences


def _emit_report(payload: dict, report_dir: str | None, stem: str,
                 render) -> None:
    if not report_dir:
        return
    import os

    os.makedirs(report_dir, exist_ok=True)
    json_path = os.path.join(report_dir, f"{stem}.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(_json_line(payload) + "\n")
    render(payload, os.path.join(report_dir, f"{stem}.png"))


# ---------------- subcommands ----------------


def cmd_train(args: argparse.Namespace) -> int:
    settings = _resolve(args, "train")
    with _open_in(args.corpus) as fh:
        sentences = ingest_or_abort(fh, settings["max_skip_fraction"])
    config = TrainConfig(
        preset=settings["preset"], arch=settings["arch"],
        epochs=settings["epochs"], batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"],
        clip_norm=settings["clip_norm"], seed=settings["seed"],
        validation_fraction=settings["validation_fraction"],
        patience=settings["patience"], dtype=settings["dtype"],
        eval_sentences=settings["eval_sentences"],
        target_train_accuracy=settings["target_accuracy"],
        max_skip_fraction=settings["max_skip_fraction"],
    )

    def on_epoch(record: dict) -> None:
        print(json.dumps(record), flush=True)

    result = train(sentences, config, on_epoch=on_epoch)
    extra = {"seed": config.seed, "best_epoch": result.best_epoch,
             "train_settings": {k: v for k, v in settings.items()
                                if k != "quantize"}}
    result.model.save(args.out, quantized=settings["quantize"], extra=extra)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for record in result.log:
                fh.write(json.dumps(record) + "\n")
    if args.report_dir and result.log:
        import os

        os.makedirs(args.report_dir, exist_ok=True)
        log_path = os.path.join(args.report_dir, "training_log.json")
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write(_json_line({"epochs": result.log}) + "\n")
        save_training_curves(result.log,
                             os.path.join(args.report_dir, "training.png"))
    if result.diverged:
        print("training diverged; saved the last good checkpoint",
              file=sys.stderr)
        return 1
    return 0


def cmd_distill(args: argparse.Namespace) -> int:
    settings = _resolve(args, "distill")
    teacher = load_model(args.teacher)
    count = 0
    with _open_in(args.corpus) as src, _open_out(args.out) as dst:
        for out_line in distill_lines(teacher,
                                      (ln.rstrip("\n") for ln in src),
                                      mode=settings["mode"],
                                      beam_size=settings["beam_size"]):
            dst.write(out_line + "\n")
            count += 1
        dst.flush()
    print(f"distilled {count} lines", file=sys.stderr)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    settings = _resolve(args, "predict")
    model = load_model(args.model)
    passed_through = 0
    with _open_in(args.input) as src, _open_out(args.output) as dst:
        # One line in, one line out, flushed: a caller feeding a pipe gets
        # each result before sending the next line, and memory stays flat
        # however long the stream runs.
        for raw in src:
            line = raw.rstrip("\n")
            if any(0xDC80 <= ord(ch) <= 0xDCFF for ch in line):
                # Undecodable bytes: leave the line exactly as it came.
                dst.write(line + "\n")
                passed_through += 1
                continue
            dst.write(model.truecase_line(line, mode=settings["mode"],
                                          beam_size=settings["beam_size"])
                      + "\n")
            dst.flush()
    if passed_through:
        print(f"warning: {passed_through} undecodable lines passed through",
              file=sys.stderr)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _resolve(args, "eval")
    with _open_in(args.predictions) as fh:
        preds, _ = ingest_lines(fh)
    with _open_in(args.references) as fh:
        refs, _ = ingest_lines(fh)
    report = eval_nl(preds, refs)
    payload = report.to_dict()
    if settings["tsv"]:
        sys.stdout.write("precision\trecall\tf1\ttoken_accuracy\n")
        sys.stdout.write(f"{report.precision:.4f}\t{report.recall:.4f}"
                         f"\t{report.f1:.4f}\t{report.token_accuracy:.4f}\n")
    else:
        print(_json_line(payload))
    _emit_report(payload, args.report_dir, "eval", save_eval_breakdown)
    min_f1 = settings["min_f1"]
    if min_f1 is not None and report.f1 < min_f1:
        print(f"F1 {report.f1:.4f} below required {min_f1}", file=sys.stderr)
        return 1
    return 0


def _load_system(spec: str):
    if "=" not in spec:
        raise CliError(f"--system takes NAME=PATH, got {spec!r}")
    name, path = spec.split("=", 1)
    if path.endswith(".tsv"):
        return name, CaseLexicon.load(path)
    return name, load_model(path)


def cmd_bench(args: argparse.Namespace) -> int:
    settings = _resolve(args, "bench")
    systems = [_load_system(spec) for spec in args.system]
    sentences = _read_gold(args.corpus, settings["limit"])
    report = bench_speed(systems, sentences, runs=settings["runs"],
                         warmup=settings["warmup"],
                         reference=settings["reference"])
    payload = report.to_dict()
    if settings["tsv"]:
        sys.stdout.write(report.to_tsv())
    else:
        print(_json_line(payload))
    _emit_report(payload, args.report_dir, "bench", save_bench_chart)
    if args.report_dir:
        import os

        with open(os.path.join(args.report_dir, "bench.tsv"), "w",
                  encoding="utf-8") as fh:
            fh.write(report.to_tsv())
    return 0


def cmd_noisify(args: argparse.Namespace) -> int:
    settings = _resolve(args, "noisify")
    config = NoisifyConfig(settings["rate"], settings["seed"])
    with _open_in(args.corpus) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    sentences = []
    slots = []  # index into sentences, or None for lines kept verbatim
    for line in lines:
        sent = Sentence.from_line(line)
        if sent.tokens:
            slots.append(len(sentences))
            sentences.append(sent)
        else:
            slots.append(None)
    noisy = noisify_sentences(sentences, config)
    with _open_out(args.out) as dst:
        for line, slot in zip(lines, slots):
            dst.write((noisy[slot].text if slot is not None else line) + "\n")
        dst.flush()
    return 0


def cmd_lm_exp(args: argparse.Namespace) -> int:
    settings = _resolve(args, "lm-exp")
    rates_raw = settings["rates"]
    if isinstance(rates_raw, str):
        rates = [float(r) for r in rates_raw.split(",") if r.strip()]
    else:
        rates = [float(r) for r in rates_raw]
    truecaser = load_model(args.model)
    baseline = CaseLexicon.load(args.baseline) if args.baseline else None
    sentences = _read_gold(args.corpus, settings["limit"])
    result = run_lm_experiment(
        sentences, truecaser, rates=rates, seed=settings["seed"],
        eval_fraction=settings["eval_fraction"], baseline=baseline,
        k=settings["k"], min_count=settings["min_count"])
    print(_json_line(result))
    _emit_report(result, args.report_dir, "lm_exp", save_lm_chart)
    if settings["check"]:
        problems = check_ordering(result)
        if problems:
            for problem in problems:
                print(f"check failed: {problem}", file=sys.stderr)
            return 1
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    _resolve(args, "inspect")
    manifest, _arrays, _scales = modelio.read_model(args.model)
    model = load_model(args.model)
    info = {
        "arch": manifest.get("arch"),
        "preset": manifest.get("config", {}).get("preset"),
        "config": manifest.get("config"),
        "dtype": manifest.get("dtype"),
        "quantized": manifest.get("quantized", False),
        "seed": manifest.get("seed"),
        "param_count": model.param_count(),
        "float_bytes": len(model.to_bytes(quantized=False)),
        "quant_bytes": len(model.to_bytes(quantized=True)),
    }
    print(_json_line(info))
    return 0


def cmd_build_lexicon(args: argparse.Namespace) -> int:
    _resolve(args, "build-lexicon")
    with _open_in(args.corpus) as fh:
        sentences, _ = ingest_lines(fh)
    lexicon = build_lexicon(sentences)
    lexicon.save(args.out)
    print(f"{len(lexicon.entries)} entries from {lexicon.total_tokens} tokens",
          file=sys.stderr)
    return 0


# ---------------- parser ----------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiercase",
        description="Hierarchical word-and-character truecasing toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="JSON",
                       help="JSON file of settings; flags still win")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="fit a model on gold-cased text")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--arch", choices=["hier", "charrnn"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--validation-fraction", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--eval-sentences", type=int)
    p.add_argument("--target-accuracy", type=float,
                   help="stop once training accuracy reaches this")
    p.add_argument("--max-skip-fraction", type=float)
    p.add_argument("--quantize", action="store_const", const=True,
                   help="store int8 weights")
    p.add_argument("--log", help="write the epoch log to this JSONL file")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill",
                       help="truecase a raw corpus with a trained model")
    common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--corpus", default="-")
    p.add_argument("--out", default="-")
    p.add_argument("--mode", choices=["best-path", "full-beam"])
    p.add_argument("--beam-size", type=int)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("predict", help="truecase lines of text")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--mode", choices=["best-path", "full-beam"])
    p.add_argument("--beam-size", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against references")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--tsv", action="store_const", const=True)
    p.add_argument("--min-f1", type=float,
                   help="exit 1 when F1 falls below this")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure truecasing throughput")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--system", action="append", required=True,
                   metavar="NAME=PATH",
                   help="model file or .tsv lexicon; repeatable")
    p.add_argument("--runs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--reference", help="system name to normalize against")
    p.add_argument("--limit", type=int, help="cap the number of sentences")
    p.add_argument("--tsv", action="store_const", const=True)
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("noisify", help="randomly lowercase capitalized tokens")
    common(p)
    p.add_argument("--corpus", default="-")
    p.add_argument("--out", default="-")
    p.add_argument("--rate", type=float)
    p.set_defaults(func=cmd_noisify)

    p = sub.add_parser("lm-exp",
                       help="n-gram LM perplexity across corruption arms")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="truecaser for the "
                   "normalized arm")
    p.add_argument("--baseline", help="lexicon .tsv for an extra arm")
    p.add_argument("--rates", help="comma-separated corruption rates")
    p.add_argument("--eval-fraction", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--min-count", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--check", action="store_const", const=True,
                   help="exit 1 unless perplexities are ordered as expected")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_lm_exp)

    p = sub.add_parser("inspect", help="show a stored model's vital signs")
    common(p)
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("build-lexicon",
                       help="build the most-frequent-form baseline")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_lexicon)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CorpusError, modelio.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
