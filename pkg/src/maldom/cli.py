"""Command-line entry point: ``maldom <command> ...``.

Exit codes: 0 success, 1 runtime or data error, 2 usage or configuration
error. Logs go to stderr; every artifact is written to a file.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import __version__, bpe, corpus, metrics, urlprep
from .mlm import MaskingPolicy

log = logging.getLogger("maldom")

BUNDLED_CONFIGS = ("desk", "paper_char", "paper_bert")
MODEL_KEYS = {"arch": str, "embed_dim": int, "hidden_dim": int, "num_layers": int, "num_heads": int,
              "dropout": float, "max_len": int, "cnn_mode": str}


class ConfigError(Exception):
    """Invalid configuration or flag combination (exit code 2)."""


# -- configuration ---------------------------------------------------------------

def bundled_config(name: str) -> str:
    return resources.files("maldom").joinpath(f"configs/{name}.cfg").read_text("utf-8")


def load_config(path: str | None = None, overrides: Sequence[str] = ()) -> configparser.ConfigParser:
    """Desk defaults, then the user file (or a bundled name), then ``section.key=value`` overrides."""
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_string(bundled_config("desk"), source="desk.cfg")
    if path:
        if path in BUNDLED_CONFIGS:
            cfg.read_string(bundled_config(path), source=f"{path}.cfg")
        elif Path(path).is_file():
            try:
                cfg.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
        else:
            raise ConfigError(f"config file not found: {path}")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot or not option:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, option, value.strip())
    return cfg


def _get(cfg, section: str, key: str, kind=str):
    try:
        raw = cfg.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        raise ConfigError(f"missing [{section}] {key}") from None
    try:
        if kind is bool:
            return cfg.getboolean(section, key)
        if kind is Fraction:
            return Fraction(raw.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def section_seed(cfg, section: str) -> int:
    if cfg.has_option(section, "seed") and cfg.get(section, "seed").strip():
        return _get(cfg, section, "seed", int)
    return _get(cfg, "global", "seed", int)


def _existing(cfg, section: str, key: str) -> Path:
    value = _get(cfg, section, key).strip()
    if not value:
        raise ConfigError(f"[{section}] {key} is empty")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"[{section}] {key}: {path} does not exist")
    return path


def model_config(cfg, num_classes: int = 2, vocab_size: int = 257):
    from .models import ModelConfig

    values = {k: _get(cfg, "model", k, kind) for k, kind in MODEL_KEYS.items()}
    try:
        return ModelConfig(num_classes=num_classes, vocab_size=vocab_size, **values)
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None


def train_config(cfg, section: str):
    from .models import TrainConfig

    values = {"lr": _get(cfg, section, "lr", float),
              "weight_decay": _get(cfg, section, "weight_decay", float),
              "batch_size": _get(cfg, section, "batch_size", int),
              "seed": section_seed(cfg, section)}
    if section == "pretrain":
        values["steps"] = _get(cfg, section, "steps", int)
    else:
        values["epochs"] = _get(cfg, section, "epochs", int)
        if cfg.has_option(section, "eval_batch_size"):
            values["eval_batch_size"] = _get(cfg, section, "eval_batch_size", int)
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def tokenizer_config(cfg) -> bpe.TokenizerConfig:
    try:
        return bpe.TokenizerConfig(vocab_size=_get(cfg, "tokenizer", "vocab_size", int),
                                   min_frequency=_get(cfg, "tokenizer", "min_frequency", int))
    except ValueError as exc:
        raise ConfigError(f"[tokenizer] {exc}") from None


# -- helpers ------------------------------------------------------------------------

def _write_json(path: str | Path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_lines(path: str | Path, lines) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


class JsonlLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        self.fh.close()


def _read_lines(path: str | Path) -> tuple[list[str], int]:
    """Physical lines of a UTF-8 file; a final newline does not open an extra line."""
    text, replaced = corpus.decode_utf8(Path(path).read_bytes())
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r") for line in lines], replaced


def _preprocess_lines(lines: Sequence[str]) -> tuple[list[str], int]:
    """Preprocess raw lines, passing through ones that are already rendered."""
    out, failed = [], 0
    for line in lines:
        if urlprep.PREPROCESSED_RE.match(line):
            out.append(line)
            continue
        try:
            out.append(urlprep.preprocess(line))
        except urlprep.UrlError:
            failed += 1
    return out, failed


# -- commands ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    lines, replaced = _read_lines(args.input)
    rejects_path = args.rejects or f"{args.out}.rejects.tsv"
    kept, rejects, reasons = [], [], {}
    for lineno, line in enumerate(lines, start=1):
        try:
            kept.append(urlprep.preprocess(line))
        except urlprep.UrlError as exc:
            reason = type(exc).__name__
            reasons[reason] = reasons.get(reason, 0) + 1
            rejects.append(f"{lineno}\t{reason}: {exc}\t{line}")
    _write_lines(args.out, kept)
    _write_lines(rejects_path, rejects)
    report = {"input_lines": len(lines), "kept": len(kept), "rejected": len(rejects),
              "reasons": reasons, "replaced_bytes": replaced}
    if args.report:
        _write_json(args.report, report)
    log.info("preprocess: %d kept, %d rejected", len(kept), len(rejects))
    return 0


def cmd_dedup(args) -> int:
    entries, read_report = corpus.ingest(args.input, fmt="lines")
    kept, report = corpus.dedup(entries, lowercase=args.lowercase)
    report.skipped = read_report.skipped
    report.replaced_bytes = read_report.replaced_bytes
    _write_lines(args.out, [e.text for e in kept])
    if args.report:
        _write_json(args.report, json.loads(report.to_json()))
    log.info("dedup: %d kept, %d duplicates", report.kept, report.duplicates)
    return 0


def cmd_train_tokenizer(args) -> int:
    cfg = load_config(args.config, args.set)
    lines, _ = _read_lines(args.corpus)
    texts, failed = _preprocess_lines([ln for ln in lines if ln.strip()])
    if failed:
        log.warning("train-tokenizer: skipped %d unparseable lines", failed)
    tok = bpe.train(texts, tokenizer_config(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tok.save(out)
    log.info("train-tokenizer: %d tokens, %d merges -> %s", tok.vocab_size, len(tok.merges), out)
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.family == ["pretrain"]:
        _write_lines(out, corpus.gen_pretrain_corpus(args.n, args.seed))
        log.info("synth: %d pre-training lines -> %s", args.n, out)
        return 0
    if "pretrain" in args.family:
        raise ConfigError("--family pretrain cannot be combined with labeled families")
    if len(set(args.family)) != len(args.family):
        raise ConfigError("each --family may be given once")
    rows = corpus.make_dataset({f: args.n for f in args.family}, args.seed, binary=args.binary)
    corpus.write_csv(rows, out)
    log.info("synth: %d labeled rows -> %s", len(rows), out)
    return 0


def _load_tokenizer(cfg, pretrain_texts: list[str] | None) -> bpe.Tokenizer:
    path = Path(_get(cfg, "tokenizer", "path").strip() or "tokenizer.json")
    if path.is_file():
        log.info("using tokenizer %s", path)
        return bpe.Tokenizer.load(path)
    if pretrain_texts is None:
        raise ConfigError(f"[tokenizer] path {path} does not exist")
    tok = bpe.train(pretrain_texts, tokenizer_config(cfg))
    path.parent.mkdir(parents=True, exist_ok=True)
    tok.save(path)
    log.info("trained tokenizer (%d tokens) -> %s", tok.vocab_size, path)
    return tok


def cmd_pretrain(args) -> int:
    from .models import pretrain

    cfg = load_config(args.config, args.set)
    source = _existing(cfg, "corpus", "pretrain")
    mcfg = model_config(cfg)
    tcfg = train_config(cfg, "pretrain")
    try:
        policy = MaskingPolicy(select_rate=_get(cfg, "pretrain", "select_rate", float))
    except ValueError as exc:
        raise ConfigError(f"[pretrain] {exc}") from None

    entries, _ = corpus.ingest(source, fmt="lines")
    if _get(cfg, "corpus", "dedup", bool):
        entries, rep = corpus.dedup(entries, lowercase=_get(cfg, "corpus", "dedup_lowercase", bool))
        log.info("pretrain corpus: %d unique lines (%d duplicates)", rep.kept, rep.duplicates)
    texts, failed = _preprocess_lines([e.text for e in entries])
    if failed:
        log.warning("pretrain: skipped %d unparseable lines", failed)
    tok = _load_tokenizer(cfg, texts)

    loss_log = JsonlLog(_get(cfg, "pretrain", "log"))
    try:
        ckpt, losses = pretrain(mcfg, tok, texts, tcfg, policy, on_log=loss_log, preprocessed=True)
    finally:
        loss_log.close()
    out = ckpt.save(_get(cfg, "pretrain", "checkpoint"))
    log.info("pretrain: %d steps, final loss %.4f -> %s", len(losses), losses[-1] if losses else 0.0, out)
    return 0


def cmd_finetune(args) -> int:
    from .models import Checkpoint, evaluate, finetune

    cfg = load_config(args.config, args.set)
    source = _existing(cfg, "corpus", "labeled")
    init_dir = args.from_checkpoint or _get(cfg, "finetune", "from_checkpoint").strip()
    init = Checkpoint.load(init_dir) if init_dir else None
    mcfg = model_config(cfg)
    tcfg = train_config(cfg, "finetune")
    try:
        spec = corpus.SplitSpec(_get(cfg, "split", "train", Fraction), _get(cfg, "split", "valid", Fraction),
                                _get(cfg, "split", "test", Fraction), seed=section_seed(cfg, "split"),
                                stratified=_get(cfg, "split", "stratified", bool))
    except ValueError as exc:
        raise ConfigError(f"[split] {exc}") from None

    entries, _ = corpus.ingest(source, fmt="csv", text_col=_get(cfg, "corpus", "text_col"),
                               label_col=_get(cfg, "corpus", "label_col"))
    if _get(cfg, "corpus", "dedup", bool):
        entries, rep = corpus.dedup(entries, lowercase=_get(cfg, "corpus", "dedup_lowercase", bool))
        log.info("labeled corpus: %d unique rows (%d duplicates)", rep.kept, rep.duplicates)
    labels = corpus.LabelSet.from_entries(entries)
    train, valid, test = corpus.split(entries, spec)

    tokenizer = None
    if mcfg.arch == "TransformerEncoder" and init is None:
        tokenizer = _load_tokenizer(cfg, None)
    metric_log = JsonlLog(_get(cfg, "finetune", "log"))
    try:
        ckpt, _ = finetune(mcfg, train, valid, tcfg, labels.names, init=init, tokenizer=tokenizer,
                           on_log=metric_log)
    finally:
        metric_log.close()
    out = ckpt.save(_get(cfg, "finetune", "checkpoint"))
    log.info("finetune: best epoch %s -> %s", ckpt.metadata["best_epoch"], out)

    if test:
        rep = evaluate(ckpt.build_model(), ckpt.make_encoder(), test, len(labels))
        target = Path(_get(cfg, "output", "metrics"))
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(metrics.format_report(rep, "json", dataset=source.stem, model=mcfg.arch) + "\n",
                          encoding="utf-8")
        sys.stderr.write(metrics.format_report(rep, "table", dataset=source.stem, model=mcfg.arch))
    return 0


def cmd_evaluate(args) -> int:
    from .models import Checkpoint, evaluate

    ckpt = Checkpoint.load(args.checkpoint)
    entries, _ = corpus.ingest(args.data, fmt="csv", text_col=args.text_col, label_col=args.label_col,
                               label_names=ckpt.label_names)
    if not entries:
        raise corpus.CorpusError(f"{args.data}: no rows to evaluate")
    rep = evaluate(ckpt.build_model(), ckpt.make_encoder(), entries, len(ckpt.label_names))
    text = metrics.format_report(rep, args.format, dataset=Path(args.data).stem, model=ckpt.model_config.arch)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    log.info("evaluate: accuracy %.4f, macro-F1 %.4f -> %s", rep.accuracy, rep.f1_macro, out)
    return 0


def cmd_gradcheck(args) -> int:
    from .tensor.checks import OP_CASES, check_op

    names = args.ops or list(OP_CASES)
    unknown = [n for n in names if n not in OP_CASES]
    if unknown:
        raise ConfigError(f"unknown ops {unknown}; choose from {sorted(OP_CASES)}")
    failed = 0
    for name in names:
        res = check_op(name, args.trials, args.seed, args.tol)
        failed += not res.passed
        log.info("%-18s %s  max rel err %.2e over %d trials", name, "ok  " if res.passed else "FAIL",
                 res.max_rel_error, res.trials)
    log.info("gradcheck: %d/%d ops passed", len(names) - failed, len(names))
    return 1 if failed else 0


# -- parser ------------------------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--config", required=required,
                   help=f"config file, or a bundled name ({', '.join(BUNDLED_CONFIGS)}); layered over desk")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maldom", description="Malicious domain/URL classification pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("preprocess", help="render raw URLs/domains into the tagged input format")
    p.add_argument("--in", dest="input", required=True, help="raw line file")
    p.add_argument("--out", required=True, help="preprocessed line file")
    p.add_argument("--report", help="JSON counts")
    p.add_argument("--rejects", help="rejected lines with reasons (default: OUT.rejects.tsv)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("dedup", help="drop exact duplicate lines, keeping first occurrences")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="JSON counts")
    p.add_argument("--lowercase", action="store_true", help="compare case-insensitively")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("train-tokenizer", help="learn a BPE vocabulary from a line file")
    _config_flags(p)
    p.add_argument("--corpus", required=True, help="raw or preprocessed line file")
    p.add_argument("--out", required=True, help="tokenizer JSON")
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("synth", help="write a synthetic labeled CSV (or a raw pre-training line file)")
    p.add_argument("--family", action="append", required=True,
                   choices=("benign",) + corpus.DGA_FAMILIES + ("pretrain",),
                   help="repeatable; class ids follow flag order")
    p.add_argument("--n", type=int, required=True, help="rows per family")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--binary", action="store_true", help="collapse DGA families into one 'dga' class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-LM pre-training of the transformer encoder")
    _config_flags(p, required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="split, train, keep the best epoch, report test metrics")
    _config_flags(p, required=True)
    p.add_argument("--from-checkpoint", help="pre-trained checkpoint directory")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--text-col", default="url")
    p.add_argument("--label-col", default="label")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--ops", nargs="*", help="subset of ops (default: all)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s", force=True)
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.exit(2, f"maldom {args.command}: error: {exc}\n")
    except (OSError, ValueError, corpus.CorpusError, bpe.TokenizerError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
