"""Command-line entry point.

Exit codes: 0 ok, 2 usage or validation error, 3 empty vocabulary,
4 non-finite training loss, 5 empty feature selection.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .config import ConfigError, PipelineConfig, load_config, with_overrides
from .explain import EmptySelection
from .features import EmptyVocabulary
from .ingest import FORMATS, IngestError
from .models import ARCH_PRESETS, DegenerateLabels, DimensionMismatch, ModelFormatError, NonFiniteLoss
from .pii import SyntheticSpec

EXIT_OK, EXIT_USAGE, EXIT_EMPTY_VOCAB, EXIT_DIVERGED, EXIT_EMPTY_SELECTION = 0, 2, 3, 4, 5


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--config", type=Path, help="sectioned key = value config file")
    g.add_argument("--out", dest="output", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("-v", "--verbose", action="store_true")


def _input_args(p):
    g = p.add_argument_group("input")
    g.add_argument("--format", choices=FORMATS, dest="input.format")
    g.add_argument("--rules", dest="input.rules", help="tab-separated PII rule file")
    g.add_argument("--labels", dest="input.labels", help="flow_id<TAB>label overrides")


def _feature_args(p):
    g = p.add_argument_group("features")
    g.add_argument("--freq-t", type=int, dest="features.freq_t")
    g.add_argument("--tfidf-t", type=float, dest="features.tfidf_t")
    g.add_argument("--tfidf-percentile", type=float, dest="features.tfidf_percentile")
    g.add_argument("--h1-threshold", type=float, dest="features.heuristic1_threshold")
    g.add_argument("--stop-words", dest="features.stop_words")
    g.add_argument("--train-domains", type=_names, dest="split.train_domains", help="comma-separated")
    g.add_argument("--test-domains", type=_names, dest="split.test_domains", help="comma-separated")
    g.add_argument("--test-fraction", type=float, dest="split.test_fraction")
    g.add_argument("--val-fraction", type=float, dest="split.val_fraction")


def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=("dt", "nn", "both"), dest="model.kind")
    g.add_argument("--arch", choices=sorted(ARCH_PRESETS), dest="model.arch")
    g.add_argument("--prune", action=argparse.BooleanOptionalAction, dest="model.prune")
    g.add_argument("--epochs", type=int, dest="model.epochs")
    g.add_argument("--batch-size", type=int, dest="model.batch_size")
    g.add_argument("--learning-rate", type=float, dest="model.alpha")
    g.add_argument("--max-depth", type=int, dest="model.max_depth")
    g.add_argument("--min-samples-leaf", type=int, dest="model.min_samples_leaf")


def _lime_args(p):
    g = p.add_argument_group("explain")
    g.add_argument("--heuristic", choices=("h2", "h3"), dest="lime.heuristic")
    g.add_argument("--n-val", type=int, dest="lime.n_val")
    g.add_argument("--n-perturbations", type=int, dest="lime.n_perturbations")
    g.add_argument("--kernel-width", type=float, dest="lime.kernel_width")
    g.add_argument("--percentile", type=float, dest="lime.percentile")
    g.add_argument("--top-frac", type=float, dest="lime.top_frac")
    g.add_argument("--support", type=float, dest="lime.support")
    g.add_argument("--lime-model", choices=("dt", "nn"), dest="lime.model")
    g.add_argument("--report-label", dest="lime.report_label")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leakhound", description="PII leak detection for HTTP flows")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse captured flow logs into corpus.fl")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output-file", type=Path, help="corpus file (default <out>/corpus.fl)")
    _common(p)
    _input_args(p)

    p = sub.add_parser("generate", help="write a synthetic labelled corpus")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--pii-rate", type=float, default=0.3)
    p.add_argument("--decoy-rate", type=float, default=SyntheticSpec.decoy_rate)
    _common(p)

    p = sub.add_parser("label", help="scan the corpus for PII and write labels")
    _common(p)
    _input_args(p)

    p = sub.add_parser("featurize", help="extract features and split train/val/test")
    _common(p)
    _feature_args(p)
    p = sub.add_parser("train", help="fit classifiers on the featurized split")
    _common(p)
    _model_args(p)
    p = sub.add_parser("prune", help="cost-complexity pruning path of the trained tree")
    _common(p)
    p = sub.add_parser("explain-select", help="LIME explanations, H2/H3 selection and retraining")
    _common(p)
    _model_args(p)
    _lime_args(p)

    p = sub.add_parser("detect", help="classify a corpus with a trained model")
    p.add_argument("--model-file", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--vocab", type=Path, help="vocabulary file (default <out>/vocab.txt)")
    p.add_argument("--profile", help="subject key (e.g. a device id) for profile aggregation")
    _common(p)
    _input_args(p)

    p = sub.add_parser("report", help="assemble report.json and report.txt")
    _common(p)

    p = sub.add_parser("run", help="every stage in order")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--resume", action="store_true", help="skip stages whose artifacts exist")
    p.add_argument("--no-explain", action="store_true")
    _common(p)
    _input_args(p)
    _feature_args(p)
    _model_args(p)
    _lime_args(p)

    for sp in sub.choices.values():
        for action in sp._actions:
            if "." in action.dest and action.metavar is None and action.choices is None and action.nargs != 0:
                action.metavar = action.dest.split(".", 1)[1].upper()
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    overrides.update(seed=args.seed, output=args.output, threads=args.threads)
    if getattr(args, "inputs", None):
        overrides["input.paths"] = tuple(args.inputs)
    return with_overrides(cfg, overrides).validate()


def _dispatch(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ws = pl.Workspace.create(cfg)
    cmd = args.command
    if cmd == "ingest":
        pl.stage_ingest(ws, args.output_file)
    elif cmd == "generate":
        spec = SyntheticSpec(args.n, args.pii_rate, cfg.seed, decoy_rate=args.decoy_rate)
        pl.stage_generate(ws, spec)
    elif cmd == "label":
        pl.stage_label(ws)
    elif cmd == "featurize":
        pl.stage_featurize(ws)
    elif cmd == "train":
        pl.stage_train(ws)
        pl.stage_report(ws)
    elif cmd == "prune":
        pl.stage_prune(ws)
        pl.stage_report(ws)
    elif cmd == "explain-select":
        pl.stage_explain_select(ws)
        pl.stage_report(ws)
    elif cmd == "detect":
        fmt = cfg.input.format
        pl.stage_detect(ws, args.model_file, args.corpus, fmt, args.vocab, args.profile)
    elif cmd == "report":
        pl.stage_report(ws)
        sys.stdout.write(ws.path(pl.REPORT_TXT).read_text(encoding="utf-8"))
    elif cmd == "run":
        pl.run_pipeline(ws, resume=args.resume, explain=not args.no_explain)
        sys.stdout.write(ws.path(pl.REPORT_TXT).read_text(encoding="utf-8"))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except EmptyVocabulary as exc:
        print(f"error: empty vocabulary: {exc}", file=sys.stderr)
        return EXIT_EMPTY_VOCAB
    except NonFiniteLoss as exc:
        print(f"error: training diverged (try a lower learning rate): {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except EmptySelection as exc:
        print(f"error: empty selection: {exc}", file=sys.stderr)
        return EXIT_EMPTY_SELECTION
    except (ConfigError, IngestError, pl.FeatureMismatch, ModelFormatError, DimensionMismatch,
            DegenerateLabels, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
