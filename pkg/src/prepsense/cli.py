"""Command-line entry point.

Subcommands mirror the pipeline stages (ingest, embed, select-layers,
train, evaluate, report), plus augment for substitution variants, tag for
inference on raw text, and run-all for the orchestrated pipeline.

A ``--config`` file (the same flat JSON used by run-all) supplies defaults
for any subcommand, so ``prepsense --config run.json train`` runs that one
stage of the configured run; explicit flags always win.

Exit codes: 0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import augment as augment_mod
from . import evaluation, selection, tagging, training
from .cache import CacheStore, encode_corpus
from .classifier import TrainConfig, load_model_dir, save_model_dir
from .corpus import SenseInventory, carve_dev, ingest, stats
from .encoders import load_encoder
from .errors import StageError, ValidationError
from .pipeline import PipelineConfig, load_dataset, run_all

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _add_seed(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps a subcommand-level --seed from clobbering the global one
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="random seed (default 13)")


def _add_train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--hidden", type=int, default=None, help="MLP hidden width")
    parser.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    parser.add_argument("--batch", type=int, default=None, help="mini-batch size")
    parser.add_argument("--max-epochs", type=int, default=None)
    parser.add_argument("--patience", type=int, default=None,
                        help="epochs without dev-loss improvement before stopping")
    _add_seed(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prepsense",
        description="Disambiguate preposition senses from frozen transformer layers.",
    )
    parser.add_argument("--config", type=Path, default=None,
                        help="flat JSON pipeline config; supplies defaults for "
                             "any subcommand")
    parser.add_argument("--seed", type=int, default=None,
                        help="global random seed (default 13)")
    parser.add_argument("--verbose", "-v", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, validate, and split a corpus")
    p.add_argument("--in", dest="source", type=Path, default=None)
    p.add_argument("--format", choices=["native_jsonl", "semeval_xml"], default=None)
    p.add_argument("--out", type=Path, default=None, help="native dataset JSONL")
    p.add_argument("--inventory", type=Path, default=None,
                   help="sense inventory file (inferred from gold labels if absent)")
    p.add_argument("--inventory-out", type=Path, default=None,
                   help="where to write the effective inventory "
                        "(default: <out>.inventory.jsonl)")
    p.add_argument("--dev-ratio", type=float, default=None,
                   help="fraction of train carved into dev when the source has "
                        "no dev split (default 0.2; 0 disables)")
    _add_seed(p)

    p = sub.add_parser("embed", help="cache per-layer head representations")
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--model", default=None,
                   help="encoder spec: HF model id/path, or hash[:opts]")
    p.add_argument("--cache", type=Path, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--recompute", action="store_true")

    p = sub.add_parser("select-layers", help="per-preposition dev sweep over layers")
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--cache", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="choices JSONL")
    p.add_argument("--fingerprint", default=None,
                   help="encoder fingerprint when the cache holds several")
    _add_train_options(p)

    p = sub.add_parser("train", help="train final per-preposition classifiers")
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--cache", type=Path, default=None)
    p.add_argument("--choices", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="model directory")
    p.add_argument("--fingerprint", default=None)
    p.add_argument("--no-retrain-dev", action="store_true",
                   help="keep dev held out instead of retraining on train+dev")
    _add_train_options(p)

    p = sub.add_parser("evaluate", help="score models on the test split")
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--cache", type=Path, default=None)
    p.add_argument("--models", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="report JSON")

    p = sub.add_parser("report", help="figures and summary from a report JSON")
    p.add_argument("--in", dest="report", type=Path, default=None)
    p.add_argument("--plots", type=Path, default=None, help="output directory")
    p.add_argument("--choices", type=Path, default=None,
                   help="choices JSONL for layer-accuracy plots")

    p = sub.add_parser("augment", help="generate substitution variants")
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--rules", type=Path, required=True)
    p.add_argument("--lexicon", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cap", type=int, default=augment_mod.DEFAULT_CAP,
                   help="max variants per source instance")

    p = sub.add_parser("tag", help="annotate prepositions in raw text")
    p.add_argument("--models", type=Path, default=None)
    p.add_argument("--model", default=None, help="encoder spec (must match training)")
    p.add_argument("--inventory", type=Path, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="text to annotate")
    group.add_argument("--in", dest="infile", type=Path,
                       help="file of lines to annotate")
    p.add_argument("--out", type=Path, default=None, help="write JSON here")
    p.add_argument("--json", action="store_true",
                   help="print JSON instead of inline text")

    p = sub.add_parser("run-all", help="run every stage with a config file")
    p.add_argument("--force", action="store_true", help="ignore up-to-date checks")
    _add_seed(p)

    return parser


# -- config-aware argument resolution -----------------------------------------


def _load_config(args) -> PipelineConfig | None:
    if args.config is None:
        return None
    return PipelineConfig.from_file(args.config)


def _resolve(value, cfg_value, flag: str):
    if value is not None:
        return value
    if cfg_value is not None and cfg_value != "":
        return cfg_value
    raise ValidationError(f"missing {flag} (pass the flag or provide --config)")


def _seed(args, cfg: PipelineConfig | None) -> int:
    seed = getattr(args, "seed", None)
    if seed is not None:
        return seed
    return cfg.seed if cfg is not None else 13


def _train_config(args, cfg: PipelineConfig | None) -> TrainConfig:
    eff = cfg if cfg is not None else PipelineConfig()
    return TrainConfig(
        hidden_size=args.hidden if args.hidden is not None else eff.hidden_size,
        learning_rate=args.lr if args.lr is not None else eff.learning_rate,
        batch_size=args.batch if args.batch is not None else eff.batch_size,
        max_epochs=args.max_epochs if args.max_epochs is not None else eff.max_epochs,
        patience=args.patience if args.patience is not None else eff.patience,
        seed=_seed(args, cfg),
    )


# -- subcommand implementations ------------------------------------------------


def cmd_ingest(args, cfg) -> int:
    source = _resolve(args.source, cfg and cfg.raw_in, "--in")
    out = Path(_resolve(args.out, cfg and cfg.dataset_path, "--out"))
    format = args.format or (cfg.raw_format if cfg else "native_jsonl")
    inventory_in = args.inventory or (Path(cfg.inventory_in)
                                      if cfg and cfg.inventory_in else None)
    dev_ratio = args.dev_ratio if args.dev_ratio is not None else \
        (cfg.dev_ratio if cfg else 0.2)

    dataset = ingest(Path(source), format=format, inventory_path=inventory_in)
    if not dataset.split("dev") and dev_ratio > 0:
        dataset = carve_dev(dataset, ratio=dev_ratio, seed=_seed(args, cfg))
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset.save(out)
    inventory_out = args.inventory_out or \
        (cfg.inventory_path if cfg else None) or \
        out.with_suffix(".inventory.jsonl")
    dataset.inventory.save(inventory_out)
    totals = stats(dataset).to_dict()["totals"]
    print(f"instances: {totals['instances']}")
    print(f"prepositions: {totals['prepositions']}")
    print(f"inventory senses: {totals['inventory_senses']}"
          f"{' (inferred)' if totals['inventory_inferred'] else ''}")
    print(f"attested senses: {totals['attested_senses']}")
    print(f"zero-data senses: {totals['zero_data_senses']}")
    print(f"dataset -> {out}")
    print(f"inventory -> {inventory_out}")
    return EXIT_OK


def cmd_embed(args, cfg) -> int:
    dataset_path = _resolve(args.dataset, cfg and cfg.dataset_path, "--dataset")
    model = _resolve(args.model, cfg and cfg.encoder, "--model")
    cache_dir = _resolve(args.cache, cfg and cfg.cache_dir, "--cache")
    max_tokens = args.max_tokens if args.max_tokens is not None else \
        (cfg.max_tokens if cfg else None)

    dataset = load_dataset(dataset_path)
    encoder = load_encoder(model, max_tokens=max_tokens)
    cache = CacheStore(cache_dir)
    report = encode_corpus(encoder, dataset, cache, recompute=args.recompute)
    print(f"computed: {report.computed}  skipped: {report.skipped}  "
          f"failed: {len(report.failed)}  ({report.elapsed_seconds:.1f}s)")
    for instance_id, message in report.failed:
        print(f"  FAILED {instance_id}: {message}", file=sys.stderr)
    print(f"encoder fingerprint: {encoder.fingerprint()}")
    return EXIT_OK


def cmd_select_layers(args, cfg) -> int:
    dataset_path = _resolve(args.dataset, cfg and cfg.dataset_path, "--dataset")
    cache_dir = _resolve(args.cache, cfg and cfg.cache_dir, "--cache")
    out = Path(_resolve(args.out, cfg and cfg.choices_path, "--out"))

    dataset = load_dataset(dataset_path)
    cache = CacheStore(cache_dir)
    handle = cache.read_meta(args.fingerprint)
    choices = selection.select_all(
        dataset, cache, handle.fingerprint, handle.num_layers,
        _train_config(args, cfg),
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    selection.save_choices(choices, out)
    for choice in choices:
        best = (f"{choice.dev_accuracy_per_layer[choice.chosen_layer]:.3f}"
                if choice.dev_accuracy_per_layer else "n/a")
        print(f"{choice.preposition}: layer {choice.chosen_layer} (dev acc {best})")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    dataset_path = _resolve(args.dataset, cfg and cfg.dataset_path, "--dataset")
    cache_dir = _resolve(args.cache, cfg and cfg.cache_dir, "--cache")
    choices_path = _resolve(args.choices, cfg and cfg.choices_path, "--choices")
    out = Path(_resolve(args.out, cfg and cfg.models_dir, "--out"))
    retrain = False if args.no_retrain_dev else \
        (cfg.retrain_with_dev if cfg else True)

    dataset = load_dataset(dataset_path)
    cache = CacheStore(cache_dir)
    handle = cache.read_meta(args.fingerprint)
    choices = selection.load_choices(choices_path)
    models = training.train_models(
        dataset, cache, choices, _train_config(args, cfg), handle.fingerprint,
        retrain_with_dev=retrain,
    )
    written = save_model_dir(models, out)
    print(f"trained {len(written)} models -> {out}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    dataset_path = _resolve(args.dataset, cfg and cfg.dataset_path, "--dataset")
    cache_dir = _resolve(args.cache, cfg and cfg.cache_dir, "--cache")
    models_dir = _resolve(args.models, cfg and cfg.models_dir, "--models")
    out = Path(_resolve(args.out, cfg and cfg.report_path, "--out"))

    dataset = load_dataset(dataset_path)
    cache = CacheStore(cache_dir)
    models = load_model_dir(models_dir)
    report = evaluation.full_report(models, dataset, cache)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(f"macro accuracy: {report.macro_accuracy:.4f}")
    print(f"micro accuracy: {report.micro_accuracy:.4f}")
    print(f"baseline macro: {report.metadata['baseline_macro_accuracy']:.4f}")
    print(f"report -> {out}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    from . import plots  # matplotlib only loads for this subcommand

    report_path = _resolve(args.report, cfg and cfg.report_path, "--in")
    plots_dir = _resolve(args.plots, cfg and cfg.plots_dir, "--plots")
    choices_path = args.choices or (cfg.choices_path if cfg else None)

    report = evaluation.EvaluationReport.load(report_path)
    choices = None
    if choices_path and Path(choices_path).exists():
        choices = selection.load_choices(choices_path)
    written = plots.write_plots(report, choices, plots_dir)
    print(f"macro accuracy: {report.macro_accuracy:.4f}  "
          f"micro: {report.micro_accuracy:.4f}")
    for prep_report in sorted(report.reports, key=lambda r: r.accuracy):
        print(f"  {prep_report.preposition:>12}: {prep_report.accuracy:.3f} "
              f"({prep_report.n_correct}/{prep_report.n_test})")
    print(f"{len(written)} figures -> {plots_dir}")
    return EXIT_OK


def cmd_augment(args, cfg) -> int:
    dataset_path = _resolve(args.dataset, cfg and cfg.dataset_path, "--dataset")
    dataset = load_dataset(dataset_path)
    lexicon = augment_mod.load_lexicon(args.lexicon)
    bindings = augment_mod.load_rule_bindings(args.rules)
    augmented = augment_mod.augment_dataset(dataset, bindings, lexicon, cap=args.cap)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    augmented.save(args.out)
    print(f"{len(augmented.instances) - len(dataset.instances)} variants added "
          f"-> {args.out}")
    return EXIT_OK


def cmd_tag(args, cfg) -> int:
    models_dir = _resolve(args.models, cfg and cfg.models_dir, "--models")
    model = _resolve(args.model, cfg and cfg.encoder, "--model")
    inventory_path = args.inventory or \
        (cfg.inventory_path if cfg and cfg.inventory_path.exists() else None)
    max_tokens = args.max_tokens if args.max_tokens is not None else \
        (cfg.max_tokens if cfg else None)

    models = load_model_dir(models_dir)
    inventory = SenseInventory.load(inventory_path) if inventory_path else None
    encoder = load_encoder(model, max_tokens=max_tokens)

    texts = [args.text] if args.text else [
        line.strip() for line in args.infile.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    results = [tagging.tag(text, models, inventory, encoder) for text in texts]

    payload = [r.to_dict() for r in results]
    if args.json:
        print(json.dumps(payload if len(payload) > 1 else payload[0], indent=2,
                         ensure_ascii=False))
    else:
        for result in results:
            print(result.render_inline())
    if args.out:
        args.out.write_text(
            json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8"
        )
    return EXIT_OK


def cmd_run_all(args, cfg) -> int:
    if cfg is None:
        raise ValidationError("run-all needs --config pointing at a pipeline JSON")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    manifest = run_all(cfg, force=args.force)
    for stage, entry in manifest.data["stages"].items():
        state = "ran" if entry.get("executed") else "skipped"
        print(f"{stage:>13}: {state} ({entry.get('elapsed_seconds', 0)}s)")
    print(f"manifest -> {manifest.path}")
    return EXIT_OK


_HANDLERS = {
    "ingest": cmd_ingest,
    "embed": cmd_embed,
    "select-layers": cmd_select_layers,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "augment": cmd_augment,
    "tag": cmd_tag,
    "run-all": cmd_run_all,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_config(args)
        return _HANDLERS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
