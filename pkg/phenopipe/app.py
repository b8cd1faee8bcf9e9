#!/usr/bin/env python3
"""
phenopipe CLI - phenotype extraction and HPO normalization pipeline
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv
from tabulate import tabulate

from .config import PhenoPipeConfig
from .exceptions import ConfigurationError, PhenoPipeError
from .logging_handler import configure_logging
from .normalizer import run_ablation
from .pipeline import Pipeline, summary_table
from .synthetic import nen_benchmark, write_synthetic

logger = logging.getLogger(__name__)

STAGE_COMMANDS = (
    "build-dict",
    "split",
    "train-ner",
    "train-nen",
    "predict",
    "ensemble",
    "evaluate",
    "end2end",
)


def load_customer_env() -> None:
    """Load conventional env files without overriding exported credentials."""
    for env_file in dict.fromkeys([Path.cwd() / ".env", Path.home() / ".env"]):
        if env_file.is_file():
            load_dotenv(env_file, override=False)


def _absolute(value: Optional[str]) -> Optional[str]:
    return str(Path(value).expanduser().resolve()) if value else None


def load_config(args) -> PhenoPipeConfig:
    """Config file merged over defaults, then global CLI flags."""
    overrides: Dict[str, Any] = {
        "seed": getattr(args, "seed", None),
        "paths.abbrev_lexicon": _absolute(getattr(args, "abbrev_lexicon", None)),
        "paths.artifacts_dir": _absolute(getattr(args, "artifacts", None)),
        "ner.backend": getattr(args, "backend", None),
    }
    config = PhenoPipeConfig(getattr(args, "config", None), overrides)
    configure_logging(
        getattr(args, "log_level", None) or config.get("logging.level", "info"),
        config.get("logging.file"),
    )
    return config


def run(command: str, cfg: PhenoPipeConfig, options: Optional[argparse.Namespace] = None) -> int:
    """Run one pipeline command; returns the process exit status."""
    options = options or argparse.Namespace()
    try:
        if command not in STAGE_COMMANDS:
            raise ConfigurationError(f"Unknown command {command!r}; choose from {STAGE_COMMANDS}")
        pipeline = Pipeline(cfg.pipeline_config())
        layout = pipeline.layout

        if command == "build-dict":
            dictionary = pipeline.build_dict()
            print(f"Dictionary: {len(dictionary)} entries over {len(dictionary.hpo_ids())} terms")
            print(f"Written to {layout.dictionary}")
        elif command == "split":
            train, validation = pipeline.split()
            print(f"Split: {len(train)} train / {len(validation)} validation consultations")
            with open(layout.summary, encoding="utf-8") as f:
                print(summary_table(json.load(f)))
        elif command == "train-ner":
            model = pipeline.train_ner()
            print(f"Grid model trained ({len(model.loss_history)} epochs) -> {layout.grid_model}")
        elif command == "train-nen":
            trained = pipeline.train_nen()
            print(
                f"Normalizer trained (lambda={trained.sparse_weight:.4f}, "
                f"skipped={trained.skip_counter.skipped}) -> {layout.normalizer}"
            )
        elif command == "predict":
            predictions = pipeline.predict()
            mentions = sum(len(s) for s in predictions)
            print(f"Predicted {mentions} mentions in {len(predictions)} consultations")
            print(f"Written to {layout.prediction_file('predictions')}")
        elif command == "ensemble":
            merged = pipeline.ensemble(
                getattr(options, "a", None),
                getattr(options, "b", None),
                getattr(options, "out", None),
            )
            print(f"Merged predictions for {len(merged)} consultations")
        elif command == "evaluate":
            report = pipeline.evaluate(
                getattr(options, "gold", None),
                getattr(options, "pred", None),
                getattr(options, "per_term", False),
            )
            print(report.to_table())
        else:
            report = pipeline.end2end(getattr(options, "per_term", False))
            print(report.to_table())
            print(f"Report written to {layout.reports / 'report.json'}")
    except PhenoPipeError as e:
        logger.debug("Command %s failed: %s", command, e.to_dict())
        print(f"Error: {e.message}", file=sys.stderr)
        return 1
    return 0


def cmd_stage(args):
    """Handle the pipeline stage commands"""
    try:
        cfg = load_config(args)
    except PhenoPipeError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        return 1
    return run(args.command, cfg, args)


def cmd_end2end(args):
    """Handle 'phenopipe end2end' - all stages, optionally on generated data"""
    if not args.synthetic:
        return cmd_stage(args)
    artifacts = Path(args.artifacts or "artifacts").expanduser().resolve()
    seed = args.seed if args.seed is not None else 13
    try:
        paths = write_synthetic(artifacts / "synthetic", seed)
        args.config = str(paths["config"])
        args.artifacts = str(artifacts)
        cfg = load_config(args)
    except PhenoPipeError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        return 1
    print(f"Synthetic data written to {artifacts / 'synthetic'}")
    return run("end2end", cfg, args)


def cmd_synth(args):
    """Handle 'phenopipe synth' - write the synthetic data set"""
    seed = args.seed if args.seed is not None else 13
    try:
        paths = write_synthetic(args.out, seed)
    except (PhenoPipeError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    rows = [[name, str(path)] for name, path in paths.items()]
    print(tabulate(rows, headers=["File", "Path"], tablefmt="grid"))
    return 0


def cmd_ablate_nen(args):
    """Handle 'phenopipe ablate-nen' - NEN ablation on the synthetic benchmark"""
    try:
        cfg = load_config(args)
        artifacts = Path(cfg.pipeline_config().artifacts_dir)
        benchmark = nen_benchmark(artifacts / "ablation", int(cfg.get("seed")))
        report = run_ablation(
            benchmark.train,
            benchmark.test,
            benchmark.dictionary,
            cfg.normalizer_config(),
            cfg.pre_finetune_config(),
            cfg.dense_settings(),
            int(cfg.get("seed")),
        )
    except PhenoPipeError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        return 1

    rows = [
        [r.variant] + [f"{v:.4f}" for v in (r.top1_accuracy, r.precision, r.recall, r.f1)]
        for r in report.rows
    ]
    headers = ["Variant", "Top-1", "Precision", "Recall", "F1"]
    print(tabulate(rows, headers=headers, tablefmt="grid"))
    out = artifacts / "reports" / "ablation.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"Written to {out}")
    return 0


def cmd_config(args):
    """Handle 'phenopipe config' command - Configuration management"""
    try:
        if args.config_action == "init":
            PhenoPipeConfig().export_config(args.out)
            print(f"✅ Default configuration written to {args.out}")
            return 0

        config = PhenoPipeConfig(args.config)
        if args.config_action == "show":
            dumped = yaml.safe_dump(config.list_all(), default_flow_style=False, sort_keys=True)
            print(dumped, end="")
            return 0

        issues = config.validate()
        if issues:
            for issue in issues:
                print(f"❌ {issue}")
            return 1
        print("✅ Configuration is valid")
        return 0
    except PhenoPipeError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        return 1


def add_global_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="Random seed (overrides config)")
    parser.add_argument("--abbrev-lexicon", help="Abbreviation lexicon TSV (overrides config)")
    parser.add_argument("--artifacts", help="Artifacts directory (overrides config)")
    parser.add_argument(
        "--backend", choices=["grid", "llm", "both"], help="NER backend (overrides config)"
    )
    parser.add_argument(
        "--log-level", choices=["debug", "info", "warning", "error"], help="Logging level"
    )


def main(argv=None):
    """Main CLI entry point"""
    parser = argparse.ArgumentParser(
        prog="phenopipe",
        description="Extract phenotype findings from consultation text and normalize them to HPO",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  phenopipe synth --out data/                       # Write the synthetic data set
  phenopipe --config data/phenopipe.yaml build-dict
  phenopipe --config data/phenopipe.yaml split
  phenopipe --config data/phenopipe.yaml train-ner
  phenopipe --config data/phenopipe.yaml train-nen
  phenopipe --config data/phenopipe.yaml --backend both predict
  phenopipe --config data/phenopipe.yaml evaluate --per-term
  phenopipe evaluate --gold gold.tsv --pred predictions.tsv
  phenopipe ensemble --a grid.tsv --b llm.tsv --out merged.tsv
  phenopipe end2end --synthetic --artifacts /tmp/run
  phenopipe ablate-nen
  phenopipe config init --out phenopipe.yaml
        """,
    )

    # Global options, accepted before or after the command
    add_global_options(parser)
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    add_global_options(common)
    parser.add_argument(
        "--version",
        action="version",
        version=f'phenopipe {__import__("phenopipe").__version__}',
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    def add_command(name: str, help_text: str) -> argparse.ArgumentParser:
        return subparsers.add_parser(name, help=help_text, parents=[common])

    add_command("build-dict", "Flatten the ontology into the synonym dictionary")
    add_command("split", "Stratified train/validation split by edge case")
    add_command("train-ner", "Train the word-pair grid NER model")
    add_command("train-nen", "Train the normalizer")
    add_command("predict", "Extract and normalize findings of the validation split")

    ensemble_parser = add_command("ensemble", "Merge two prediction files")
    ensemble_parser.add_argument(
        "--a", type=Path, help="Preferred predictions TSV (default: grid run)"
    )
    ensemble_parser.add_argument("--b", type=Path, help="Second predictions TSV (default: LLM run)")
    ensemble_parser.add_argument("--out", type=Path, help="Merged output TSV")

    evaluate_parser = add_command("evaluate", "Score predictions")
    evaluate_parser.add_argument(
        "--gold", type=Path, help="Gold annotation TSV (default: validation split)"
    )
    evaluate_parser.add_argument(
        "--pred", type=Path, help="Predictions TSV (default: predictions.tsv)"
    )
    evaluate_parser.add_argument("--per-term", action="store_true", help="Add per-HPO-id breakdown")

    end2end_parser = add_command("end2end", "Run every stage and evaluate")
    end2end_parser.add_argument(
        "--synthetic",
        action="store_true",
        help="Generate the synthetic data set first and run on it",
    )
    end2end_parser.add_argument("--per-term", action="store_true", help="Add per-HPO-id breakdown")

    synth_parser = add_command("synth", "Write the synthetic data set")
    synth_parser.add_argument("--out", required=True, type=Path, help="Output directory")

    add_command("ablate-nen", "NEN ablation on the synthetic benchmark")

    config_parser = add_command("config", "Manage configuration")
    config_parser.add_argument(
        "config_action", choices=["init", "show", "validate"], help="Config action"
    )
    config_parser.add_argument("--out", default="phenopipe.yaml", help="Output file for 'init'")

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    load_customer_env()

    commands = {name: cmd_stage for name in STAGE_COMMANDS}
    commands.update(
        {
            "end2end": cmd_end2end,
            "synth": cmd_synth,
            "ablate-nen": cmd_ablate_nen,
            "config": cmd_config,
        }
    )

    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
