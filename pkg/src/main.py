"""Command-line entry point.

Every command reads the run config (``--config`` or ``WOUNDFORMER_CONFIG``) and accepts
``--section.key=value`` overrides after its own flags. Errors are printed as
``error[<category>]: <message>`` with an exit code per category.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from src.config import RunConfig, load_run_config
from src.data.dataset import save_sample, split_dataset, write_manifest
from src.data.synthetic import generate_synthetic_dataset
from src.decoder.ablation import ABLATION_ROWS
from src.errors import VerificationError, WoundFormerError
from src.segmentation.counting import SCOPES, count_report
from src.segmentation.gradcheck_suite import run_gradcheck_suite
from src.training.ablation import run_ablation_row
from src.training.checkpoint import load_checkpoint
from src.training.compare import run_decoder_comparison
from src.training.trainer import Trainer, evaluate, prepare_splits

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV_VAR = "WOUNDFORMER_LOG_LEVEL"

EXIT_CODES = {"config": 2, "codec": 3, "label": 3, "numeric": 4, "verification": 5}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="woundformer",
        description="Wound tissue segmentation: training, evaluation and verification harnesses",
    )
    parser.add_argument("--config", help="Run-config JSON file (default: $WOUNDFORMER_CONFIG or built-in defaults)")
    parser.add_argument("--log-level", default=None, help="Logging level (default: $WOUNDFORMER_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a model on the configured splits")
    train.add_argument("--out", required=True, help="Directory for best.ckpt, last.ckpt and history.tsv")
    train.add_argument("--resume", help="Checkpoint to continue from")

    evaluation = commands.add_parser("eval", help="Score a checkpoint on one split")
    evaluation.add_argument("--checkpoint", required=True)
    evaluation.add_argument("--split", choices=["train", "val", "test"], default="test")

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference check of every differentiable operation")
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)

    ablate = commands.add_parser("ablate", help="Train one row of the decoder ablation grid")
    ablate.add_argument("row", type=int, choices=range(1, len(ABLATION_ROWS) + 1), metavar=f"ROW(1..{len(ABLATION_ROWS)})")
    ablate.add_argument("--epochs", type=int, default=10)
    ablate.add_argument("--results", default="results/ablation.tsv", help="TSV the row is appended to")

    compare = commands.add_parser("compare", help="Spatial decoder versus All-MLP head over several seeds")
    compare.add_argument("--seeds", type=int, default=5)
    compare.add_argument("--epochs", type=int, default=None)
    compare.add_argument("--samples", type=int, default=64)

    synth = commands.add_parser("synth-data", help="Write a synthetic dataset with train/val/test manifests")
    synth.add_argument("--out", required=True)

    count = commands.add_parser("count", help="Analytic versus runtime parameter or FLOP counts")
    count.add_argument("kind", choices=["params", "flops"])
    count.add_argument("--scope", choices=SCOPES, default="decoder")
    return parser


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    train_set, val_set, _ = prepare_splits(config)
    result = Trainer(config).train(train_set, val_set, out_dir=args.out, resume=args.resume)
    print(f"Trained {len(result.history)} epochs; best val mean DSC {result.best_metric:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    splits = dict(zip(("train", "val", "test"), prepare_splits(config)))
    palette = config.data.build_palette()
    report = evaluate(checkpoint, splits[args.split], palette)
    short = [palette.short_names[palette.names.index(name)] for name in report.per_class_dsc]
    print(report.to_tsv(short, label=args.split), end="")
    return 0


def cmd_gradcheck(args: argparse.Namespace, config: RunConfig) -> int:
    results = run_gradcheck_suite(tolerance=args.tolerance, seed=config.train.seed)
    for name, report in results:
        print(f"{name:<20} {report.summary()}")
    failed = [name for name, report in results if not report.passed]
    if failed:
        raise VerificationError(f"gradient check failed for: {', '.join(failed)}")
    print(f"All {len(results)} operations passed at tolerance {args.tolerance:g}")
    return 0


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> int:
    frame = run_ablation_row(args.row, config, epochs=args.epochs, results_path=args.results)
    print(frame.to_csv(sep="\t", index=False), end="")
    return 0


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> int:
    outcome = run_decoder_comparison(config, list(range(args.seeds)), n_samples=args.samples, epochs=args.epochs)
    print(outcome.per_seed.to_csv(sep="\t", index=False), end="")
    print(outcome.comparison.summary())
    return 0


def cmd_synth_data(args: argparse.Namespace, config: RunConfig) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    data = config.data
    samples = generate_synthetic_dataset(
        data.synthetic_samples,
        data.synthetic_size,
        data.build_palette().num_classes,
        data.synthetic_seed,
        data.synthetic_style,
    )
    entries = {}
    for sample in samples:
        image, mask = Path("images") / f"{sample.source_id}.ppm", Path("masks") / f"{sample.source_id}.pgm"
        save_sample(sample, out / image, out / mask)
        entries[sample.source_id] = (image, mask)

    for name, split in zip(("train", "val", "test"), split_dataset(samples, data.split_fractions, data.synthetic_seed)):
        write_manifest([entries[sample.source_id] for sample in split], out / f"{name}.tsv")
    print(f"Wrote {len(samples)} samples and train/val/test manifests to {out}")
    return 0


def cmd_count(args: argparse.Namespace, config: RunConfig) -> int:
    report = count_report(args.kind, args.scope, config)
    print(report.summary())
    if not report.matches:
        raise VerificationError(f"analytic and runtime {args.kind} differ for {args.scope}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "compare": cmd_compare,
    "synth-data": cmd_synth_data,
    "count": cmd_count,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    level = (args.log_level or os.getenv(LOG_LEVEL_ENV_VAR) or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(asctime)s - %(levelname)s - %(message)s")

    unknown: List[str] = [arg for arg in extra if not (arg.startswith("--") and "=" in arg and "." in arg.split("=", 1)[0])]
    if unknown:
        parser.error(f"unrecognized arguments: {' '.join(unknown)}")

    try:
        config = load_run_config(args.config, extra)
        logger.info(f"Running {args.command}")
        code = COMMANDS[args.command](args, config)
        logger.info(f"Finished {args.command}")
        return code
    except WoundFormerError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())
