"""
VidLang CLI - Synthetic data, pre-training, fine-tuning, evaluation and embedding export
"""

import os
import signal
import logging
import argparse
from dataclasses import replace
from typing import List, Optional, Sequence

from .core.config import Config, load_config
from .core.errors import DataFormatError, VidLangError
from .core.utils import setup_logger, write_metrics_file
from .data.records import VideoTextRecord, read_records
from .data.synthetic import SyntheticSpec, generate_synthetic
from .downstream.caption import evaluate_caption, finetune_caption
from .downstream.classify import ClassHeadSpec, evaluate_classify, finetune_classify
from .downstream.common import load_query_params
from .downstream.export import export_embeddings
from .downstream.retrieval import evaluate_retrieval, finetune_retrieval
from .model.checkpoint import save_checkpoint
from .model.params import ModelParams
from .model.vocab import load_vocabulary
from .pretrain.trainer import Trainer, run_pretraining

logger = logging.getLogger(__name__)

TASKS = ("retrieval-text", "retrieval-image", "classify-plot", "classify-product", "caption")


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        prog="vidlang",
        description="Video-language contrastive pre-training and downstream evaluation"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="Generate a synthetic record file")
    gen.add_argument("--spec", metavar="FILE", help="INI file with a [synthetic] section (default: built-in spec)")
    gen.add_argument("--out", metavar="FILE", required=True, help="Record file to write")

    pretrain = commands.add_parser("pretrain", help="Pre-train on the configured data")
    pretrain.add_argument("--config", metavar="FILE", help="Configuration file (default: built-in defaults)")
    pretrain.add_argument("--out", metavar="DIR", help="Output directory (default: [paths] out_dir)")
    pretrain.add_argument("--resume", metavar="CKPT", help="Checkpoint to continue from")

    for name, text in (("finetune", "Fine-tune a checkpoint on a downstream task"),
                       ("eval", "Evaluate a checkpoint on a downstream task")):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("task", choices=TASKS)
        sub.add_argument("--config", metavar="FILE", help="Configuration file describing the checkpoint's model")
        sub.add_argument("--ckpt", metavar="FILE", required=True, help="Pre-trained or fine-tuned checkpoint")
        sub.add_argument("--data", metavar="FILE", help="Record file (default: from [paths])")
        sub.add_argument("--out", metavar="FILE", help="Output file (default: under [paths] out_dir)")

    export = commands.add_parser("export-emb", help="Export [CLS] embeddings as TSV")
    export.add_argument("--config", metavar="FILE", help="Configuration file (only [log] is used)")
    export.add_argument("--ckpt", metavar="FILE", required=True, help="Checkpoint to embed with")
    export.add_argument("--data", metavar="FILE", required=True, help="Record file")
    export.add_argument("--out", metavar="FILE", required=True, help="TSV file to write")

    return parser.parse_args(argv)


def _load(path: Optional[str]) -> Config:
    """Configuration with the vocabulary's size and special ids applied to the model"""
    config = load_config(path)
    if config.paths.vocab:
        vocab = load_vocabulary(config.paths.vocab, config.train.model)
        config.train = replace(config.train, model=vocab.apply_to(config.train.model))
        config.validate()
    return config


def _records(path: str, params: ModelParams) -> List[VideoTextRecord]:
    if not path or not os.path.exists(path):
        raise DataFormatError(f"Data file {path!r} does not exist")
    return read_records(path, params.config)


def _gen_data(args: argparse.Namespace) -> int:
    spec = SyntheticSpec.from_file(args.spec) if args.spec else SyntheticSpec()
    records = generate_synthetic(spec, args.out)
    logger.info(f"Wrote {len(records)} synthetic records to {args.out}")
    return 0


def _pretrain(args: argparse.Namespace) -> int:
    config = _load(args.config)
    trainer = Trainer(config.train)
    trainer.set_on_stop_callback(lambda: logger.info("Pre-training stopped by signal; saving final checkpoint"))
    previous = signal.signal(signal.SIGINT, lambda signum, frame: trainer.stop())
    try:
        result = run_pretraining(config, out_dir=args.out, resume=args.resume, trainer=trainer)
    finally:
        signal.signal(signal.SIGINT, previous)
    logger.info(f"Final checkpoint: {result.checkpoint}")
    return 0


def _finetune(args: argparse.Namespace) -> int:
    config = _load(args.config)
    params = load_query_params(args.ckpt, expected=config.train.model if args.config else None)
    records = _records(args.data or config.paths.data, params)
    downstream = config.downstream
    if args.task.startswith("retrieval-"):
        result = finetune_retrieval(args.task.split("-", 1)[1], records, params, downstream)
    elif args.task.startswith("classify-"):
        spec = ClassHeadSpec.for_records(args.task.split("-", 1)[1], records, downstream)
        result = finetune_classify(spec, records, params, downstream)
    else:
        result = finetune_caption(records, params, downstream)

    out = args.out or os.path.join(config.paths.out_dir, f"finetune_{args.task}.vlck")
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    save_checkpoint(out, params.config, {"query": params.state()},
                    meta={"task": args.task, "epochs": downstream.epochs, "losses": result.losses})
    logger.info(f"Saved fine-tuned checkpoint to {out}")
    return 0


def _evaluate(args: argparse.Namespace) -> int:
    config = _load(args.config)
    params = load_query_params(args.ckpt, expected=config.train.model if args.config else None)
    records = _records(args.data or config.paths.eval_data or config.paths.data, params)
    downstream = config.downstream
    out = args.out or os.path.join(config.paths.out_dir, f"eval_{args.task}.tsv")

    if args.task.startswith("retrieval-"):
        metrics = evaluate_retrieval(args.task.split("-", 1)[1], records, params, downstream).as_metrics()
    elif args.task.startswith("classify-"):
        spec = ClassHeadSpec.from_params(args.task.split("-", 1)[1], params)
        metrics = evaluate_classify(spec, records, params, downstream)
    else:
        report = evaluate_caption(records, params, downstream)
        metrics = report.metrics
        vocab = load_vocabulary(config.paths.vocab, params.config)
        captions = os.path.splitext(out)[0] + ".captions.tsv"
        directory = os.path.dirname(captions)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(captions, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(report.lines(vocab)) + "\n")
        logger.info(f"Wrote {len(report.ids)} captions to {captions}")

    write_metrics_file(out, metrics)
    logger.info(f"Wrote {args.task} metrics to {out}")
    return 0


def _export(args: argparse.Namespace) -> int:
    params = load_query_params(args.ckpt)
    export_embeddings(_records(args.data, params), params, args.out)
    return 0


COMMANDS = {
    "gen-data": _gen_data,
    "pretrain": _pretrain,
    "finetune": _finetune,
    "eval": _evaluate,
    "export-emb": _export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point

    Returns:
        Process exit code: 0 on success, 1 on a handled failure
    """
    args = parse_arguments(argv)
    try:
        log = load_config(getattr(args, "config", None)).log
    except VidLangError as e:
        log = Config().log
        setup_logger(log.log_file, log.log_level, log.max_log_size, log.backup_count)
        logger.error(f"Invalid configuration: {e}")
        return 1
    setup_logger(log.log_file, log.log_level, log.max_log_size, log.backup_count)

    try:
        return COMMANDS[args.command](args)
    except (VidLangError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
