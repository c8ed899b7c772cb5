"""
multifuse - Main Entry Point

Command-line front end of the RGB + thermal pedestrian detector:
dataset synthesis, training, evaluation, inference, gradient checking,
confidence calibration and ablations.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from tqdm import tqdm

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent))

from cli import commands
from cli.gradcheck_suite import format_table
from model.network import MODES
from utils.config import RunConfig, config
from utils.errors import (ChecksumError, ConfigError, DegenerateBoxError, FormatError, IoError,
                          MissingConfidenceError, MissingModalityError, NoGroundTruthError, NumericError,
                          ShapeError)
from utils.logger import logger, set_console_level

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

COMMANDS = ("synth", "train", "eval", "infer", "gradcheck", "confcal", "ablate")


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the documented process exit code."""
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (FormatError, MissingModalityError, ChecksumError, IoError, NoGroundTruthError,
                          MissingConfidenceError, ShapeError, DegenerateBoxError)):
        return EXIT_DATA
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, OSError):
        return EXIT_DATA
    # bad arguments that slipped past validation
    if isinstance(error, (ValueError, TypeError, KeyError)):
        return EXIT_USAGE
    return EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=config.APP_NAME,
        description="Multimodal (RGB + thermal) pedestrian detector")
    parser.add_argument('--version', action='version', version=f"{config.APP_NAME} {config.APP_VERSION}")
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help="Run config JSON (default: configs/default.json)")
    parser.add_argument('--seed', type=int, help="Global seed for training and synthesis")
    parser.add_argument('--mode', choices=MODES, default="multimodal",
                        help="Modality mode for eval/infer (and for training with --train-mode)")
    parser.add_argument('--train-mode', action='store_true',
                        help="Train with the --mode modality only (unimodal baselines)")
    parser.add_argument('--checkpoint', help="Checkpoint path (default: io.checkpoint_path)")
    parser.add_argument('--dataset', help="Dataset directory (default: io.dataset_dir)")
    parser.add_argument('--out', help="Output directory or file, depending on the command")
    parser.add_argument('--split', choices=("train", "val", "test"), default="test", help="Split to evaluate")
    parser.add_argument('--rgb', nargs='+', default=[], help="RGB images (PPM) for infer")
    parser.add_argument('--thermal', nargs='+', default=[], help="Thermal images (PGM) for infer")
    parser.add_argument('--verbose', action='store_true', help="Debug output on the console")
    return parser


def load_run_config(path: Optional[str]) -> RunConfig:
    if path:
        return RunConfig.load(path)
    if config.default_run_config.is_file():
        return RunConfig.load(str(config.default_run_config))
    logger.debug("No default config file; using built-in defaults")
    return RunConfig()


def _progress(total: int, desc: str, key: str) -> tuple:
    """A tqdm bar and a progress callback advancing it to ``data[key]``."""
    bar = tqdm(total=total, desc=desc, unit=key, leave=False)

    def callback(data: Dict) -> None:
        bar.update(data[key] - bar.n)
        if 'loss' in data:
            bar.set_postfix(loss=f"{data['loss']:.4f}")
    return bar, callback


def run(args: argparse.Namespace) -> int:
    cfg = commands.apply_seed(load_run_config(args.config), args.seed)
    if args.train_mode:
        cfg.train.train_mode = args.mode
    commands.ensure_valid(cfg)
    logger.info(f"{config.APP_NAME} v{config.APP_VERSION}: {args.command}")

    if args.command == "synth":
        bar, cb = _progress(cfg.io.num_frames, "synth", "frame")
        with bar:
            counts = commands.cmd_synth(cfg, args.out or args.dataset, progress_callback=cb)
        print(" ".join(f"{k}={v}" for k, v in counts.items()))

    elif args.command == "train":
        bar, cb = _progress(cfg.train.steps, "train", "step")
        with bar:
            history = commands.cmd_train(cfg, args.checkpoint, args.dataset, progress_callback=cb)
        if history:
            print(f"final_loss={history[-1].loss:.6f} steps={len(history)}")

    elif args.command == "eval":
        report = commands.cmd_eval(cfg, args.checkpoint, args.dataset, mode=args.mode,
                                   split=args.split, out_dir=args.out)
        print(report.to_text(), end="")

    elif args.command == "infer":
        if not args.rgb or len(args.rgb) != len(args.thermal):
            raise ConfigError("infer needs matching --rgb and --thermal image lists")
        if not args.out:
            raise ConfigError("infer needs --out <detections file>")
        commands.cmd_infer(cfg, args.checkpoint, list(zip(args.rgb, args.thermal)), args.out, mode=args.mode)

    elif args.command == "gradcheck":
        rows = commands.cmd_gradcheck(seed=cfg.train.seed)
        print(format_table(rows), end="")
        if not all(r.passed for r in rows):
            return EXIT_CHECK

    elif args.command == "confcal":
        bar, cb = _progress(cfg.train.confidence_epochs, "confcal", "epoch")
        with bar:
            result = commands.cmd_confcal(cfg, args.checkpoint, args.dataset, out_dir=args.out,
                                          progress_callback=cb)
        print(result.bins.to_table(), end="")

    elif args.command == "ablate":
        runs = len(commands.ablation_grid(cfg))
        bar, cb = _progress(runs, "ablate", "run")
        with bar:
            commands.cmd_ablate(cfg, args.dataset, out_dir=args.out, progress_callback=cb)

    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.verbose:
        set_console_level(logging.DEBUG)
    try:
        code = run(args)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        logger.debug("Traceback", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
    logger.info(f"{args.command} exited with code {code}")
    return code


if __name__ == '__main__':
    sys.exit(main())
