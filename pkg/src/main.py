import argparse
import logging
import os
import sys
from typing import Literal, Optional, Sequence

from commands import EXIT_USAGE, Commands, resolve_config
from errors import UsageError
from stores.memory_store import MemoryStore
from stores.sqlite_store import SqliteStore
from stores.store import RunStore

type StoreChoice = Literal["memory", "sqlite"]


def _open_store(store: StoreChoice, save_file: Optional[os.PathLike]) -> RunStore:
    match store:
        case "memory":
            return MemoryStore()
        case "sqlite":
            return SqliteStore(save_file)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(format='%(asctime)s [%(levelname)s] (%(name)s) - %(message)s',
                        level=logging.DEBUG if args.debug else logging.INFO)
    try:
        config = resolve_config(args.config, args.seed)
    except UsageError as e:
        logging.getLogger(__name__).error("%s", e)
        return EXIT_USAGE
    if args.threads < 1:
        logging.getLogger(__name__).error("--threads must be at least 1")
        return EXIT_USAGE
    store = _open_store(args.store, args.save_file)
    try:
        return Commands(config, store, args.threads).run(args)
    finally:
        store.close()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--debug", action="store_true", help="run with debug logging")
    common.add_argument("--threads", type=int, default=1, help="worker threads for calibration and evaluation")
    common.add_argument("--config", type=str, help="path to a run config JSON")
    common.add_argument("--seed", type=int, help="overrides the config seed (RCD_SEED overrides both)")
    common.add_argument("-s", "--store", type=str, choices=["memory", "sqlite"], default="memory")
    common.add_argument("-f", "--save-file", type=str, help="path to sqlite file")

    parser = argparse.ArgumentParser(prog="rcd", description="Range-conditioned dilated convolutions on LiDAR "
                                                             "range images")
    commands = parser.add_subparsers(dest="command", required=True)

    convert = commands.add_parser("convert", parents=[common], help="point cloud to range image")
    convert.add_argument("--cloud", required=True, help="float32 (x, y, z, intensity) point records")
    convert.add_argument("--calib", required=True, help="calibration JSON, or 'auto' to run Hough calibration")
    convert.add_argument("--out", required=True, help="range image output path")
    convert.add_argument("--lasers", type=int, default=64, help="number of lasers for --calib auto")
    convert.add_argument("--azimuth", type=int, help="azimuth steps (image width)")

    calibrate = commands.add_parser("calibrate", parents=[common], help="Hough calibration of a point cloud")
    calibrate.add_argument("--cloud", required=True)
    calibrate.add_argument("--lasers", type=int, default=64)
    calibrate.add_argument("--azimuth", type=int)
    calibrate.add_argument("--out", required=True, help="calibration JSON output path")

    gradcheck = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gradcheck.add_argument("--size", default="4x8", help="HxW of the random inputs")
    gradcheck.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    train = commands.add_parser("train-toy", parents=[common], help="train the two-stage detector on generated "
                                                                     "scenes")
    train.add_argument("--out", required=True, help="checkpoint directory")
    train.add_argument("--iterations", type=int)
    train.add_argument("--batch-size", type=int)

    evaluate = commands.add_parser("eval", parents=[common], help="bucketed AP/APH of detections against ground truth")
    evaluate.add_argument("--detections", required=True, help="detections JSONL")
    evaluate.add_argument("--gt", required=True, help="ground truth JSONL")
    evaluate.add_argument("--iou", type=float, help="IoU threshold of a true positive")
    evaluate.add_argument("--mode", choices=["3d", "bev"])
    evaluate.add_argument("--interpolation", choices=["all", "r11", "r40"])
    evaluate.add_argument("--run", help="attach the evaluation to a stored training run: its id or 'latest'")

    flops = commands.add_parser("flops", parents=[common], help="per-pixel FLOPs of an RCD block and a dense conv")
    flops.add_argument("--c-in", type=int, default=64)
    flops.add_argument("--c-out", type=int, default=64)
    flops.add_argument("--kernel", type=int, default=7)

    viz = commands.add_parser("viz-pattern", parents=[common], help="sample locations of chosen pixels")
    viz.add_argument("--image", required=True, help="range image file")
    viz.add_argument("--pixels", required=True, help="pixels as 'row,col;row,col'")
    viz.add_argument("--checkpoint", help="checkpoint directory holding a learned pattern")
    viz.add_argument("--out-csv", required=True)
    viz.add_argument("--out-pgm")
    return parser


if __name__ == "__main__":
    sys.exit(main())
