import argparse
import dataclasses
import logging
import os
from collections.abc import Callable
from functools import wraps
from pathlib import Path
from typing import Any, Optional

from detector.trainer import train_toy
from errors import ConfigError, RcdError, UsageError
from evaluation.io import read_detections, read_ground_truth
from evaluation.report import bucketed_report, format_report
from literals import CHANNELS, CONFIG_FILE, SEED_ENV_VAR
from models import RunId
from models.config import RunConfig
from models.range_image import AngularResolution
from rangeimage.calibration import hough_calibrate
from rangeimage.io import read_calibration, read_point_cloud, read_range_image, write_calibration, write_range_image
from rangeimage.projection import build_range_image
from rcd.block import RCDBlock
from rcd.checkpoint import load_arrays
from rcd.flops import flop_count_for
from rcd.viz import footprint_rows, range_overlay, write_pgm, write_samples_csv
from stores.store import RunStore
from utils import parse_pixels, parse_size, rng_for
from verification import run_suite

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CALIBRATION_SUFFIX = ".calib.json"
# checkpoint parameters that fix the stem's sampling footprint
STEM_PATTERN = "rpn.stem.pattern"
STEM_LOG_LAMBDA = "rpn.stem.log_lambda"


def exit_code(callback: Callable[[Any, argparse.Namespace], int]):
    """Maps the error hierarchy onto the process exit codes, logging the failure first"""
    @wraps(callback)
    def wrapper(self: 'Commands', args: argparse.Namespace) -> int:
        logger = logging.getLogger(Commands.__name__)
        try:
            return callback(self, args)
        except UsageError as e:
            logger.error("%s: %s", args.command, e, exc_info=logger.isEnabledFor(logging.DEBUG))
            return EXIT_USAGE
        except FileNotFoundError as e:
            logger.error("%s: %s", args.command, e, exc_info=logger.isEnabledFor(logging.DEBUG))
            return EXIT_USAGE
        except (RcdError, OSError) as e:
            logger.error("%s failed: %s", args.command, e, exc_info=True)
            return EXIT_FAILURE

    return wrapper


class Commands:
    def __init__(self, config: RunConfig, store: RunStore, threads: int = 1):
        self.__config = config
        self.__store = store
        self.__threads = threads
        self.__logger = logging.getLogger(self.__class__.__name__)

    @property
    def config(self) -> RunConfig:
        return self.__config

    def run(self, args: argparse.Namespace) -> int:
        match args.command:
            case "convert":
                return self.convert(args)
            case "calibrate":
                return self.calibrate(args)
            case "gradcheck":
                return self.gradcheck(args)
            case "train-toy":
                return self.train_toy(args)
            case "eval":
                return self.eval(args)
            case "flops":
                return self.flops(args)
            case "viz-pattern":
                return self.viz_pattern(args)
        raise UsageError(f"unknown command {args.command}")

    def __calibrate(self, cloud_path: str, n_lasers: int, azimuth: Optional[int]):
        calibration = self.__config.calibration
        if azimuth is not None:
            calibration = dataclasses.replace(calibration, azimuth_steps=azimuth)
        cloud = read_point_cloud(cloud_path)
        calib = hough_calibrate(cloud, n_lasers, calibration.height_bins, calibration.incl_bins, calibration,
                                self.__threads)
        self.__logger.info("calibrated %s lasers from %s points", calib.n_lasers, len(cloud))
        return cloud, calib

    @exit_code
    def convert(self, args: argparse.Namespace) -> int:
        out = Path(args.out)
        if args.calib == "auto":
            cloud, calib = self.__calibrate(args.cloud, args.lasers, args.azimuth)
            calib_path = out.with_suffix(CALIBRATION_SUFFIX)
            write_calibration(calib_path, calib)
            self.__logger.info("wrote calibration to %s", calib_path)
        else:
            cloud = read_point_cloud(args.cloud)
            calib = read_calibration(args.calib)
            if args.azimuth is not None:
                calib = dataclasses.replace(calib, azimuth_steps=args.azimuth)
        image = build_range_image(cloud, calib)
        write_range_image(out, image)
        self.__logger.info("wrote %sx%s range image with %s valid pixels to %s", image.height, image.width,
                           int(image.valid.sum()), out)
        return EXIT_OK

    @exit_code
    def calibrate(self, args: argparse.Namespace) -> int:
        _, calib = self.__calibrate(args.cloud, args.lasers, args.azimuth)
        write_calibration(args.out, calib)
        for k, (inclination, height) in enumerate(zip(calib.inclinations, calib.heights)):
            print(f"{k:3d}  inclination {inclination: .6f} rad  height {height: .6f} m")
        return EXIT_OK

    @exit_code
    def gradcheck(self, args: argparse.Namespace) -> int:
        size = parse_size(args.size)
        reports = run_suite(self.__config.seed, size, corrupt=args.corrupt_gradient)
        for report in reports:
            print(f"{report.name:<20} {report.max_rel_error:.3e}  tol {report.tol:.0e}  "
                  f"{'ok' if report.passed else 'FAILED (' + str(report.worst_group()) + ')'}")
        failed = [report.name for report in reports if not report.passed]
        if failed:
            self.__logger.error("gradient check failed for %s", ", ".join(failed))
            return EXIT_FAILURE
        return EXIT_OK

    @exit_code
    def train_toy(self, args: argparse.Namespace) -> int:
        config = self.__config
        overrides = {key: value for key, value in (("iterations", args.iterations), ("batch_size", args.batch_size))
                     if value is not None}
        if overrides:
            config = dataclasses.replace(config, trainer=dataclasses.replace(config.trainer, **overrides))
        result = train_toy(config, config.seed, args.out, self.__store, self.__threads)
        summary = result.lambda_summary
        print(f"run {result.run_id}: checkpoint {result.checkpoint}")
        print(f"lambda initial {summary.initial:.4f} max {summary.maximum:.4f} final {summary.final:.4f}")
        print(format_report(result.evaluation))
        return EXIT_OK

    def __run_of(self, reference: Optional[str]) -> Optional[RunId]:
        """Run id named by `--run`: an id, `latest`, or None when the evaluation stands alone"""
        if reference is None:
            return None
        if reference == "latest":
            run = self.__store.latest_run()
            if run is None:
                raise UsageError("--run latest: the store holds no runs")
            return run.run_id
        try:
            run = self.__store.get_run(int(reference))
        except ValueError:
            raise UsageError(f"--run expects a run id or 'latest', got {reference!r}") from None
        if run is None:
            raise UsageError(f"--run {reference}: no such run in the store")
        return run.run_id

    @exit_code
    def eval(self, args: argparse.Namespace) -> int:
        cfg = self.__config.eval
        overrides = {key: value for key, value in (("iou_threshold", args.iou), ("mode", args.mode),
                                                   ("interpolation", args.interpolation)) if value is not None}
        cfg = dataclasses.replace(cfg, **overrides)
        run_id = self.__run_of(args.run)
        rows = bucketed_report(read_detections(args.detections), read_ground_truth(args.gt), cfg, self.__threads)
        evaluation_id = self.__store.save_evaluation(run_id, os.path.basename(args.detections), rows)
        self.__logger.debug("recorded evaluation %s", evaluation_id)
        print(format_report(rows))
        return EXIT_OK

    @exit_code
    def flops(self, args: argparse.Namespace) -> int:
        report = flop_count_for(self.__config.rcd, args.c_in, args.c_out, args.kernel)
        for stage, count in report.rows():
            print(f"{stage:<16} {count:>10,}")
        print(f"{'ratio':<16} {report.ratio:>10.2f}")
        return EXIT_OK

    def __stem_block(self, image_res: AngularResolution, checkpoint: Optional[str]) -> RCDBlock:
        config = self.__config
        if checkpoint is not None:
            config = RunConfig.load(Path(checkpoint) / CONFIG_FILE)
        block = RCDBlock.initialize(len(CHANNELS), 1, config.rcd, image_res, rng_for(config.seed))
        if checkpoint is not None:
            arrays = load_arrays(checkpoint)
            block.rcd_params.pattern.value[...] = arrays[STEM_PATTERN]
            block.rcd_params.log_lambda.value[...] = arrays[STEM_LOG_LAMBDA]
        return block

    @exit_code
    def viz_pattern(self, args: argparse.Namespace) -> int:
        image = read_range_image(args.image)
        pixels = parse_pixels(args.pixels)
        outside = [pixel for pixel in pixels
                   if not (0 <= pixel[0] < image.height and 0 <= pixel[1] < image.width)]
        if outside:
            raise UsageError(f"pixels outside the {image.height}x{image.width} image: {outside}")
        block = self.__stem_block(AngularResolution.from_range_image(image), args.checkpoint)
        rows = footprint_rows(block.sample_locations(image), pixels)
        write_samples_csv(args.out_csv, rows)
        if args.out_pgm is not None:
            write_pgm(args.out_pgm, range_overlay(image, rows))
        self.__logger.info("wrote %s samples of %s pixels (lambda %.4f)", len(rows), len(pixels),
                           block.rcd_params.nominal_width)
        return EXIT_OK


def seed_override(environ: Optional[dict[str, str]] = None) -> Optional[int]:
    value = (os.environ if environ is None else environ).get(SEED_ENV_VAR)
    if value is None or value.strip() == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{value}'") from None


def resolve_config(config_path: Optional[str], seed: Optional[int],
                   environ: Optional[dict[str, str]] = None) -> RunConfig:
    """Defaults, then the --config file, then CLI flags, then the seed environment variable"""
    config = RunConfig() if config_path is None else RunConfig.load(config_path)
    if seed is not None:
        config = config.with_seed(seed)
    env_seed = seed_override(environ)
    if env_seed is not None:
        config = config.with_seed(env_seed)
    return config
