import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from detector.optim import Adam, global_norm
from detector.pipeline import TwoStageDetector
from detector.scenes import ScenePrefetcher, generate_scene
from errors import NonFiniteError, TrainingDivergedError
from evaluation.io import write_detections, write_ground_truth
from evaluation.report import bucketed_report, format_report
from literals import EVAL_DETECTIONS_FILE, EVAL_GT_FILE, PATTERN_FILE, TRACE_CSV_HEADER, TRACE_FILE
from losses import LossParts
from models import RunId
from models.box import Box7
from models.config import RunConfig
from models.detection import Detection, GroundTruth
from models.run import BucketRow, TraceRow
from rcd.pattern import pattern_drift
from rcd.viz import write_pattern_csv
from stores.memory_store import MemoryStore
from stores.store import RunStore
from utils import rng_for

# held-out scenes are drawn from indices training never reaches
HELD_OUT_START = 1_000_000_000
# stream key separating proposal sampling from scene generation
PROPOSAL_STREAM = 1


@dataclass(frozen=True)
class LambdaSummary:
    initial: float
    maximum: float
    final: float


def lambda_summary(initial: float, trace: list[TraceRow]) -> LambdaSummary:
    values = [row.lam for row in trace]
    return LambdaSummary(initial, max([initial, *values]), values[-1] if values else initial)


def write_trace_csv(path: Union[str, os.PathLike], rows: list[TraceRow]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv_row())


@dataclass(frozen=True)
class TrainingResult:
    run_id: RunId
    checkpoint: Path
    trace: list[TraceRow]
    lambda_summary: LambdaSummary
    evaluation: list[BucketRow]


class ToyTrainer:
    """Joint RPN + RCNN training on generated scenes: Adam with cosine decay, gradients summed over a batch of
    scenes and averaged before each step, periodic checkpoints and a held-out evaluation at the end"""

    def __init__(self, config: RunConfig, out_dir: Union[str, os.PathLike], store: Optional[RunStore] = None,
                 threads: int = 1):
        self.config = config
        self.out_dir = Path(out_dir)
        self.store = store if store is not None else MemoryStore()
        self.threads = threads
        self.detector = TwoStageDetector(config)
        self.__logger = logging.getLogger(self.__class__.__name__)
        self.__last_checkpoint: Optional[Path] = None

    @property
    def stem(self):
        return self.detector.rpn.stem.rcd_params

    def __checkpoint(self, iteration: int):
        self.__last_checkpoint = self.out_dir
        self.detector.save(self.out_dir, {"iteration": iteration})
        self.__logger.info("checkpoint at iteration %s written to %s", iteration, self.out_dir)

    def __step(self, optimizer: Adam, prefetcher: ScenePrefetcher, iteration: int) -> LossParts:
        batch = self.config.trainer.batch_size
        optimizer.zero_grad()
        parts = LossParts()
        try:
            for _ in range(batch):
                scene = prefetcher.get()
                step = self.detector.train_step(scene.image, scene.boxes,
                                                rng_for(self.config.seed, scene.index, PROPOSAL_STREAM))
                parts = parts + step.losses
                if step.empty:
                    self.__logger.debug("scene %s: empty loss terms %s", scene.index, ", ".join(step.empty))
        except NonFiniteError as e:
            raise TrainingDivergedError(iteration, self.__checkpoint_path()) from e
        parts = parts.scaled(1.0 / batch)
        if not math.isfinite(parts.total) or not math.isfinite(global_norm(optimizer.params)):
            raise TrainingDivergedError(iteration, self.__checkpoint_path())
        optimizer.step(scale=1.0 / batch)
        return parts

    def __checkpoint_path(self) -> Optional[str]:
        return None if self.__last_checkpoint is None else str(self.__last_checkpoint)

    def train(self) -> TrainingResult:
        trainer = self.config.trainer
        self.out_dir.mkdir(parents=True, exist_ok=True)
        initial_pattern = self.stem.pattern.value.copy()
        initial_lambda = self.stem.nominal_width
        optimizer = Adam(self.detector.params(), trainer)
        run_id = self.store.create_run(self.config.seed, self.config.dumps())
        self.__logger.info("run %s: %s iterations, batch %s, seed %s", run_id, trainer.iterations,
                           trainer.batch_size, self.config.seed)

        with ScenePrefetcher(self.config, self.config.seed, depth=trainer.prefetch) as prefetcher:
            for iteration in range(1, trainer.iterations + 1):
                parts = self.__step(optimizer, prefetcher, iteration)
                row = TraceRow(iteration, *parts.as_row(), self.stem.nominal_width, self.stem.gate_scale)
                self.store.log_iteration(run_id, row)
                if iteration % trainer.log_every == 0 or iteration == 1:
                    self.__logger.info("iteration %s: loss %.5f (L_f %.4f, L_b %.4f, L_cls %.4f, L_reg %.4f), "
                                       "lambda %.4f, gamma %.4f, lr %.2e", iteration, parts.total, *parts.as_row(),
                                       row.lam, row.gamma, optimizer.learning_rate)
                if iteration % trainer.checkpoint_every == 0 or iteration == trainer.iterations:
                    self.__checkpoint(iteration)
        if trainer.iterations == 0:
            self.__checkpoint(0)

        trace = self.store.get_trace(run_id)
        write_trace_csv(self.out_dir / TRACE_FILE, trace)
        learned_pattern = self.stem.pattern.value
        write_pattern_csv(self.out_dir / PATTERN_FILE, initial_pattern, learned_pattern)
        summary = lambda_summary(initial_lambda, trace)
        self.__logger.info("lambda: initial %.4f, max %.4f, final %.4f", summary.initial, summary.maximum,
                           summary.final)
        drift = pattern_drift(initial_pattern, learned_pattern).summary()
        self.__logger.info("pattern drift: mean displacement %.4f, inner radial change %.4f, outer %.4f",
                           drift["mean_displacement"], drift["inner_radial_change"], drift["outer_radial_change"])

        evaluation = self.evaluate_held_out(run_id)
        return TrainingResult(run_id, self.out_dir, trace, summary, evaluation)

    def evaluate_held_out(self, run_id: Optional[RunId] = None) -> list[BucketRow]:
        """Detects on generated scenes never used for training and scores them at BEV IoU 0.5"""
        detections: list[Detection] = []
        truths: list[GroundTruth] = []
        for k in range(self.config.trainer.eval_scenes):
            scene = generate_scene(self.config, self.config.seed, HELD_OUT_START + k)
            frame = str(k)
            detections.extend(self.detector.detect(scene.image, frame))
            truths.extend(GroundTruth(frame, Box7.from_array(box)) for box in scene.boxes)
        write_detections(self.out_dir / EVAL_DETECTIONS_FILE, detections)
        write_ground_truth(self.out_dir / EVAL_GT_FILE, truths)
        cfg = dataclasses.replace(self.config.eval, iou_threshold=0.5, mode="bev")
        rows = bucketed_report(detections, truths, cfg, self.threads)
        if run_id is not None:
            self.store.save_evaluation(run_id, "held-out", rows)
        self.__logger.info("held-out evaluation (BEV IoU 0.5):\n%s", format_report(rows))
        return rows


def train_toy(config: RunConfig, seed: int, out_dir: Union[str, os.PathLike], store: Optional[RunStore] = None,
              threads: int = 1) -> TrainingResult:
    return ToyTrainer(config.with_seed(seed), out_dir, store, threads).train()
