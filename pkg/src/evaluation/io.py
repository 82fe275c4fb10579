import json
import os
from pathlib import Path
from typing import Iterable, Union

from errors import FormatError, RcdError, UsageError
from models.box import Box7
from models.detection import Detection, GroundTruth


def _records(path: Union[str, os.PathLike]) -> Iterable[tuple[int, dict]]:
    """(byte offset, object) of every non-blank line"""
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    offset = 0
    for line in payload.splitlines(keepends=True):
        if line.strip():
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}: invalid JSON line: {e.msg}", offset) from None
            if not isinstance(record, dict):
                raise FormatError(f"{path}: each line must hold a JSON object", offset)
            yield offset, record
        offset += len(line)


def _box(record: dict, path, offset: int) -> Box7:
    try:
        return Box7.from_array(record["box"])
    except (KeyError, TypeError, ValueError, RcdError) as e:
        raise FormatError(f"{path}: bad box: {e}", offset) from None


def read_detections(path: Union[str, os.PathLike]) -> list[Detection]:
    detections = []
    for offset, record in _records(path):
        try:
            detections.append(Detection(str(record["frame"]), _box(record, path, offset), float(record["score"])))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: detection needs frame, box and score: {e}", offset) from None
    return detections


def read_ground_truth(path: Union[str, os.PathLike]) -> list[GroundTruth]:
    truths = []
    for offset, record in _records(path):
        try:
            truths.append(GroundTruth(str(record["frame"]), _box(record, path, offset), record.get("difficulty")))
        except KeyError as e:
            raise FormatError(f"{path}: ground truth needs frame and box: {e}", offset) from None
    return truths


def _box_list(box: Box7) -> list[float]:
    return [float(v) for v in box.as_array()]


def write_detections(path: Union[str, os.PathLike], detections: Iterable[Detection]):
    with open(path, "w", encoding="utf-8") as f:
        for det in detections:
            f.write(json.dumps({"frame": det.frame, "box": _box_list(det.box), "score": det.score}) + "\n")


def write_ground_truth(path: Union[str, os.PathLike], truths: Iterable[GroundTruth]):
    with open(path, "w", encoding="utf-8") as f:
        for gt in truths:
            f.write(json.dumps({"frame": gt.frame, "box": _box_list(gt.box), "difficulty": gt.difficulty}) + "\n")
