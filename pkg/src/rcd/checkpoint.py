import json
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

from errors import FormatError, UsageError
from literals import MANIFEST_FILE, PARAMS_DIR
from numerics.tensor import Param

CHECKPOINT_FORMAT = 1
BLOB_SUFFIX = ".f4"


def save_params(directory: Union[str, os.PathLike], params: Mapping[str, Param],
                extra: Mapping[str, Any] = None) -> Path:
    """Writes one little-endian float32 blob per parameter and a manifest of their shapes, in sorted name order"""
    directory = Path(directory)
    blob_dir = directory / PARAMS_DIR
    blob_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(params):
        value = params[name].value
        file_name = f"{name}{BLOB_SUFFIX}"
        (blob_dir / file_name).write_bytes(np.ascontiguousarray(value, dtype="<f4").tobytes())
        entries[name] = {"shape": list(value.shape), "file": f"{PARAMS_DIR}/{file_name}"}
    manifest = {"format": CHECKPOINT_FORMAT, "params": entries, **(extra or {})}
    manifest_path = directory / MANIFEST_FILE
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logging.getLogger(__name__).info("saved %s parameters to %s", len(entries), directory)
    return manifest_path


def read_manifest(directory: Union[str, os.PathLike]) -> dict[str, Any]:
    manifest_path = Path(directory) / MANIFEST_FILE
    if not manifest_path.is_file():
        raise UsageError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: invalid JSON: {e.msg}", e.pos) from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{manifest_path}: unsupported checkpoint format {manifest.get('format')}")
    return manifest


def load_arrays(directory: Union[str, os.PathLike]) -> dict[str, np.ndarray]:
    directory = Path(directory)
    arrays = {}
    for name, entry in read_manifest(directory)["params"].items():
        shape = tuple(entry["shape"])
        blob_path = directory / entry["file"]
        if not blob_path.is_file():
            raise UsageError(f"checkpoint blob missing: {blob_path}")
        payload = blob_path.read_bytes()
        expected = 4 * int(np.prod(shape, dtype=np.int64))
        if len(payload) != expected:
            raise FormatError(f"{blob_path}: expected {expected} bytes for shape {shape}", min(len(payload), expected))
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return arrays


def load_params(directory: Union[str, os.PathLike], params: Mapping[str, Param]):
    """Overwrites `params` in place with the checkpoint values"""
    arrays = load_arrays(directory)
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise FormatError(f"checkpoint at {directory} lacks parameters: {', '.join(missing)}")
    for name, param in params.items():
        if arrays[name].shape != param.shape:
            raise FormatError(f"checkpoint parameter {name} has shape {arrays[name].shape}, expected {param.shape}")
        param.value[...] = arrays[name]
