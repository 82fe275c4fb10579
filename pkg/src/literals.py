from bidict import frozenbidict

RANGE_IMAGE_MAGIC = b"RIMG"
RANGE_IMAGE_DTYPE_FLOAT32 = 0

"""
Fixed channel order of every range image, shared by the file format, the detector input and the viz output.
"""
CHANNELS = frozenbidict({
    "range": 0,
    "intensity": 1,
    "elongation": 2,
    "inclination": 3,
    "azimuth": 4,
    "x": 5,
    "y": 6,
    "z": 7,
})

POINT_RECORD_BYTES = 16

TRACE_CSV_HEADER = ("iteration", "L_f", "L_b", "L_cls", "L_reg", "lambda", "gamma")
PATTERN_CSV_HEADER = ("sample", "init_row", "init_col", "final_row", "final_col")
SAMPLES_CSV_HEADER = ("pixel_row", "pixel_col", "sample", "row", "col")

CONFIG_FILE = "config.json"
PARAMS_DIR = "params"
MANIFEST_FILE = "manifest.json"
TRACE_FILE = "trace.csv"
PATTERN_FILE = "pattern.csv"
EVAL_DETECTIONS_FILE = "eval_detections.jsonl"
EVAL_GT_FILE = "eval_gt.jsonl"

SEED_ENV_VAR = "RCD_SEED"
