import csv
import sqlite3
import struct
from pathlib import Path

import numpy as np
import pytest

from commands import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, resolve_config, seed_override
from errors import ConfigError
from literals import SAMPLES_CSV_HEADER, SEED_ENV_VAR
from main import main
from models.range_image import LaserCalibration
from rangeimage.io import read_calibration, read_range_image, write_calibration, write_point_cloud, write_range_image
from rangeimage.projection import build_range_image
from rangeimage.synthetic import grid_cloud, laser_cloud, uniform_calibration
from stores.sqlite_store import SqliteStore

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


@pytest.fixture
def range_image_file(tmp_path) -> Path:
    calib = uniform_calibration(8, 64, 0.05, -0.3)
    path = tmp_path / "scene.rimg"
    write_range_image(path, build_range_image(grid_cloud(calib), calib))
    return path


def test_flops(capsys):
    assert main(["flops", "--c-in", "64", "--c-out", "64"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == ["squeeze", "sampler", "passthrough", "final", "norm_act",
                                                   "rcd_total", "standard_7x7", "ratio"]
    assert lines[6].split()[1] == f"{7 * 7 * 64 * 64 * 2:,}"


def test_eval_prints_the_golden_table(capsys):
    code = main(["eval", "--detections", str(FIXTURES / "golden_detections.jsonl"),
                 "--gt", str(FIXTURES / "golden_gt.jsonl"), "--threads", "2"])
    assert code == EXIT_OK
    assert capsys.readouterr().out == (FIXTURES / "golden_report.txt").read_text(encoding="utf-8")


@pytest.mark.parametrize("threads", [2, 4])
def test_eval_threads_match_a_single_thread(capsys, threads):
    args = ["eval", "--detections", str(FIXTURES / "golden_detections.jsonl"),
            "--gt", str(FIXTURES / "golden_gt.jsonl")]
    assert main(args + ["--threads", "1"]) == EXIT_OK
    single = capsys.readouterr().out
    assert main(args + ["--threads", str(threads)]) == EXIT_OK
    assert capsys.readouterr().out == single


def test_eval_records_to_sqlite(tmp_path, capsys):
    db = tmp_path / "runs.db"
    code = main(["eval", "--detections", str(FIXTURES / "golden_detections.jsonl"),
                 "--gt", str(FIXTURES / "golden_gt.jsonl"), "--mode", "bev", "-s", "sqlite", "-f", str(db)])
    assert code == EXIT_OK
    store = SqliteStore(db)
    try:
        rows = store.get_evaluation(1)
    finally:
        store.close()
    assert [row.bucket for row in rows] == ["[0,30)", "[30,50)", "[50,inf)", "all"]
    assert rows[-1].n_det == 6


def test_eval_attaches_to_a_stored_run(tmp_path):
    db = tmp_path / "runs.db"
    store = SqliteStore(db)
    try:
        store.create_run(1, "{}")
        latest = store.create_run(2, "{}")
    finally:
        store.close()
    args = ["eval", "--detections", str(FIXTURES / "golden_detections.jsonl"),
            "--gt", str(FIXTURES / "golden_gt.jsonl"), "-s", "sqlite", "-f", str(db)]
    assert main(args + ["--run", "latest"]) == EXIT_OK
    assert main(args + ["--run", "1"]) == EXIT_OK
    assert main(args + ["--run", "99"]) == EXIT_USAGE
    assert main(args + ["--run", "newest"]) == EXIT_USAGE
    connection = sqlite3.connect(db)
    try:
        run_ids = [row[0] for row in connection.execute("SELECT run_id FROM evaluation ORDER BY evaluation_id")]
    finally:
        connection.close()
    assert run_ids == [latest, 1]


def test_eval_latest_run_needs_a_run():
    assert main(["eval", "--detections", str(FIXTURES / "golden_detections.jsonl"),
                 "--gt", str(FIXTURES / "golden_gt.jsonl"), "--run", "latest"]) == EXIT_USAGE


def test_eval_errors(tmp_path):
    assert main(["eval", "--detections", str(tmp_path / "missing.jsonl"),
                 "--gt", str(FIXTURES / "golden_gt.jsonl")]) == EXIT_USAGE
    broken = tmp_path / "broken.jsonl"
    broken.write_text("{oops\n", encoding="utf-8")
    assert main(["eval", "--detections", str(broken), "--gt", str(FIXTURES / "golden_gt.jsonl")]) == EXIT_FAILURE


@pytest.mark.parametrize("seed", range(1, 11))
def test_gradcheck_passes(seed, capsys):
    assert main(["gradcheck", "--seed", str(seed), "--size", "4x8"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.endswith("ok") for line in lines)


def test_gradcheck_single_pixel():
    assert main(["gradcheck", "--seed", "1", "--size", "1x1"]) == EXIT_OK


def test_corrupted_gradient_is_caught(capsys):
    assert main(["gradcheck", "--seed", "1", "--corrupt-gradient"]) == EXIT_FAILURE
    assert "FAILED" in capsys.readouterr().out


def test_gradcheck_bad_size():
    assert main(["gradcheck", "--size", "0x4"]) == EXIT_USAGE
    assert main(["gradcheck", "--size", "four"]) == EXIT_USAGE


def test_convert_single_point(tmp_path):
    cloud = tmp_path / "cloud.bin"
    cloud.write_bytes(struct.pack("<4f", 3.0, 4.0, 0.0, 0.5))
    calib = tmp_path / "calib.json"
    write_calibration(calib, LaserCalibration(np.array([0.0]), np.array([0.0]), 2048))
    out = tmp_path / "image.rimg"
    assert main(["convert", "--cloud", str(cloud), "--calib", str(calib), "--out", str(out)]) == EXIT_OK
    image = read_range_image(out)
    assert (image.height, image.width) == (1, 2048)
    assert image.valid.sum() == 1
    assert image.ranges[image.valid][0] == pytest.approx(5.0)


def test_convert_errors(tmp_path):
    calib = tmp_path / "calib.json"
    write_calibration(calib, LaserCalibration(np.array([0.0]), np.array([0.0]), 16))
    out = str(tmp_path / "image.rimg")
    assert main(["convert", "--cloud", str(tmp_path / "none.bin"), "--calib", str(calib), "--out", out]) == EXIT_USAGE
    truncated = tmp_path / "cloud.bin"
    truncated.write_bytes(b"\x00" * 20)
    assert main(["convert", "--cloud", str(truncated), "--calib", str(calib), "--out", out]) == EXIT_FAILURE


def test_calibrate_and_convert_auto(tmp_path, rng):
    truth = uniform_calibration(4, 512, 0.1, -0.2, 0.3, 0.0)
    cloud = tmp_path / "cloud.bin"
    write_point_cloud(cloud, laser_cloud(truth, 8000, rng))
    calib_out = tmp_path / "calib.json"
    assert main(["calibrate", "--cloud", str(cloud), "--lasers", "4", "--azimuth", "512",
                 "--out", str(calib_out), "--threads", "2"]) == EXIT_OK
    recovered = read_calibration(calib_out)
    assert recovered.n_lasers == 4
    assert recovered.azimuth_steps == 512
    np.testing.assert_allclose(recovered.inclinations, truth.inclinations, atol=5e-3)

    single_out = tmp_path / "single.json"
    assert main(["calibrate", "--cloud", str(cloud), "--lasers", "4", "--azimuth", "512",
                 "--out", str(single_out), "--threads", "1"]) == EXIT_OK
    assert single_out.read_bytes() == calib_out.read_bytes()

    image_out = tmp_path / "auto.rimg"
    assert main(["convert", "--cloud", str(cloud), "--calib", "auto", "--lasers", "4", "--azimuth", "512",
                 "--out", str(image_out)]) == EXIT_OK
    assert read_range_image(image_out).height == 4
    assert (tmp_path / "auto.calib.json").is_file()


def test_viz_pattern(tmp_path, range_image_file):
    out_csv, out_pgm = tmp_path / "samples.csv", tmp_path / "overlay.pgm"
    code = main(["viz-pattern", "--image", str(range_image_file), "--pixels", "0,0; 7,63",
                 "--out-csv", str(out_csv), "--out-pgm", str(out_pgm)])
    assert code == EXIT_OK
    with open(out_csv, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == SAMPLES_CSV_HEADER
    assert len(rows) == 1 + 2 * 64
    assert {(row[0], row[1]) for row in rows[1:]} == {("0", "0"), ("7", "63")}
    header = b"P5\n64 8\n255\n"
    payload = out_pgm.read_bytes()
    assert payload.startswith(header)
    assert len(payload) == len(header) + 8 * 64


def test_viz_pattern_errors(tmp_path, range_image_file):
    out_csv = str(tmp_path / "samples.csv")
    assert main(["viz-pattern", "--image", str(range_image_file), "--pixels", "8,0",
                 "--out-csv", out_csv]) == EXIT_USAGE
    assert main(["viz-pattern", "--image", str(range_image_file), "--pixels", "a,b",
                 "--out-csv", out_csv]) == EXIT_USAGE
    assert main(["viz-pattern", "--image", str(range_image_file), "--pixels", "0,0", "--out-csv", out_csv,
                 "--checkpoint", str(tmp_path / "nowhere")]) == EXIT_USAGE


def test_seed_environment_variable(monkeypatch):
    assert resolve_config(None, 3, {}).seed == 3
    assert resolve_config(None, 3, {SEED_ENV_VAR: "9"}).seed == 9
    assert resolve_config(None, None, {SEED_ENV_VAR: " "}).seed == 0
    assert seed_override({}) is None
    with pytest.raises(ConfigError):
        seed_override({SEED_ENV_VAR: "nine"})
    monkeypatch.setenv(SEED_ENV_VAR, "nine")
    assert main(["flops"]) == EXIT_USAGE


def test_bad_arguments(tmp_path):
    assert main(["flops", "--threads", "0"]) == EXIT_USAGE
    assert main(["flops", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["unknown"])
