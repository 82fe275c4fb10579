import dataclasses
import math

import numpy as np
import pytest

from boxgeom.frames import to_canonical
from boxgeom.iou import bev_iou_matrix
from detector.layers import Bottleneck, Conv3d, MaxPoolH, UpsampleH, max_pool3d, max_pool3d_vjp, max_pool_ranges
from detector.optim import Adam, clip_gradients, cosine_learning_rate
from detector.pipeline import TwoStageDetector
from detector.proposals import column_best, select_proposals_infer, select_proposals_train
from detector.rcnn import SEMANTIC_CHANNELS, decode_refinements, pool_proposals
from detector.scenes import ScenePrefetcher, cast_scene, generate_scene, ray_box_distance, scene_calibration
from detector.targets import build_rcnn_targets, build_rpn_targets
from detector.trainer import ToyTrainer, lambda_summary
from errors import DimensionError, UsageError
from literals import EVAL_DETECTIONS_FILE, EVAL_GT_FILE, MANIFEST_FILE, PATTERN_FILE, TRACE_CSV_HEADER, TRACE_FILE
from models.box import Box7
from models.config import RunConfig, TrainerConfig
from models.detection import Detection
from models.run import TraceRow
from numerics.gradcheck import grad_check
from numerics.tensor import FunctionOp, Param
from stores.memory_store import MemoryStore
from verification import composite_case


def small_config(seed: int = 0, backbone: str = "mini") -> RunConfig:
    base = RunConfig(seed=seed)
    return dataclasses.replace(
        base,
        rcd=dataclasses.replace(base.rcd, pattern_rows=2, pattern_cols=2, sample_channels=2),
        scene=dataclasses.replace(base.scene, height=8, width=32, max_objects=2, range_limits=(6.0, 12.0)),
        rpn=dataclasses.replace(base.rpn, backbone=backbone, stem_channels=4, stage_channels=4, embedding_channels=2,
                                train_positives=4, train_negatives=4, max_proposals=20, score_threshold=0.0),
        rcnn=dataclasses.replace(base.rcnn, grid=(2, 2, 2), conv_channels=2, chunk_size=3),
        trainer=dataclasses.replace(base.trainer, iterations=2, batch_size=1, eval_scenes=1, prefetch=1,
                                    log_every=1, checkpoint_every=1),
    )


def refinement_for(targets, heading_bins: int) -> np.ndarray:
    refine = np.zeros((len(targets.labels), 6 + 2 * heading_bins))
    rows = np.arange(len(refine))
    refine[:, 0:3] = targets.center
    refine[:, 3:6] = targets.log_dims
    refine[rows, 6 + targets.heading_bin] = 10.0
    refine[rows, 6 + heading_bins + targets.heading_bin] = targets.heading_res
    return refine


def test_scenes_are_deterministic():
    config = small_config()
    first, second = generate_scene(config, 7, 3), generate_scene(config, 7, 3)
    np.testing.assert_array_equal(first.boxes, second.boxes)
    np.testing.assert_array_equal(first.image.data, second.image.data)
    other = generate_scene(config, 7, 4)
    assert not np.array_equal(first.image.data, other.image.data)


def test_scene_objects():
    config = small_config()
    for index in range(5):
        scene = generate_scene(config, 1, index)
        assert config.scene.min_objects <= scene.n_objects <= config.scene.max_objects
        assert scene.labels == tuple("vehicle" for _ in range(scene.n_objects))
        distances = np.hypot(scene.boxes[:, 0], scene.boxes[:, 1])
        assert np.all((distances >= 6.0) & (distances <= 12.0))
        bottoms = scene.boxes[:, 2] - scene.boxes[:, 5] / 2.0
        np.testing.assert_allclose(bottoms, -config.scene.sensor_height, atol=1e-12)
        overlaps = bev_iou_matrix(scene.boxes, scene.boxes)
        np.testing.assert_allclose(overlaps, np.eye(scene.n_objects), atol=1e-12)
        assert (scene.image.height, scene.image.width) == (8, 32)


def test_ray_box_distance():
    box = Box7(10.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0)
    rays = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    distance = ray_box_distance(rays, box)
    assert distance[0] == pytest.approx(9.0)
    assert np.isinf(distance[1]) and np.isinf(distance[2])


def test_cast_scene_hits_the_ground():
    config = small_config()
    calib = scene_calibration(config.scene)
    cloud = cast_scene(np.zeros((0, 7)), calib, config.scene)
    assert len(cloud) > 0
    np.testing.assert_allclose(cloud.xyz[:, 2], -config.scene.sensor_height, atol=1e-9)
    assert np.all(np.linalg.norm(cloud.xyz, axis=1) < config.scene.max_range)


def test_prefetcher_matches_direct_generation():
    config = small_config()
    with ScenePrefetcher(config, 11, start=2, depth=2) as prefetcher:
        scenes = [prefetcher.get() for _ in range(3)]
    for offset, scene in enumerate(scenes):
        assert scene.index == 2 + offset
        np.testing.assert_array_equal(scene.boxes, generate_scene(config, 11, 2 + offset).boxes)
    unstarted = ScenePrefetcher(config, 11)
    assert unstarted.get().index == 0
    assert unstarted.get().index == 1
    unstarted.close()


@pytest.mark.parametrize("op, shape", [
    (MaxPoolH(2), (3, 8, 2)),
    (UpsampleH(2), (3, 4, 2)),
    (Bottleneck(3, 4, np.random.default_rng(0)), (2, 4, 3)),
    (Bottleneck(4, 4, np.random.default_rng(1)), (2, 4, 4)),
    (Conv3d(2, 3, np.random.default_rng(2)), (2, 2, 4, 2, 2)),
])
def test_layers_pass_gradient_check(rng, op, shape):
    report = grad_check(op, [rng.normal(size=shape)])
    assert report.passed, report


def test_max_pool3d_gradient(rng):
    op = FunctionOp(lambda x: max_pool3d(x)[0], lambda g, x: max_pool3d_vjp(g, max_pool3d(x)[1], x.shape),
                    "max_pool3d")
    report = grad_check(op, [rng.normal(size=(2, 4, 2, 2, 3))])
    assert report.passed, report
    pooled, _ = max_pool3d(np.arange(8.0).reshape(1, 2, 2, 2, 1))
    assert pooled.reshape(-1)[0] == 7.0
    with pytest.raises(DimensionError):
        max_pool3d(np.zeros((1, 3, 2, 2, 1)))


def test_conv3d_matches_direct_sum(rng):
    conv = Conv3d(2, 3, rng)
    conv.b.value[:] = rng.normal(size=3)
    x = rng.normal(size=(1, 3, 2, 3, 2))
    out = conv.apply(x)
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    w = conv.w.value.reshape(2, 3, 3, 3, 3)
    for i, j, k in [(0, 0, 0), (1, 1, 1), (2, 1, 2)]:
        window = padded[0, i:i + 3, j:j + 3, k:k + 3]
        expected = np.einsum("xyzc,cxyzo->o", window, w) + conv.b.value
        np.testing.assert_allclose(out[0, i, j, k], expected, atol=1e-12)


def test_layer_errors():
    with pytest.raises(DimensionError):
        MaxPoolH(3).forward(np.zeros((2, 8, 1)))
    with pytest.raises(UsageError):
        MaxPoolH(2).vjp(np.zeros((2, 4, 1)))
    with pytest.raises(DimensionError):
        Conv3d(2, 3, np.random.default_rng(0)).apply(np.zeros((1, 2, 2, 2, 3)))


def test_max_pool_ranges_keeps_farthest_valid_return():
    ranges = np.array([[5.0, 9.0, 3.0, 4.0]])
    valid = np.array([[True, False, False, False]])
    pooled, pooled_valid = max_pool_ranges(ranges, valid, 2)
    np.testing.assert_array_equal(pooled, [[5.0, 0.0]])
    np.testing.assert_array_equal(pooled_valid, [[True, False]])


def test_cosine_learning_rate():
    assert cosine_learning_rate(0.1, 0, 100) == pytest.approx(0.1)
    assert cosine_learning_rate(0.1, 50, 100) == pytest.approx(0.05)
    assert cosine_learning_rate(0.1, 100, 100) == pytest.approx(0.0, abs=1e-15)
    assert cosine_learning_rate(0.1, 5, 0) == 0.1


def test_clip_gradients():
    params = {"a": Param(np.zeros(2))}
    params["a"].grad[:] = [3.0, 4.0]
    assert clip_gradients(params, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(params["a"].grad, [0.6, 0.8])
    assert clip_gradients(params, 0.0) == pytest.approx(1.0)


def test_adam_descends_a_quadratic():
    param = Param(np.array([3.0]))
    optimizer = Adam({"x": param}, TrainerConfig(learning_rate=0.1, iterations=100, grad_clip=0.0))
    param.accumulate(2.0 * param.value)
    optimizer.step()
    assert param.value[0] == pytest.approx(2.9, abs=1e-6)
    for _ in range(99):
        optimizer.zero_grad()
        param.accumulate(2.0 * param.value)
        optimizer.step()
    assert abs(param.value[0]) < 1.0
    assert optimizer.t == 100


def test_column_best():
    scores = np.array([[0.1, 0.9], [0.5, 0.2], [0.7, 0.3], [0.1, 0.8]])
    valid = np.ones_like(scores, dtype=bool)
    rows, cols = column_best(scores, valid)
    assert list(rows) == [1, 0, 2, 3]
    assert list(cols) == [0, 1, 0, 1]
    valid[2:, 0] = False
    rows, cols = column_best(scores, valid)
    assert list(zip(rows, cols)) == [(1, 0), (0, 1), (3, 1)]


def test_training_proposals_respect_the_iou_split(rng):
    gt = np.array([[10.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0]])
    boxes = np.tile(np.array([30.0, 30.0, 0.0, 4.0, 2.0, 1.5, 0.0]), (4, 3, 1))
    boxes[0, 1] = gt[0]
    boxes[3, 2] = gt[0] + np.array([0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    scores = rng.uniform(size=(4, 3))
    scores[0, 1] = scores[3, 2] = 2.0
    config = small_config().rpn
    proposals = select_proposals_train(boxes, scores, np.ones((4, 3), dtype=bool), gt, rng, config)
    assert len(proposals) == config.train_positives + config.train_negatives
    assert np.all(proposals.iou[proposals.labels] >= config.proposal_iou)
    assert np.all(proposals.iou[~proposals.labels] < config.proposal_iou)
    assert proposals.labels.sum() == config.train_positives
    assert not proposals.missing_positives and not proposals.missing_negatives


def test_training_proposals_without_ground_truth(rng):
    boxes = np.tile(np.array([30.0, 30.0, 0.0, 4.0, 2.0, 1.5, 0.0]), (2, 3, 1))
    config = small_config().rpn
    proposals = select_proposals_train(boxes, rng.uniform(size=(2, 3)), np.ones((2, 3), dtype=bool),
                                       np.zeros((0, 7)), rng, config)
    assert proposals.missing_positives
    assert not proposals.labels.any()
    assert len(proposals) == config.train_negatives


def test_inference_proposals():
    boxes = np.zeros((1, 3, 7))
    boxes[0, :, 3:6] = 1.0
    boxes[0, 2, 0] = 10.0
    scores = np.array([[0.9, 0.8, 0.2]])
    config = dataclasses.replace(small_config().rpn, score_threshold=0.1)
    proposals = select_proposals_infer(boxes, scores, np.ones((1, 3), dtype=bool), config)
    assert [tuple(pixel) for pixel in proposals.pixels] == [(0, 0), (0, 2)]
    strict = dataclasses.replace(config, score_threshold=0.95)
    assert select_proposals_infer(boxes, scores, np.ones((1, 3), dtype=bool), strict).empty


def test_rpn_targets_of_a_scene():
    config = small_config()
    scene = generate_scene(config, 2, 0)
    targets = build_rpn_targets(scene.image, scene.boxes, config.bins)
    assert targets.fg.any()
    assert np.all(targets.valid[targets.fg])
    assert np.all(targets.points_per_box[targets.gt_index[targets.fg]] >= 1)
    assert targets.points_per_box.sum() == targets.fg.sum()
    assert not targets.top_mask[0].any()
    assert np.all(targets.top[targets.top] == targets.fg[targets.top])
    assert len(targets.box_targets) == targets.fg.sum()
    for row, col in zip(targets.fg_rows, targets.fg_cols):
        box = Box7.from_array(scene.boxes[targets.gt_index[row, col]])
        local = to_canonical(scene.image.xyz[row, col], box)[0]
        assert np.all(np.abs(local) <= np.array([box.l, box.w, box.h]) / 2.0 + 1e-6)


def test_rcnn_targets_invert_refinement(rng):
    heading_bins = 12
    gt = np.column_stack([rng.normal(scale=10.0, size=(5, 3)), rng.uniform(1.0, 5.0, size=(5, 3)),
                          rng.uniform(-math.pi, math.pi, size=5)])
    proposals = gt + np.column_stack([rng.normal(scale=0.5, size=(5, 3)), rng.uniform(-0.3, 0.3, size=(5, 3)),
                                      rng.normal(scale=0.3, size=5)])
    targets = build_rcnn_targets(proposals, np.ones(5, dtype=bool), np.arange(5), gt, heading_bins)
    decoded = decode_refinements(proposals, refinement_for(targets, heading_bins), heading_bins)
    np.testing.assert_allclose(decoded[:, :6], gt[:, :6], atol=1e-9)
    np.testing.assert_allclose(np.angle(np.exp(1j * (decoded[:, 6] - gt[:, 6]))), 0.0, atol=1e-9)


def test_rcnn_targets_of_an_exact_proposal():
    gt = np.array([[5.0, 1.0, 0.0, 4.0, 2.0, 1.5, 0.7]])
    targets = build_rcnn_targets(gt, np.array([True]), np.array([0]), gt, 12)
    np.testing.assert_allclose(targets.center, 0.0, atol=1e-12)
    np.testing.assert_allclose(targets.log_dims, 0.0)
    assert targets.heading_bin[0] == 0
    assert targets.heading_res[0] == pytest.approx(0.0)
    negatives = build_rcnn_targets(gt, np.array([False]), np.array([0]), gt, 12)
    assert not negatives.positive[0]
    assert negatives.labels[0] == 0.0


def test_pooled_proposals_shape():
    config = small_config()
    scene = generate_scene(config, 2, 0)
    detector = TwoStageDetector(config)
    heads = detector.rpn.forward(scene.image)
    decoded = detector.rpn.decode(heads, scene.image)
    pooled = pool_proposals(scene.boxes, scene.image, heads, decoded, config.rcnn.pool_margin, config.rcnn.grid)
    assert pooled.grids.shape == (scene.n_objects, 2, 2, 2, SEMANTIC_CHANNELS + config.rpn.embedding_channels)
    assert len(pooled.geometry) == scene.n_objects


@pytest.mark.parametrize("backbone", ["mini", "stem"])
def test_train_step_accumulates_gradients(backbone):
    config = small_config(backbone=backbone)
    detector = TwoStageDetector(config)
    scene = generate_scene(config, 3, 0)
    detector.zero_grad()
    result = detector.train_step(scene.image, scene.boxes, np.random.default_rng(0))
    assert all(math.isfinite(value) and value >= 0.0 for value in result.losses.as_row())
    assert result.losses.rpn_cls > 0.0
    assert 0 < result.n_proposals <= 8
    params = detector.params()
    assert np.any(params["rpn.stem.pattern"].grad != 0.0)
    assert np.any(params["rpn.heads.w"].grad != 0.0)
    assert np.any(params["rcnn.dense.b"].grad != 0.0)


def test_detect_returns_scored_detections():
    config = small_config()
    detector = TwoStageDetector(config)
    scene = generate_scene(config, 4, 0)
    detections = detector.detect(scene.image, "frame-a")
    assert 0 < len(detections) <= config.rpn.max_proposals
    assert all(isinstance(d, Detection) and d.frame == "frame-a" for d in detections)
    scores = [d.score for d in detections]
    assert scores == sorted(scores, reverse=True)


def test_detector_checkpoint_round_trip(tmp_path):
    config = small_config()
    detector = TwoStageDetector(config)
    detector.rpn.stem.rcd_params.log_lambda.value[...] = 0.7
    detector.save(tmp_path, {"iteration": 5})
    assert (tmp_path / MANIFEST_FILE).is_file()
    loaded = TwoStageDetector.load(tmp_path)
    assert loaded.config == config
    assert loaded.rpn.stem.rcd_params.log_lambda.value.item() == pytest.approx(0.7, rel=1e-6)
    for name, param in detector.params().items():
        np.testing.assert_allclose(loaded.params()[name].value, param.value, rtol=1e-6, atol=1e-7)


def test_composite_gradient_check():
    case = composite_case(1)
    report = grad_check(case.op, case.inputs, tol=case.tol, wrt=case.wrt, seed=1, sample=case.sample)
    assert report.passed, report
    assert "rpn.stem.log_lambda" in report.errors


def test_lambda_summary():
    trace = [TraceRow(k, 0.0, 0.0, 0.0, 0.0, lam, 1.0) for k, lam in enumerate([1.1, 1.4, 1.2], start=1)]
    summary = lambda_summary(1.0, trace)
    assert (summary.initial, summary.maximum, summary.final) == (1.0, 1.4, 1.2)
    assert lambda_summary(1.0, []).final == 1.0


def test_toy_training_run(tmp_path):
    store = MemoryStore()
    result = ToyTrainer(small_config(), tmp_path, store).train()
    assert [row.iteration for row in result.trace] == [1, 2]
    assert all(math.isfinite(row.total) for row in result.trace)
    assert store.get_run(result.run_id).seed == 0
    for name in (TRACE_FILE, PATTERN_FILE, MANIFEST_FILE, EVAL_DETECTIONS_FILE, EVAL_GT_FILE):
        assert (tmp_path / name).is_file()
    header = (tmp_path / TRACE_FILE).read_text().splitlines()[0]
    assert header == ",".join(TRACE_CSV_HEADER)
    assert [row.bucket for row in result.evaluation][:3] == ["[0,30)", "[30,50)", "[50,inf)"]
    assert result.lambda_summary.final == pytest.approx(result.trace[-1].lam)


def snapshot(directory) -> dict[str, bytes]:
    return {str(path.relative_to(directory)): path.read_bytes() for path in sorted(directory.rglob("*"))
            if path.is_file()}


def test_toy_training_is_byte_identical_across_runs_and_threads(tmp_path):
    ToyTrainer(small_config(), tmp_path / "first").train()
    ToyTrainer(small_config(), tmp_path / "second").train()
    ToyTrainer(small_config(), tmp_path / "threaded", threads=2).train()
    first = snapshot(tmp_path / "first")
    assert any(name.endswith(".f4") for name in first)
    assert snapshot(tmp_path / "second") == first
    assert snapshot(tmp_path / "threaded") == first


@pytest.mark.slow
def test_toy_training_reaches_the_reference_targets(tmp_path):
    result = ToyTrainer(RunConfig(seed=0), tmp_path).train()
    totals = np.array([row.total for row in result.trace])
    # trailing means: the first ten iterations against the last fifty
    assert totals[-50:].mean() < 0.25 * totals[:10].mean()
    assert result.lambda_summary.initial == 1.0
    assert result.lambda_summary.final > 1.0
    overall = result.evaluation[-1]
    assert overall.bucket == "all"
    assert overall.ap >= 0.6
