import logging
import math
import queue
import threading
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from boxgeom.iou import bev_iou_matrix
from models.box import Box7
from models.config import RunConfig, SceneConfig
from models.range_image import LaserCalibration, PointCloud, RangeImage
from rangeimage.projection import TWO_PI, build_range_image
from rangeimage.synthetic import uniform_calibration
from utils import rng_for

VEHICLE = "vehicle"
# placement attempts per requested object before a scene settles for fewer
PLACEMENT_ATTEMPTS = 50
# slab test denominators below this are treated as parallel rays
PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class SyntheticScene:
    """Generated vehicles, the cloud a sensor at the origin would return from them and the ground, and its range
    image; fully determined by (seed, index, config)"""
    seed: int
    index: int
    boxes: np.ndarray
    labels: tuple[str, ...]
    cloud: PointCloud
    image: RangeImage

    @property
    def n_objects(self) -> int:
        return len(self.boxes)


def scene_calibration(config: SceneConfig) -> LaserCalibration:
    return uniform_calibration(config.height, config.width, config.inclination_top, config.inclination_bottom)


def pixel_rays(calib: LaserCalibration) -> np.ndarray:
    """Unit direction [H, W, 3] through the center of every range image pixel"""
    azimuths = (np.arange(calib.azimuth_steps) + 0.5) * TWO_PI / calib.azimuth_steps
    incl = calib.inclinations[:, None]
    return np.stack(np.broadcast_arrays(np.cos(incl) * np.cos(azimuths), np.cos(incl) * np.sin(azimuths),
                                        np.sin(incl)), axis=-1)


def place_boxes(config: SceneConfig, anchor: tuple[float, float, float], rng: np.random.Generator) -> np.ndarray:
    """Vehicles standing on the ground plane, with no two footprints overlapping"""
    wanted = int(rng.integers(config.min_objects, config.max_objects + 1))
    boxes = np.zeros((0, 7))
    for _ in range(wanted * PLACEMENT_ATTEMPTS):
        if len(boxes) == wanted:
            break
        distance = rng.uniform(*config.range_limits)
        azimuth = rng.uniform(0.0, TWO_PI)
        dims = np.asarray(anchor) * (1.0 + config.dims_jitter * rng.uniform(-1.0, 1.0, size=3))
        heading = rng.uniform(-math.pi, math.pi)
        candidate = np.array([[distance * math.cos(azimuth), distance * math.sin(azimuth),
                               -config.sensor_height + dims[2] / 2.0, *dims, heading]])
        if len(boxes) and np.any(bev_iou_matrix(candidate, boxes) > 0.0):
            continue
        boxes = np.vstack([boxes, candidate])
    if len(boxes) < wanted:
        logging.getLogger(__name__).warning("placed %s of %s requested objects", len(boxes), wanted)
    return boxes


def ray_box_distance(rays: np.ndarray, box: Box7) -> np.ndarray:
    """Distance along each ray from the origin to the box surface (slab test in the box frame), inf on a miss"""
    cos, sin = math.cos(box.theta), math.sin(box.theta)
    origin = np.array([-box.x * cos - box.y * sin, box.x * sin - box.y * cos, -box.z])
    local = np.stack([rays[..., 0] * cos + rays[..., 1] * sin, -rays[..., 0] * sin + rays[..., 1] * cos,
                      rays[..., 2]], axis=-1)
    half = np.array([box.l, box.w, box.h]) / 2.0
    safe = np.where(np.abs(local) < PARALLEL_EPS, PARALLEL_EPS, local)
    t1, t2 = (-half - origin) / safe, (half - origin) / safe
    near = np.max(np.minimum(t1, t2), axis=-1)
    far = np.min(np.maximum(t1, t2), axis=-1)
    return np.where((far >= near) & (near > 0.0), near, np.inf)


def cast_scene(boxes: np.ndarray, calib: LaserCalibration, config: SceneConfig) -> PointCloud:
    """First return of every pixel ray against the ground plane and the boxes, up to the maximum range"""
    rays = pixel_rays(calib)
    with np.errstate(divide="ignore"):
        ground = np.where(rays[..., 2] < 0.0, -config.sensor_height / rays[..., 2], np.inf)
    nearest, hit_object = ground, np.zeros(ground.shape, dtype=bool)
    for row in boxes:
        distance = ray_box_distance(rays, Box7.from_array(row))
        closer = distance < nearest
        nearest = np.where(closer, distance, nearest)
        hit_object |= closer
    returned = nearest < config.max_range
    xyz = rays[returned] * nearest[returned][:, None]
    intensity = np.where(hit_object[returned], config.object_intensity, config.ground_intensity)
    return PointCloud.from_xyz(xyz, intensity)


def generate_scene(config: RunConfig, seed: int, index: int) -> SyntheticScene:
    rng = rng_for(seed, index)
    calib = scene_calibration(config.scene)
    boxes = place_boxes(config.scene, config.bins.anchor, rng)
    cloud = cast_scene(boxes, calib, config.scene)
    return SyntheticScene(seed, index, boxes, tuple(VEHICLE for _ in range(len(boxes))), cloud,
                          build_range_image(cloud, calib))


class ScenePrefetcher:
    """Generates scenes `start, start + 1, ...` on a producer thread into a bounded queue.

    Scenes are pure in (seed, index), so the consumer sees the same sequence with or without prefetching.
    """

    def __init__(self, config: RunConfig, seed: int, start: int = 0, depth: int = 4):
        self.__config = config
        self.__seed = seed
        self.__next = start
        self.__queue: queue.Queue = queue.Queue(maxsize=max(depth, 1))
        self.__stop = threading.Event()
        self.__thread: Optional[threading.Thread] = None
        self.__logger = logging.getLogger(self.__class__.__name__)

    def __produce(self):
        index = self.__next
        while not self.__stop.is_set():
            try:
                item = generate_scene(self.__config, self.__seed, index)
            except Exception as e:
                self.__logger.error("scene %s failed: %s", index, e)
                item = e
            while not self.__stop.is_set():
                try:
                    self.__queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if isinstance(item, Exception):
                return
            index += 1

    def start(self) -> 'ScenePrefetcher':
        self.__thread = threading.Thread(target=self.__produce, name="scene-prefetch", daemon=True)
        self.__thread.start()
        return self

    def get(self) -> SyntheticScene:
        if self.__thread is None:
            scene = generate_scene(self.__config, self.__seed, self.__next)
            self.__next += 1
            return scene
        item = self.__queue.get()
        if isinstance(item, Exception):
            raise item
        return item

    def __iter__(self) -> Iterator[SyntheticScene]:
        while True:
            yield self.get()

    def close(self):
        self.__stop.set()
        if self.__thread is not None:
            self.__thread.join()
            self.__thread = None

    def __enter__(self) -> 'ScenePrefetcher':
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.close()
