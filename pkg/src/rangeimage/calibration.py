import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from errors import CalibrationError, DimensionError
from models.config import CalibrationConfig
from models.range_image import LaserCalibration, PointCloud
from rangeimage.projection import assign_lasers

MIN_BINS = 32
CHUNK_POINTS = 8192


@dataclass(frozen=True)
class HoughPeak:
    height: float
    inclination: float
    votes: int
    inliers: int


@dataclass(frozen=True)
class CalibrationResult:
    calibration: LaserCalibration
    # vote-weighted 3x3 accumulator centroids, in pick order
    peaks: list[HoughPeak]


def fit_laser(ground: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    """Least-squares (height, inclination) of z = height + ground * tan(inclination)"""
    if len(ground) == 1:
        return float(z[0]), 0.0
    design = np.column_stack([np.ones_like(ground), ground])
    (height, slope), *_ = np.linalg.lstsq(design, z, rcond=None)
    return float(height), float(np.arctan(slope))


class HoughCalibrator:
    """Recovers per-laser inclination and height by voting in a discretized (height, inclination) space.

    Every point votes, for each height bin center h, for the inclination atan((z - h) / d) with d the ground-plane
    distance. Peaks are picked greedily with 3x3 suppression around each pick; the points a peak claims are refined by
    least squares and their votes removed before the next pick, so the ridge a laser leaves in the accumulator cannot
    masquerade as another laser.
    """

    def __init__(self, config: CalibrationConfig, threads: int = 1):
        if config.height_bins < MIN_BINS or config.incl_bins < MIN_BINS:
            raise DimensionError(f"Hough bin counts must be at least {MIN_BINS}")
        self.__config = config
        self.__threads = max(1, threads)
        self.__logger = logging.getLogger(self.__class__.__name__)
        low, high = config.height_range
        self.__height_step = (high - low) / config.height_bins
        self.__height_centers = low + (np.arange(config.height_bins) + 0.5) * self.__height_step
        low, high = config.incl_range
        self.__incl_step = (high - low) / config.incl_bins
        self.__incl_centers = low + (np.arange(config.incl_bins) + 0.5) * self.__incl_step

    @property
    def height_step(self) -> float:
        return self.__height_step

    @property
    def incl_step(self) -> float:
        return self.__incl_step

    def __vote_chunk(self, ground: np.ndarray, z: np.ndarray) -> np.ndarray:
        config = self.__config
        inclinations = np.arctan((z[:, None] - self.__height_centers[None, :]) / ground[:, None])
        incl_idx = np.floor((inclinations - config.incl_range[0]) / self.__incl_step).astype(np.int64)
        inside = (incl_idx >= 0) & (incl_idx < config.incl_bins)
        height_idx = np.broadcast_to(np.arange(config.height_bins), incl_idx.shape)
        cells = height_idx[inside] * config.incl_bins + incl_idx[inside]
        return np.bincount(cells, minlength=config.height_bins * config.incl_bins)

    def vote(self, ground: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Accumulator of shape (height_bins, incl_bins); integer counts, so chunked sums are order independent"""
        chunks = [(ground[i:i + CHUNK_POINTS], z[i:i + CHUNK_POINTS]) for i in range(0, len(z), CHUNK_POINTS)]
        shape = (self.__config.height_bins, self.__config.incl_bins)
        if not chunks:
            return np.zeros(shape, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=self.__threads) as executor:
            partials = list(executor.map(lambda chunk: self.__vote_chunk(*chunk), chunks))
        return np.sum(partials, axis=0).reshape(shape)

    def __centroid(self, weights: np.ndarray, window: tuple[slice, slice]) -> tuple[float, float]:
        """Vote-weighted center of a 3x3 accumulator window"""
        heights = self.__height_centers[window[0]]
        inclinations = self.__incl_centers[window[1]]
        total = float(weights.sum())
        return (float((weights.sum(axis=1) * heights).sum()) / total,
                float((weights.sum(axis=0) * inclinations).sum()) / total)

    def __claim(self, ground: np.ndarray, z: np.ndarray, available: np.ndarray, height: float,
                inclination: float) -> np.ndarray:
        """Indices of available points consistent with a laser, tightened by repeated least-squares refits"""
        tolerance = self.__height_step + ground * self.__incl_step
        members = np.zeros(0, dtype=np.int64)
        for _ in range(self.__config.refine_iterations + 1):
            residual = np.abs(z - height - ground * np.tan(inclination))
            members = np.flatnonzero(available & (residual <= tolerance))
            if len(members) == 0:
                break
            height, inclination = fit_laser(ground[members], z[members])
            fit = np.abs(z[members] - height - ground[members] * np.tan(inclination))
            spread = 4.0 * float(np.sqrt(np.mean(fit ** 2)))
            tolerance = np.minimum(tolerance, max(spread, 1e-3))
        return members

    def run(self, cloud: PointCloud, n_lasers: int) -> CalibrationResult:
        config = self.__config
        xyz = cloud.xyz
        ground_all = np.hypot(xyz[:, 0], xyz[:, 1])
        usable = ground_all >= config.min_ground_distance
        ground, z = ground_all[usable], xyz[usable, 2]

        accumulator = self.vote(ground, z)
        suppressed = np.zeros_like(accumulator, dtype=bool)
        available = np.ones(len(z), dtype=bool)
        peaks: list[HoughPeak] = []
        lasers: list[tuple[float, float]] = []

        while len(lasers) < n_lasers:
            candidates = np.where(suppressed, -1, accumulator)
            cell = int(np.argmax(candidates))
            hi, ii = divmod(cell, config.incl_bins)
            votes = int(candidates.reshape(-1)[cell])
            if votes < config.min_votes:
                raise CalibrationError(f"found {len(lasers)} accumulator peaks, expected {n_lasers}")
            window = (slice(max(hi - 1, 0), hi + 2), slice(max(ii - 1, 0), ii + 2))
            height, inclination = self.__centroid(np.maximum(candidates[window], 0), window)
            suppressed[window] = True

            members = self.__claim(ground, z, available, height, inclination)
            if len(members) < config.min_votes:
                self.__logger.debug("peak at (%.4f m, %.4f rad) claimed only %s points, skipping",
                                    height, inclination, len(members))
                continue
            available[members] = False
            accumulator = accumulator - self.vote(ground[members], z[members])
            peaks.append(HoughPeak(height, inclination, votes, len(members)))
            lasers.append(fit_laser(ground[members], z[members]))
            self.__logger.debug("laser peak %s at (%.4f m, %.4f rad): %s votes, %s points",
                                len(lasers), height, inclination, votes, len(members))

        order = sorted(range(n_lasers), key=lambda k: -lasers[k][1])
        draft = LaserCalibration(np.array([lasers[k][1] for k in order]), np.array([lasers[k][0] for k in order]),
                                 config.azimuth_steps)
        calibration = self.__refit(ground, z, draft)
        self.__logger.info("calibrated %s lasers from %s points", n_lasers, len(z))
        return CalibrationResult(calibration, peaks)

    def __refit(self, ground: np.ndarray, z: np.ndarray, draft: LaserCalibration) -> LaserCalibration:
        """Reassigns every point to its nearest laser and refits each laser on its own points, until no point changes
        laser"""
        xyz = np.column_stack([ground, np.zeros_like(ground), z])
        inclinations, heights = draft.inclinations.copy(), draft.heights.copy()
        previous = None
        for _ in range(self.__config.refine_iterations + 1):
            laser_ids, _ = assign_lasers(xyz, LaserCalibration(inclinations, heights, draft.azimuth_steps))
            if previous is not None and np.array_equal(laser_ids, previous):
                break
            previous = laser_ids
            for laser in range(draft.n_lasers):
                members = laser_ids == laser
                if np.count_nonzero(members) >= 2:
                    heights[laser], inclinations[laser] = fit_laser(ground[members], z[members])
        if np.any(np.diff(inclinations) >= 0):
            raise CalibrationError("refined laser inclinations are not strictly monotonic")
        return LaserCalibration(inclinations, heights, draft.azimuth_steps)


def hough_calibrate(cloud: PointCloud, n_lasers: int, height_bins: int = 256, incl_bins: int = 512,
                    config: CalibrationConfig = CalibrationConfig(), threads: int = 1) -> LaserCalibration:
    calibrator = HoughCalibrator(replace(config, height_bins=height_bins, incl_bins=incl_bins), threads)
    return calibrator.run(cloud, n_lasers).calibration
