import numpy as np

from models.range_image import LaserCalibration, PointCloud
from rangeimage.projection import TWO_PI


def laser_cloud(calib: LaserCalibration, n_points: int, rng: np.random.Generator,
                ground_range: tuple[float, float] = (2.0, 40.0), range_noise: float = 0.0) -> PointCloud:
    """Points spread uniformly over the lasers of a calibration at random azimuths and ground distances.

    Noise is applied along each laser ray, so every point stays on its laser's cone.
    """
    lasers = rng.integers(0, calib.n_lasers, size=n_points)
    azimuths = rng.uniform(0.0, TWO_PI, size=n_points)
    ground = rng.uniform(*ground_range, size=n_points)
    inclinations = calib.inclinations[lasers]
    along_ray = ground / np.cos(inclinations)
    if range_noise > 0:
        along_ray = along_ray + rng.normal(0.0, range_noise, size=n_points)
    ground = along_ray * np.cos(inclinations)
    xyz = np.column_stack([ground * np.cos(azimuths), ground * np.sin(azimuths),
                           calib.heights[lasers] + along_ray * np.sin(inclinations)])
    return PointCloud.from_xyz(xyz, rng.uniform(0.0, 1.0, size=n_points))


def grid_cloud(calib: LaserCalibration, ground_distance: float = 10.0) -> PointCloud:
    """One point per (laser, azimuth bin center), laser-major"""
    columns = (np.arange(calib.azimuth_steps) + 0.5) * TWO_PI / calib.azimuth_steps
    azimuths = np.tile(columns, calib.n_lasers)
    lasers = np.repeat(np.arange(calib.n_lasers), calib.azimuth_steps)
    z = calib.heights[lasers] + ground_distance * np.tan(calib.inclinations[lasers])
    xyz = np.column_stack([ground_distance * np.cos(azimuths), ground_distance * np.sin(azimuths), z])
    return PointCloud.from_xyz(xyz, 0.5)


def uniform_calibration(n_lasers: int, azimuth_steps: int, inclination_top: float, inclination_bottom: float,
                        height_top: float = 0.0, height_bottom: float = 0.0) -> LaserCalibration:
    """Evenly spaced lasers; heights interpolate linearly from the top laser to the bottom one"""
    if n_lasers == 1:
        return LaserCalibration(np.array([inclination_top]), np.array([height_top]), azimuth_steps)
    return LaserCalibration(np.linspace(inclination_top, inclination_bottom, n_lasers),
                            np.linspace(height_top, height_bottom, n_lasers), azimuth_steps)
