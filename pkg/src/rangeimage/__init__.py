from rangeimage.calibration import CalibrationResult, HoughCalibrator, hough_calibrate
from rangeimage.projection import (assign_laser, assign_lasers, build_range_image, clamp_row, image_to_cloud,
                                   wrap_column)
