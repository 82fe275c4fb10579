import numpy as np

type Array = np.ndarray
type FrameId = str
type RunId = int
type Seed = int
type ParamName = str
