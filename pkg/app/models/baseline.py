from typing import Sequence

import numpy as np

from app.schemas.keypoints import ObjectInstance
from app.utils.tensor import EPS


class MeanPoolEncoder:
    """Baseline descriptor: the normalised mean of an object's key-point descriptors"""

    def __init__(self, n_p: int = 256):
        self.width = n_p

    def describe(self, objects: Sequence[ObjectInstance]) -> np.ndarray:
        if not objects:
            return np.zeros((0, self.width))
        means = np.stack([obj.descriptors().mean(axis=0) for obj in objects])
        norms = np.maximum(np.linalg.norm(means, axis=1, keepdims=True), EPS)
        return means / norms
