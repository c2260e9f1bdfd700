"""
Sources of labelled pair batches for training
"""
from collections import defaultdict
from typing import List, Protocol, Sequence

import numpy as np
import structlog

from app.data.synth import SEED_SPACE, augment, derive_seed, make_pair_batch
from app.schemas.config import RunConfig
from app.schemas.keypoints import LabeledPair, ObjectInstance
from app.utils.errors import ContractViolation

logger = structlog.get_logger(__name__)

# Stream keys keep training draws apart from evaluation draws under one root seed.
TRAIN_STREAM = 1
EVAL_STREAM = 2


def batch_split(batch_size: int, positive_fraction: float) -> tuple:
    """(positives, negatives) for a batch"""
    positives = int(round(batch_size * positive_fraction))
    return positives, batch_size - positives


class PairSource(Protocol):
    def batch(self, step: int) -> List[LabeledPair]:
        ...


class SyntheticPairSource:
    """Fresh synthetic pairs for every step"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.n_pos, self.n_neg = batch_split(config.train.batch_size, config.train.positive_fraction)

    def batch(self, step: int) -> List[LabeledPair]:
        return make_pair_batch(
            self.n_pos, self.n_neg, self.config.augment,
            derive_seed(self.config.seed, TRAIN_STREAM, step),
            self.config.synth, self.config.model.n_p,
        )


class PoolPairSource:
    """
    Pairs drawn from a fixed pool of observations, e.g. a loaded key-point file

    Positives pair two observations of one identity (the same one twice when
    only one exists) with the second augmented; negatives pair observations
    of two distinct identities.
    """

    def __init__(self, objects: Sequence[ObjectInstance], config: RunConfig):
        by_identity = defaultdict(list)
        for obj in objects:
            by_identity[obj.object_id].append(obj)
        self.identities = sorted(by_identity)
        self.observations = by_identity
        self.config = config
        self.n_pos, self.n_neg = batch_split(config.train.batch_size, config.train.positive_fraction)
        if not self.identities:
            raise ContractViolation("pair pool is empty")
        if self.n_neg and len(self.identities) < 2:
            raise ContractViolation("negative pairs need at least two object identities in the pool")
        logger.info("pair_pool_ready", identities=len(self.identities), observations=len(objects))

    def _pick(self, rng: np.random.Generator, identity: str) -> ObjectInstance:
        observations = self.observations[identity]
        return observations[int(rng.integers(len(observations)))]

    def batch(self, step: int) -> List[LabeledPair]:
        rng = np.random.default_rng(derive_seed(self.config.seed, TRAIN_STREAM, step))
        margin = self.config.synth.bbox_margin
        pairs = []
        for _ in range(self.n_pos):
            identity = self.identities[int(rng.integers(len(self.identities)))]
            first, second = self._pick(rng, identity), self._pick(rng, identity)
            second = augment(second, self.config.augment, int(rng.integers(SEED_SPACE)), margin)
            pairs.append(LabeledPair(first=first, second=second, positive=True))
        for _ in range(self.n_neg):
            a, b = rng.choice(len(self.identities), size=2, replace=False)
            first = self._pick(rng, self.identities[int(a)])
            second = augment(self._pick(rng, self.identities[int(b)]), self.config.augment,
                             int(rng.integers(SEED_SPACE)), margin)
            pairs.append(LabeledPair(first=first, second=second, positive=False))
        return pairs
