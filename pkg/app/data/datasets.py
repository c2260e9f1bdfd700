"""
Evaluation data derived from a run configuration's root seed
"""
from typing import List, Tuple

from app.data.pairs import EVAL_STREAM
from app.data.synth import Frame, derive_seed, generate_object, generate_reloc_layout, generate_sequence
from app.schemas.config import RunConfig
from app.schemas.keypoints import ObjectInstance

SEQUENCE_KEY = 0
RELOC_KEY = 1
OBJECTS_KEY = 2


def evaluation_sequences(config: RunConfig) -> List[List[Frame]]:
    seed = derive_seed(config.seed, EVAL_STREAM, SEQUENCE_KEY)
    return [
        generate_sequence(index, config.sequence, config.synth, config.model.n_p, seed)
        for index in range(config.sequence.num_sequences)
    ]


def evaluation_layout(config: RunConfig) -> Tuple[List[Frame], List[Frame]]:
    seed = derive_seed(config.seed, EVAL_STREAM, RELOC_KEY)
    return generate_reloc_layout(config.reloc, config.synth, config.augment, config.model.n_p, seed)


def evaluation_objects(config: RunConfig, count: int) -> List[ObjectInstance]:
    return [
        generate_object(derive_seed(config.seed, EVAL_STREAM, OBJECTS_KEY, i), config.synth,
                        config.model.n_p, frame_id=i)
        for i in range(count)
    ]


def flatten(frames) -> List[ObjectInstance]:
    return [obj for frame in frames for obj in frame]
