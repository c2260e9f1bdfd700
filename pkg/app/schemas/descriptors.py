import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, field_validator

UNIT_NORM_TOLERANCE = 1e-6


class DescriptorRecord(BaseModel):
    """
    An encoded object observation

    Attributes:
        object_id (str): Identity label
        frame_id (int): Frame the observation belongs to
        sequence_id (str): Sequence the frame belongs to
        descriptor (np.ndarray): Unit-norm object descriptor
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, extra='forbid')
    object_id: str
    frame_id: int
    descriptor: np.ndarray
    sequence_id: str = "default"

    @field_validator('descriptor', mode='before')
    def validate_descriptor(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 1:
            raise ValueError(f"descriptor must be a vector, got shape {array.shape}")
        norm = float(np.linalg.norm(array))
        if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise ValueError(f"descriptor norm {norm:.9f} is not 1 within {UNIT_NORM_TOLERANCE}")
        return array

    @field_serializer('descriptor')
    def serialize_descriptor(self, value: np.ndarray) -> list:
        return value.tolist()

    def __eq__(self, other):
        if not isinstance(other, DescriptorRecord):
            return NotImplemented
        return (self.object_id == other.object_id
                and self.frame_id == other.frame_id
                and self.sequence_id == other.sequence_id
                and np.array_equal(self.descriptor, other.descriptor))


class ObjectMatch(BaseModel):
    """A cross-frame object pair whose similarity passed the threshold"""
    model_config = ConfigDict(extra='forbid')
    object_a: str
    object_b: str
    score: float


class RankedFrame(BaseModel):
    """A database frame with its accumulated similarity to a query"""
    model_config = ConfigDict(extra='forbid')
    frame_id: int
    score: float
