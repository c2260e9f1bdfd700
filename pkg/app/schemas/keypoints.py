from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

BBOX_TOLERANCE = 0.5


class KeyPoint(BaseModel):
    """
    A detected interest point

    Attributes:
        position (tuple[float, float]): Pixel coordinates (x, y)
        descriptor (np.ndarray): Local descriptor of width N_p
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, extra='forbid')
    position: Tuple[float, float]
    descriptor: np.ndarray

    @field_validator('descriptor', mode='before')
    def validate_descriptor(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 1 or array.size == 0:
            raise ValueError(f"descriptor must be a non-empty vector, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("descriptor contains non-finite values")
        return array

    @field_validator('position')
    def validate_position(cls, value):
        if not all(np.isfinite(value)):
            raise ValueError(f"position must be finite, got {value}")
        return value

    @field_serializer('descriptor')
    def serialize_descriptor(self, value: np.ndarray) -> list:
        return value.tolist()

    def __eq__(self, other):
        if not isinstance(other, KeyPoint):
            return NotImplemented
        return self.position == other.position and np.array_equal(self.descriptor, other.descriptor)


class ObjectInstance(BaseModel):
    """
    One observed object: an identity, a box and its key-points

    Attributes:
        object_id (str): Identity label shared by all observations of one object
        frame_id (int): Frame the observation belongs to
        bbox (tuple): (x, y, width, height) in pixels
        keypoints (list[KeyPoint]): At least one key-point inside the box
        sequence_id (str): Sequence the frame belongs to
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, extra='forbid')
    object_id: str
    frame_id: int
    bbox: Tuple[float, float, float, float]
    keypoints: List[KeyPoint] = Field(min_length=1)
    sequence_id: str = "default"

    @model_validator(mode='after')
    def validate_geometry(self):
        x, y, width, height = self.bbox
        if width <= 0 or height <= 0:
            raise ValueError(f"bbox extents must be positive, got {self.bbox}")
        for kp in self.keypoints:
            px, py = kp.position
            if not (x - BBOX_TOLERANCE <= px <= x + width + BBOX_TOLERANCE
                    and y - BBOX_TOLERANCE <= py <= y + height + BBOX_TOLERANCE):
                raise ValueError(f"key-point {kp.position} lies outside bbox {self.bbox}")
        return self

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints)

    def positions(self) -> np.ndarray:
        """Key-point positions as an M x 2 array"""
        return np.array([kp.position for kp in self.keypoints], dtype=np.float64)

    def descriptors(self) -> np.ndarray:
        """Key-point descriptors as an M x N_p array"""
        return np.stack([kp.descriptor for kp in self.keypoints])

    def subset(self, indices: Sequence[int], bbox: Optional[tuple] = None) -> "ObjectInstance":
        """Copy of the object keeping only the given key-points"""
        return ObjectInstance(
            object_id=self.object_id,
            frame_id=self.frame_id,
            bbox=bbox or self.bbox,
            keypoints=[self.keypoints[i] for i in indices],
            sequence_id=self.sequence_id,
        )


def tight_bbox(positions: np.ndarray, margin: float) -> Tuple[float, float, float, float]:
    """Axis-aligned box around the positions, padded by ``margin`` pixels"""
    low = positions.min(axis=0) - margin
    high = positions.max(axis=0) + margin
    return (float(low[0]), float(low[1]), float(high[0] - low[0]), float(high[1] - low[1]))


def build_object(object_id: str, frame_id: int, positions: np.ndarray, descriptors: np.ndarray,
                 margin: float, sequence_id: str = "default") -> ObjectInstance:
    """Assemble an ObjectInstance whose bbox is the padded tight box of its key-points"""
    return ObjectInstance(
        object_id=object_id,
        frame_id=frame_id,
        bbox=tight_bbox(positions, margin),
        keypoints=[
            KeyPoint(position=(float(p[0]), float(p[1])), descriptor=d)
            for p, d in zip(positions, descriptors)
        ],
        sequence_id=sequence_id,
    )


class KeypointEntry(BaseModel):
    """One key-point as stored in a key-point file"""
    model_config = ConfigDict(extra='forbid')
    xy: Tuple[float, float]
    desc: List[float]


class KeypointFileHeader(BaseModel):
    """First line of a key-point file"""
    model_config = ConfigDict(extra='forbid')
    format: str = "objcode-keypoints"
    version: int = 1
    n_p: int = Field(ge=1)


class KeypointFileRecord(BaseModel):
    """
    One line of a key-point file: a single object observation

    Attributes:
        object_id (str): Identity label
        frame_id (int): Frame index
        bbox (list[float]): (x, y, width, height)
        keypoints (list[KeypointEntry]): Positions and descriptors
        sequence_id (str): Sequence grouping key
    """
    model_config = ConfigDict(extra='forbid')
    object_id: str
    frame_id: int
    bbox: Tuple[float, float, float, float]
    keypoints: List[KeypointEntry] = Field(min_length=1)
    sequence_id: str = "default"

    @classmethod
    def from_object(cls, obj: ObjectInstance) -> "KeypointFileRecord":
        return cls(
            object_id=obj.object_id,
            frame_id=obj.frame_id,
            bbox=obj.bbox,
            keypoints=[
                KeypointEntry(xy=kp.position, desc=kp.descriptor.tolist())
                for kp in obj.keypoints
            ],
            sequence_id=obj.sequence_id,
        )

    def to_object(self) -> ObjectInstance:
        return ObjectInstance(
            object_id=self.object_id,
            frame_id=self.frame_id,
            bbox=self.bbox,
            keypoints=[KeyPoint(position=kp.xy, descriptor=kp.desc) for kp in self.keypoints],
            sequence_id=self.sequence_id,
        )


class LabeledPair(BaseModel):
    """
    Two object observations and whether they show the same physical object

    Attributes:
        first (ObjectInstance): First observation
        second (ObjectInstance): Second observation
        positive (bool): True for the same identity, False for distinct ones
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, extra='forbid')
    first: ObjectInstance
    second: ObjectInstance
    positive: bool

    @model_validator(mode='after')
    def validate_polarity(self):
        same = self.first.object_id == self.second.object_id
        if same != self.positive:
            polarity = "positive" if self.positive else "negative"
            raise ValueError(
                f"{polarity} pair with object ids {self.first.object_id!r} and {self.second.object_id!r}"
            )
        return self
