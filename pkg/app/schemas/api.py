from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.config import RunConfig
from app.schemas.descriptors import ObjectMatch, RankedFrame
from app.schemas.keypoints import KeypointFileRecord, ObjectInstance
from app.schemas.reports import TraceRow


def to_objects(records: List[KeypointFileRecord]) -> List[ObjectInstance]:
    return [record.to_object() for record in records]


class EncodeRequest(BaseModel):
    """
    Schema for an encoding request

    Attributes:
        objects (list[KeypointFileRecord]): Observations in key-point file layout
    """
    model_config = ConfigDict(extra='forbid')
    objects: List[KeypointFileRecord] = Field(min_length=1)


class EncodedObject(BaseModel):
    """One descriptor returned by the encoder"""
    model_config = ConfigDict(extra='forbid')
    object_id: str
    frame_id: int
    descriptor: List[float]


class EncodeResponse(BaseModel):
    n_o: int
    descriptors: List[EncodedObject]


class MatchRequest(BaseModel):
    """
    Schema for matching the objects of two frames

    Attributes:
        frame_a (list[KeypointFileRecord]): Objects of the first frame
        frame_b (list[KeypointFileRecord]): Objects of the second frame
        sim_threshold (float): Pairs need a cosine similarity strictly above this
        mutual_nearest (bool): Keep only mutual best matches
    """
    model_config = ConfigDict(extra='forbid')
    frame_a: List[KeypointFileRecord]
    frame_b: List[KeypointFileRecord]
    sim_threshold: float = Field(default=0.5, ge=-1.0, le=1.0, description="Match threshold")
    mutual_nearest: bool = False


class MatchResponse(BaseModel):
    matches: List[ObjectMatch]
    frame_similarity: float


class DatabaseRequest(BaseModel):
    """Objects of one frame to add to the relocalization database"""
    model_config = ConfigDict(extra='forbid')
    frame: List[KeypointFileRecord] = Field(min_length=1)


class DatabaseResponse(BaseModel):
    added: int
    records: int
    frames: int


class RelocalizeRequest(BaseModel):
    """
    Schema for ranking database frames against a query frame

    Attributes:
        frame (list[KeypointFileRecord]): Objects of the query frame
        sim_threshold (float): Pair similarity needed to contribute to a frame score
        top_n (int): Number of ranked frames to return
    """
    model_config = ConfigDict(extra='forbid')
    frame: List[KeypointFileRecord] = Field(min_length=1)
    sim_threshold: float = Field(default=0.5, ge=-1.0, le=1.0, description="Pair threshold")
    top_n: int = Field(default=20, ge=1, description="Frames to return")


class RelocalizeResponse(BaseModel):
    ranked: List[RankedFrame]


class TrainRequest(BaseModel):
    """
    Schema for starting a background training run

    Attributes:
        config (RunConfig): Full run configuration
        checkpoint_path (str | None): Where to save the final checkpoint
    """
    model_config = ConfigDict(extra='forbid')
    config: RunConfig = Field(default_factory=RunConfig)
    checkpoint_path: Optional[str] = None


class TrainStatus(BaseModel):
    state: Literal["idle", "running", "finished", "failed"] = "idle"
    step: int = 0
    steps: int = 0
    last: Optional[TraceRow] = None
    error: Optional[str] = None
    checkpoint: Optional[str] = None
