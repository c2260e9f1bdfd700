from fastapi import APIRouter, HTTPException, Request
import asyncio
import threading
from pathlib import Path
from typing import Optional

import structlog
from pydantic import ValidationError

from app.evaluation.matcher import frame_similarity, match_objects, relocalize
from app.evaluation.metrics import describe_frames
from app.models.database import DescriptorDatabase
from app.models.params import ModelParams
from app.schemas.api import (
    DatabaseRequest, DatabaseResponse, EncodedObject, EncodeRequest, EncodeResponse, MatchRequest,
    MatchResponse, RelocalizeRequest, RelocalizeResponse, TrainRequest, TrainStatus, to_objects,
)
from app.schemas.reports import TraceRow
from app.training.trainer import Trainer
from app.utils.errors import ContractViolation, DataFormatError, ObjcodeError
from app.utils.events import EventBroadcaster

router = APIRouter()
logger = structlog.get_logger()


class TrainingJob:
    """
    A training run on a worker thread

    Progress rows are published to the event broadcaster; on success the
    service switches to the trained parameters.
    """

    def __init__(self, state: "ServiceState", request: TrainRequest):
        self.state = state
        self.request = request
        self.status = TrainStatus(state="running", steps=request.config.train.steps)
        self.trainer: Optional[Trainer] = None
        self._thread = threading.Thread(target=self._run, name="training-job", daemon=True)

    def start(self):
        self._thread.start()

    def join(self, timeout: Optional[float] = None):
        self._thread.join(timeout)

    def stop(self):
        if self.trainer:
            self.trainer.stop_requested.set()

    def _progress(self, row: TraceRow):
        self.status = self.status.model_copy(update={"step": row.step + 1, "last": row})
        self.state.events.publish(row.model_dump(mode="json"), "train_progress")

    def _run(self):
        try:
            self.trainer = Trainer(self.request.config, progress=self._progress)
            result = self.trainer.run()
            checkpoint = None
            if self.request.checkpoint_path:
                checkpoint = str(result.params.save(Path(self.request.checkpoint_path)))
            self.state.use_params(result.params)
            self.status = self.status.model_copy(update={"state": "finished", "checkpoint": checkpoint})
            self.state.events.publish(self.status.model_dump(mode="json"), "train_finished")
        except Exception as e:
            logger.error("training_job_failed", error=str(e))
            self.status = self.status.model_copy(update={"state": "failed", "error": str(e)})
            self.state.events.publish(self.status.model_dump(mode="json"), "train_failed")


class ServiceState:
    """Parameters, descriptor database and training job shared by the routes"""

    def __init__(self, params: Optional[ModelParams], events: EventBroadcaster, chunk: int = 64):
        self.params = params
        self.events = events
        self.chunk = chunk
        self.database = DescriptorDatabase()
        self.job: Optional[TrainingJob] = None
        self._lock = threading.Lock()

    def use_params(self, params: ModelParams):
        with self._lock:
            self.params = params
            self.database = DescriptorDatabase()
        logger.info("service_params_replaced", n_o=params.config.n_o)

    def require_params(self) -> ModelParams:
        if self.params is None:
            raise HTTPException(status_code=503, detail="No model loaded")
        return self.params


def get_state(request: Request) -> ServiceState:
    return request.app.state.service


def http_error(e: Exception) -> HTTPException:
    """Map library errors onto HTTP status codes"""
    if isinstance(e, HTTPException):
        return e
    if isinstance(e, (ContractViolation, DataFormatError)):
        return HTTPException(status_code=422, detail=str(e))
    if isinstance(e, ObjcodeError):
        return HTTPException(status_code=500, detail=str(e))
    # nested objects are validated after the request body
    if isinstance(e, ValidationError):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=500, detail=str(e))


def _encode(state: ServiceState, records) -> list:
    params = state.require_params()
    return describe_frames([to_objects(records)], params, state.chunk)[0]


@router.post("/encode", response_model=EncodeResponse)
async def encode_objects(request: EncodeRequest, http_request: Request):
    """
    Encode object observations into unit-norm descriptors
    """
    state = get_state(http_request)
    try:
        records = await asyncio.to_thread(_encode, state, request.objects)
        return EncodeResponse(
            n_o=state.params.config.n_o,
            descriptors=[
                EncodedObject(object_id=r.object_id, frame_id=r.frame_id, descriptor=r.descriptor.tolist())
                for r in records
            ],
        )
    except Exception as e:
        logger.error("encode_failed", error=str(e))
        raise http_error(e)


@router.post("/match", response_model=MatchResponse)
async def match_frames(request: MatchRequest, http_request: Request):
    """
    Match the objects of two frames by thresholded cosine similarity
    """
    state = get_state(http_request)
    try:
        frame_a = await asyncio.to_thread(_encode, state, request.frame_a) if request.frame_a else []
        frame_b = await asyncio.to_thread(_encode, state, request.frame_b) if request.frame_b else []
        return MatchResponse(
            matches=match_objects(frame_a, frame_b, request.sim_threshold, request.mutual_nearest),
            frame_similarity=frame_similarity(frame_a, frame_b, request.sim_threshold),
        )
    except Exception as e:
        logger.error("match_failed", error=str(e))
        raise http_error(e)


@router.post("/database", response_model=DatabaseResponse)
async def add_frame(request: DatabaseRequest, http_request: Request):
    """
    Encode a frame and append its descriptors to the relocalization database
    """
    state = get_state(http_request)
    try:
        records = await asyncio.to_thread(_encode, state, request.frame)
        state.database.add_many(records)
        logger.info("database_frame_added", records=len(records), total=len(state.database))
        return DatabaseResponse(added=len(records), records=len(state.database),
                                frames=len(state.database.frames()))
    except Exception as e:
        logger.error("database_add_failed", error=str(e))
        raise http_error(e)


@router.post("/relocalize", response_model=RelocalizeResponse)
async def relocalize_frame(request: RelocalizeRequest, http_request: Request):
    """
    Rank database frames by accumulated object similarity to the query frame
    """
    state = get_state(http_request)
    try:
        query = await asyncio.to_thread(_encode, state, request.frame)
        return RelocalizeResponse(
            ranked=relocalize(query, state.database, request.sim_threshold, request.top_n)
        )
    except Exception as e:
        logger.error("relocalize_failed", error=str(e))
        raise http_error(e)


@router.get("/model")
async def model_info(http_request: Request):
    """
    Header of the loaded model: format, dimensions and parameter names
    """
    state = get_state(http_request)
    params = state.require_params()
    return {**params.header(), "num_values": params.num_values()}


@router.post("/train", response_model=TrainStatus, status_code=202)
async def start_training(request: TrainRequest, http_request: Request):
    """
    Start a background training run; progress streams on /stream
    """
    state = get_state(http_request)
    if state.job and state.job.status.state == "running":
        raise HTTPException(status_code=409, detail="A training run is already in progress")
    state.events.attach(asyncio.get_running_loop())
    state.job = TrainingJob(state, request)
    state.job.start()
    logger.info("training_job_started", steps=request.config.train.steps)
    return state.job.status


@router.get("/train/status", response_model=TrainStatus)
async def training_status(http_request: Request):
    """
    Status of the latest training run
    """
    state = get_state(http_request)
    return state.job.status if state.job else TrainStatus()
