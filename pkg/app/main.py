from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from sse_starlette.sse import EventSourceResponse
import structlog

from app.config import settings
from app.models.params import ModelParams
from app.routes import encoder
from app.routes.encoder import ServiceState
from app.utils.events import EventBroadcaster, broadcaster

"""
FastAPI application factory and configuration
"""

logger = structlog.get_logger()


def create_app(params: Optional[ModelParams] = None, events: Optional[EventBroadcaster] = None) -> FastAPI:
    """
    Build the HTTP service

    Args:
        params (ModelParams | None): Model to serve; loaded from
            settings.CHECKPOINT_PATH at startup when omitted
        events (EventBroadcaster | None): Broadcaster behind /stream, the shared one by default

    Returns:
        FastAPI: Configured application
    """

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state = app.state.service
        if state.params is None and settings.CHECKPOINT_PATH:
            state.use_params(ModelParams.load(settings.CHECKPOINT_PATH))
        logger.info("service_started", model_loaded=state.params is not None)
        yield
        if state.job:
            state.job.stop()
            state.job.join(timeout=5.0)
        logger.info("service_stopped")

    app = FastAPI(
        title="py_objcode",
        description="Object descriptor encoding, matching and relocalization",
        version="1.0.0",
        docs_url="/",
        redoc_url="/redoc",
        openapi_url="/openapi.json",
        lifespan=lifespan,
    )
    app.state.service = ServiceState(params, events or broadcaster)

    # Configure CORS
    app.add_middleware(
        CORSMiddleware,
        allow_origins=settings.CORS_ORIGINS,
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    # Include routers
    app.include_router(encoder.router, prefix=settings.API_V1_STR, tags=["encoder"])

    @app.get("/health", tags=["health"])
    async def health_check():
        """
        Health check endpoint

        Returns:
            dict: Status of the application
        """
        return {"status": "healthy", "model_loaded": app.state.service.params is not None}

    @app.get("/stream")
    async def stream_events(request: Request):
        """Server-Sent Events endpoint for training progress"""
        return EventSourceResponse(
            app.state.service.events.subscribe(request),
            media_type="text/event-stream"
        )

    return app


app = create_app()
