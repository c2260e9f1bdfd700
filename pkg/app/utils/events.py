from fastapi import Request
import asyncio
import json
from typing import AsyncGenerator, Optional


class EventBroadcaster:
    """
    Fan-out of server-sent events to every connected client

    ``broadcast`` runs on the event loop; ``publish`` may be called from any
    thread (the training worker uses it) and hands the message to the loop.
    """

    def __init__(self):
        self.connections = set()
        self._loop: Optional[asyncio.AbstractEventLoop] = None

    async def subscribe(self, request: Optional[Request] = None) -> AsyncGenerator:
        """Subscribe a client to receive events"""
        queue: asyncio.Queue = asyncio.Queue()
        self._loop = asyncio.get_running_loop()
        self.connections.add(queue)
        try:
            while True:
                message = await queue.get()
                yield message
        finally:
            self.connections.discard(queue)

    def _deliver(self, message: dict):
        for queue in list(self.connections):
            queue.put_nowait(message)

    async def broadcast(self, message, event_type: str = "message"):
        """Broadcast a message to all connected clients"""
        self._loop = asyncio.get_running_loop()
        self._deliver(_event(message, event_type))

    def attach(self, loop: asyncio.AbstractEventLoop):
        self._loop = loop

    def publish(self, message, event_type: str = "message") -> bool:
        """Thread-safe broadcast; returns False when no event loop is attached"""
        loop = self._loop
        if loop is None or loop.is_closed():
            return False
        loop.call_soon_threadsafe(self._deliver, _event(message, event_type))
        return True


def _event(message, event_type: str) -> dict:
    data = message if isinstance(message, str) else json.dumps(message, sort_keys=True)
    return {"event": event_type, "data": data}


# Global broadcaster instance
broadcaster = EventBroadcaster()
