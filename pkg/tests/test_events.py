import asyncio
import json
import threading

import pytest

from app.utils.events import EventBroadcaster


class TestEventBroadcaster:
    """Fan-out of server-sent events"""

    @pytest.mark.asyncio
    async def test_broadcast_reaches_subscribers(self):
        events = EventBroadcaster()
        first, second = events.subscribe(), events.subscribe()
        pending = [asyncio.create_task(first.__anext__()), asyncio.create_task(second.__anext__())]
        await asyncio.sleep(0)
        await events.broadcast({"step": 1}, "train_progress")
        received = await asyncio.gather(*pending)
        assert received == [{"event": "train_progress", "data": json.dumps({"step": 1})}] * 2
        await first.aclose()
        await second.aclose()
        assert not events.connections

    @pytest.mark.asyncio
    async def test_publish_from_worker_thread(self):
        events = EventBroadcaster()
        events.attach(asyncio.get_running_loop())
        stream = events.subscribe()
        pending = asyncio.create_task(stream.__anext__())
        await asyncio.sleep(0)
        worker = threading.Thread(target=events.publish, args=("done", "train_finished"))
        worker.start()
        worker.join()
        assert await asyncio.wait_for(pending, timeout=5) == {"event": "train_finished", "data": "done"}
        await stream.aclose()

    def test_publish_without_loop(self):
        assert EventBroadcaster().publish({"x": 1}) is False
