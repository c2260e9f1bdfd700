import time

import pytest
import numpy as np
from fastapi.testclient import TestClient
from pydantic import ValidationError

from app.data.synth import generate_object
from app.main import create_app
from app.models.params import CHECKPOINT_FORMAT
from app.routes.encoder import http_error
from app.schemas.keypoints import KeypointFileRecord, ObjectInstance
from app.utils.errors import ContractViolation
from app.utils.events import EventBroadcaster


def payload(obj):
    return KeypointFileRecord.from_object(obj).model_dump(mode="json")


@pytest.fixture
def client(tiny_params):
    with TestClient(create_app(tiny_params, EventBroadcaster())) as test_client:
        yield test_client


@pytest.fixture
def empty_client():
    with TestClient(create_app(None, EventBroadcaster())) as test_client:
        yield test_client


@pytest.fixture
def objects(tiny_synth):
    return [generate_object(seed, tiny_synth, 8, frame_id=seed) for seed in range(3)]


class TestService:
    """HTTP endpoints"""

    def test_health(self, client, empty_client):
        assert client.get("/health").json() == {"status": "healthy", "model_loaded": True}
        assert empty_client.get("/health").json()["model_loaded"] is False

    def test_encode(self, client, objects):
        response = client.post("/api/v1/encode", json={"objects": [payload(obj) for obj in objects]})
        assert response.status_code == 200
        data = response.json()
        assert data["n_o"] == 16
        assert [d["object_id"] for d in data["descriptors"]] == [obj.object_id for obj in objects]
        for descriptor in data["descriptors"]:
            assert abs(np.linalg.norm(descriptor["descriptor"]) - 1.0) < 1e-6

    def test_encode_without_model(self, empty_client, objects):
        response = empty_client.post("/api/v1/encode", json={"objects": [payload(objects[0])]})
        assert response.status_code == 503

    def test_encode_width_mismatch(self, client, tiny_synth):
        narrow = generate_object(1, tiny_synth, 5)
        response = client.post("/api/v1/encode", json={"objects": [payload(narrow)]})
        assert response.status_code == 422
        assert "descriptor width 5" in response.json()["detail"]

    def test_encode_rejects_empty(self, client):
        assert client.post("/api/v1/encode", json={"objects": []}).status_code == 422

    def test_match(self, client, objects):
        response = client.post("/api/v1/match", json={
            "frame_a": [payload(objects[0])],
            "frame_b": [payload(objects[0]), payload(objects[1])],
            "sim_threshold": 0.5,
        })
        assert response.status_code == 200
        data = response.json()
        pairs = [(m["object_a"], m["object_b"]) for m in data["matches"]]
        assert (objects[0].object_id, objects[0].object_id) in pairs
        assert data["frame_similarity"] == pytest.approx(sum(m["score"] for m in data["matches"]))

    def test_match_empty_frame(self, client, objects):
        response = client.post("/api/v1/match", json={"frame_a": [], "frame_b": [payload(objects[0])]})
        assert response.json() == {"matches": [], "frame_similarity": 0.0}

    def test_database_and_relocalize(self, client, objects):
        for obj in objects[:2]:
            response = client.post("/api/v1/database", json={"frame": [payload(obj)]})
            assert response.status_code == 200
        assert response.json() == {"added": 1, "records": 2, "frames": 2}

        query = objects[1].model_copy(update={"frame_id": 50})
        response = client.post("/api/v1/relocalize", json={"frame": [payload(query)], "top_n": 5})
        ranked = response.json()["ranked"]
        assert len(ranked) == 2
        assert ranked[0]["frame_id"] == objects[1].frame_id

    def test_duplicate_database_record(self, client, objects):
        client.post("/api/v1/database", json={"frame": [payload(objects[0])]})
        response = client.post("/api/v1/database", json={"frame": [payload(objects[0])]})
        assert response.status_code == 422

    def test_relocalize_empty_database(self, client, objects):
        response = client.post("/api/v1/relocalize", json={"frame": [payload(objects[0])]})
        assert response.status_code == 422

    def test_model_info(self, client, empty_client):
        data = client.get("/api/v1/model").json()
        assert data["format"] == CHECKPOINT_FORMAT
        assert data["num_values"] > 0
        assert empty_client.get("/api/v1/model").status_code == 503


class TestTrainingJob:
    def test_idle_status(self, empty_client):
        assert empty_client.get("/api/v1/train/status").json()["state"] == "idle"

    def test_background_training(self, empty_client, tiny_run_config, temp_dir):
        checkpoint = temp_dir / "served.ckpt"
        response = empty_client.post("/api/v1/train", json={
            "config": tiny_run_config.model_dump(mode="json"),
            "checkpoint_path": str(checkpoint),
        })
        assert response.status_code == 202

        status = response.json()
        deadline = time.monotonic() + 60
        while status["state"] == "running" and time.monotonic() < deadline:
            time.sleep(0.05)
            status = empty_client.get("/api/v1/train/status").json()

        assert status["state"] == "finished"
        assert status["step"] == tiny_run_config.train.steps
        assert status["checkpoint"] == str(checkpoint)
        assert checkpoint.exists()
        assert empty_client.get("/health").json()["model_loaded"] is True


class TestErrorMapping:
    def test_validation_error_is_unprocessable(self):
        with pytest.raises(ValidationError) as exc_info:
            ObjectInstance(object_id="o", frame_id=0, bbox=(0.0, 0.0, 1.0, 1.0), keypoints=[])
        assert http_error(exc_info.value).status_code == 422

    def test_internal_value_error_is_server_error(self):
        assert http_error(ValueError("internal")).status_code == 500
        assert http_error(ContractViolation("bad input")).status_code == 422

    def test_keypoint_outside_box(self, client, objects):
        body = payload(objects[0])
        body["keypoints"][0]["xy"] = [body["bbox"][0] - 50.0, body["bbox"][1]]
        response = client.post("/api/v1/encode", json={"objects": [body]})
        assert response.status_code == 422

    def test_rejected_frame_leaves_database_unchanged(self, client, objects):
        client.post("/api/v1/database", json={"frame": [payload(objects[0])]})
        response = client.post("/api/v1/database", json={"frame": [payload(objects[1]), payload(objects[0])]})
        assert response.status_code == 422
        response = client.post("/api/v1/database", json={"frame": [payload(objects[2])]})
        assert response.json() == {"added": 1, "records": 2, "frames": 2}
