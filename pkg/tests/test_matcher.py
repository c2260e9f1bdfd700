import pytest
import numpy as np

from app.evaluation.matcher import (
    cosine_similarity, frame_similarity, match_objects, relocalize, similarity_matrix,
)
from app.models.database import STORE_HEADER, STORE_VERSION, DescriptorDatabase
from app.schemas.descriptors import DescriptorRecord
from app.utils.errors import ContractViolation, StorageError


def unit(vector):
    vector = np.asarray(vector, dtype=np.float64)
    return vector / np.linalg.norm(vector)


def record(object_id, frame_id, vector):
    return DescriptorRecord(object_id=object_id, frame_id=frame_id, descriptor=unit(vector))


def random_frame(rng, frame_id, count, width=6, prefix="o"):
    return [record(f"{prefix}{k}", frame_id, rng.standard_normal(width)) for k in range(count)]


class TestCosine:
    def test_identical(self):
        v = unit([1.0, 2.0, 3.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(unit([1, 0]), unit([0, 1])) == 0.0

    def test_opposite(self):
        v = unit([1.0, -1.0])
        assert cosine_similarity(v, -v) == pytest.approx(-1.0)

    def test_clipped(self):
        v = np.array([1.0 + 1e-12, 0.0])
        assert cosine_similarity(v, v) == 1.0

    def test_unit_norm_required(self):
        with pytest.raises(ValueError):
            DescriptorRecord(object_id="a", frame_id=0, descriptor=[1.0, 1.0])


class TestMatchObjects:
    """Thresholded cross-frame matching"""

    def test_identical_frames(self, rng):
        frame = random_frame(rng, 0, 3)
        pairs = {(m.object_a, m.object_b) for m in match_objects(frame, frame, 0.99)}
        assert {("o0", "o0"), ("o1", "o1"), ("o2", "o2")} <= pairs
        assert match_objects(frame, frame, 1.01) == []

    def test_matches_brute_force(self, rng):
        frame_a = random_frame(rng, 0, 5, prefix="a")
        frame_b = random_frame(rng, 1, 4, prefix="b")
        for threshold in (-0.5, 0.0, 0.3):
            expected = [
                (a.object_id, b.object_id) for a in frame_a for b in frame_b
                if cosine_similarity(a.descriptor, b.descriptor) > threshold
            ]
            got = [(m.object_a, m.object_b) for m in match_objects(frame_a, frame_b, threshold)]
            assert got == expected

    def test_symmetric(self, rng):
        frame_a = random_frame(rng, 0, 5, prefix="a")
        frame_b = random_frame(rng, 1, 5, prefix="b")
        forward = {(m.object_a, m.object_b) for m in match_objects(frame_a, frame_b, 0.1)}
        backward = {(m.object_b, m.object_a) for m in match_objects(frame_b, frame_a, 0.1)}
        assert forward == backward

    def test_monotone_in_threshold(self, rng):
        frame_a = random_frame(rng, 0, 6, prefix="a")
        frame_b = random_frame(rng, 1, 6, prefix="b")
        counts = [len(match_objects(frame_a, frame_b, t)) for t in np.linspace(-1.0, 1.0, 9)]
        assert counts == sorted(counts, reverse=True)

    def test_threshold_is_strict(self):
        frame_a = [record("a", 0, [1.0, 0.0])]
        frame_b = [record("b", 1, [1.0, 0.0])]
        assert match_objects(frame_a, frame_b, 1.0) == []
        assert len(match_objects(frame_a, frame_b, 0.999)) == 1

    def test_no_one_to_one_constraint(self):
        frame_a = [record("a", 0, [1.0, 0.0])]
        frame_b = [record("b1", 1, [1.0, 0.05]), record("b2", 1, [1.0, -0.05])]
        assert len(match_objects(frame_a, frame_b, 0.9)) == 2
        assert len(match_objects(frame_a, frame_b, 0.9, mutual_nearest=True)) == 1

    def test_empty_frame(self, rng):
        assert match_objects([], random_frame(rng, 0, 2), 0.0) == []
        assert similarity_matrix([], random_frame(rng, 0, 2)).shape == (0, 2)

    def test_frame_similarity(self):
        frame_a = [record("a", 0, [1.0, 0.0]), record("b", 0, [0.0, 1.0])]
        frame_b = [record("c", 1, [0.6, 0.8])]
        assert frame_similarity(frame_a, frame_b, 0.5) == pytest.approx(0.6 + 0.8)
        assert frame_similarity(frame_a, frame_b, 0.7) == pytest.approx(0.8)


class TestRelocalize:
    def test_ranking_and_ties(self):
        db = DescriptorDatabase()
        db.add(record("x", 5, [1.0, 0.0]))
        db.add(record("y", 2, [1.0, 0.0]))
        db.add(record("z", 9, [0.0, 1.0]))
        ranked = relocalize([record("q", 0, [1.0, 0.0])], db, 0.5, top_n=3)
        assert [r.frame_id for r in ranked] == [2, 5, 9]
        assert [r.score for r in ranked] == pytest.approx([1.0, 1.0, 0.0])

    def test_top_n_truncates(self, rng):
        db = DescriptorDatabase()
        for frame_id in range(5):
            db.add_many(random_frame(rng, frame_id, 2, prefix=f"f{frame_id}-"))
        assert len(relocalize(random_frame(rng, 99, 2), db, 0.0, top_n=3)) == 3
        assert len(relocalize(random_frame(rng, 99, 2), db, 0.0, top_n=50)) == 5

    def test_errors(self, rng):
        with pytest.raises(ContractViolation, match="empty database"):
            relocalize(random_frame(rng, 0, 1), DescriptorDatabase(), 0.5, 5)
        db = DescriptorDatabase()
        db.add(record("a", 0, [1.0, 0.0]))
        with pytest.raises(ContractViolation):
            relocalize([record("q", 1, [1.0, 0.0])], db, 0.5, 0)


class TestDescriptorDatabase:
    """Record bookkeeping and the binary store"""

    def test_duplicate_key_rejected(self):
        db = DescriptorDatabase()
        db.add(record("a", 0, [1.0, 0.0]))
        with pytest.raises(ContractViolation, match="already stored"):
            db.add(record("a", 0, [0.0, 1.0]))
        db.add(record("a", 1, [0.0, 1.0]))
        assert len(db) == 2

    def test_width_fixed_by_first_record(self):
        db = DescriptorDatabase()
        db.add(record("a", 0, [1.0, 0.0]))
        with pytest.raises(ContractViolation, match="width"):
            db.add(record("b", 0, [1.0, 0.0, 0.0]))

    def test_frames_sorted(self):
        db = DescriptorDatabase()
        for frame_id in (4, 1, 3):
            db.add(record(f"o{frame_id}", frame_id, [1.0, 1.0]))
        assert list(db.frames()) == [1, 3, 4]

    def test_store_round_trip(self, rng, temp_dir):
        db = DescriptorDatabase()
        db.add_many(random_frame(rng, 0, 3, width=8) + random_frame(rng, 7, 2, width=8, prefix="objé-"))
        first = db.save_store(temp_dir / "db.airc")
        loaded = DescriptorDatabase.load_store(first)
        assert loaded.n_o == 8
        for original, restored in zip(db.records(), loaded.records()):
            assert (original.object_id, original.frame_id) == (restored.object_id, restored.frame_id)
            np.testing.assert_allclose(original.descriptor, restored.descriptor, atol=1e-7)
        second = loaded.save_store(temp_dir / "again.airc")
        assert first.read_bytes() == second.read_bytes()

    def test_store_layout(self, temp_dir):
        db = DescriptorDatabase()
        db.add(DescriptorRecord(object_id="ab", frame_id=3, sequence_id="s1", descriptor=unit([1.0, 0.0])))
        data = db.save_store(temp_dir / "one.airc").read_bytes()
        assert data[:4] == b"AIRC"
        assert np.frombuffer(data, dtype=STORE_HEADER, count=1)[0]["version"] == STORE_VERSION
        body = data[STORE_HEADER.itemsize:]
        assert body[:8] == b"\x02\x00ab\x02\x00s1"
        assert np.frombuffer(body, dtype="<i8", count=1, offset=8)[0] == 3
        np.testing.assert_array_equal(np.frombuffer(body, dtype="<f4", offset=16), [1.0, 0.0])

    def test_reads_version_one(self, temp_dir):
        header = np.array([(b"AIRC", 1, 2, 1)], dtype=STORE_HEADER).tobytes()
        body = b"\x02\x00ab" + np.int64(3).astype("<i8").tobytes() + np.array([0.0, 1.0], dtype="<f4").tobytes()
        path = temp_dir / "old.airc"
        path.write_bytes(header + body)
        (loaded,) = DescriptorDatabase.load_store(path).records()
        assert (loaded.object_id, loaded.frame_id, loaded.sequence_id) == ("ab", 3, "default")

    def test_rejected_batch_adds_nothing(self):
        db = DescriptorDatabase()
        db.add(record("b", 0, [1.0, 0.0]))
        with pytest.raises(ContractViolation, match="already stored"):
            db.add_many([record("a", 0, [1.0, 0.0]), record("b", 0, [0.0, 1.0])])
        with pytest.raises(ContractViolation, match="already stored"):
            db.add_many([record("c", 1, [1.0, 0.0]), record("c", 1, [0.0, 1.0])])
        with pytest.raises(ContractViolation, match="width"):
            db.add_many([record("d", 2, [1.0, 0.0]), record("e", 2, [1.0, 0.0, 0.0])])
        assert [(r.object_id, r.frame_id) for r in db.records()] == [("b", 0)]

    def test_first_batch_fixes_width_only_when_accepted(self):
        db = DescriptorDatabase()
        with pytest.raises(ContractViolation):
            db.add_many([record("a", 0, [1.0, 0.0, 0.0]), record("b", 0, [1.0, 0.0])])
        assert db.n_o is None
        db.add(record("a", 0, [1.0, 0.0]))
        assert db.n_o == 2

    def test_sequences_kept_apart(self):
        db = DescriptorDatabase()
        for sequence_id in ("s1", "s0"):
            for frame_id in (1, 0):
                db.add(DescriptorRecord(object_id="o", frame_id=frame_id, sequence_id=sequence_id,
                                        descriptor=unit([1.0, 0.0])))
        sequences = db.sequences()
        assert list(sequences) == ["s1", "s0"]
        assert [[r.frame_id for r in frame] for frame in sequences["s1"]] == [[0], [1]]
        assert len(db.frames()[0]) == 2

    def test_empty_store(self, temp_dir):
        path = DescriptorDatabase().save_store(temp_dir / "empty.airc")
        assert len(DescriptorDatabase.load_store(path)) == 0

    def test_bad_magic(self, temp_dir):
        path = temp_dir / "bad.airc"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(StorageError, match="bad magic"):
            DescriptorDatabase.load_store(path)

    def test_truncated(self, temp_dir):
        db = DescriptorDatabase()
        db.add(record("a", 0, [1.0, 0.0]))
        data = db.save_store(temp_dir / "full.airc").read_bytes()
        path = temp_dir / "cut.airc"
        path.write_bytes(data[:-3])
        with pytest.raises(StorageError):
            DescriptorDatabase.load_store(path)

    def test_trailing_bytes(self, temp_dir):
        path = DescriptorDatabase().save_store(temp_dir / "tail.airc")
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(StorageError, match="trailing"):
            DescriptorDatabase.load_store(path)

    def test_missing_store(self, temp_dir):
        with pytest.raises(StorageError) as exc_info:
            DescriptorDatabase.load_store(temp_dir / "missing.airc")
        assert exc_info.value.exit_code == 3
