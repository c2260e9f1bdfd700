"""
In-memory descriptor database and its binary store file.

Store layout, all integers little-endian:

    header   magic b"AIRC" | uint32 version (2) | uint32 N_o | uint64 record count
    record   uint16 id length n | n bytes UTF-8 object_id
             | uint16 sequence length s | s bytes UTF-8 sequence_id
             | int64 frame_id | N_o float32

Records follow the header back to back in insertion order. Version 1 files
carry no sequence field; their records load into the "default" sequence.
"""
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import structlog

from app.schemas.descriptors import DescriptorRecord
from app.utils.errors import ContractViolation, StorageError

logger = structlog.get_logger(__name__)

STORE_MAGIC = b"AIRC"
STORE_VERSION = 2
READABLE_VERSIONS = (1, 2)
STORE_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("n_o", "<u4"), ("count", "<u8")])
MAX_ID_BYTES = np.iinfo(np.uint16).max


def record_key(record: DescriptorRecord) -> tuple:
    return record.sequence_id, record.object_id, record.frame_id


def _encode_text(text: str, what: str) -> bytes:
    data = text.encode("utf-8")
    if len(data) > MAX_ID_BYTES:
        raise ContractViolation(f"{what} of {len(data)} bytes is too long")
    return np.uint16(len(data)).astype("<u2").tobytes() + data


def _decode_text(buffer: bytes, offset: int) -> tuple:
    length = int(np.frombuffer(buffer, dtype="<u2", count=1, offset=offset)[0])
    offset += 2
    if offset + length > len(buffer):
        raise ValueError(f"string of {length} bytes runs past the end of the file")
    return buffer[offset:offset + length].decode("utf-8"), offset + length


class DescriptorDatabase:
    """
    Append-only collection of descriptor records indexed by frame

    A record is identified by (sequence_id, object_id, frame_id). Writers are
    serialised by a lock; readers work on snapshots.

    Args:
        n_o: Descriptor width; fixed by the first record when omitted
    """

    def __init__(self, n_o: Optional[int] = None):
        self.n_o = n_o
        self._records: List[DescriptorRecord] = []
        self._keys = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    def add(self, record: DescriptorRecord):
        self.add_many([record])

    def add_many(self, records: Iterable[DescriptorRecord]):
        """Append a batch of records; nothing is stored when any of them is rejected"""
        records = list(records)
        with self._lock:
            n_o = self._check(records)
            self.n_o = n_o
            for record in records:
                self._keys.add(record_key(record))
                self._records.append(record)

    def _check(self, records: List[DescriptorRecord]) -> Optional[int]:
        n_o = self.n_o
        batch_keys = set()
        for record in records:
            width = record.descriptor.shape[0]
            if n_o is None:
                n_o = width
            elif width != n_o:
                raise ContractViolation(f"descriptor width {width} does not match database width {n_o}")
            key = record_key(record)
            if key in self._keys or key in batch_keys:
                raise ContractViolation(
                    f"record for object {record.object_id!r} in frame {record.frame_id} "
                    f"of sequence {record.sequence_id!r} already stored"
                )
            batch_keys.add(key)
        return n_o

    def records(self) -> List[DescriptorRecord]:
        with self._lock:
            return list(self._records)

    def frames(self) -> Dict[int, List[DescriptorRecord]]:
        """frame_id -> records, frames in ascending id order, records in insertion order"""
        grouped: Dict[int, List[DescriptorRecord]] = {}
        for record in self.records():
            grouped.setdefault(record.frame_id, []).append(record)
        return OrderedDict((frame_id, grouped[frame_id]) for frame_id in sorted(grouped))

    def sequences(self) -> Dict[str, List[List[DescriptorRecord]]]:
        """
        sequence_id -> frames ordered by frame_id

        Sequences appear in order of their first record, records within a
        frame in insertion order.
        """
        grouped: Dict[str, Dict[int, List[DescriptorRecord]]] = {}
        for record in self.records():
            grouped.setdefault(record.sequence_id, {}).setdefault(record.frame_id, []).append(record)
        return {
            sequence_id: [frames[frame_id] for frame_id in sorted(frames)]
            for sequence_id, frames in grouped.items()
        }

    def save_store(self, path) -> Path:
        """Write every record to a binary store file"""
        path = Path(path)
        records = self.records()
        n_o = self.n_o or 0
        header = np.array([(STORE_MAGIC, STORE_VERSION, n_o, len(records))], dtype=STORE_HEADER)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("wb") as handle:
                handle.write(header.tobytes())
                for record in records:
                    handle.write(_encode_text(record.object_id, "object id"))
                    handle.write(_encode_text(record.sequence_id, "sequence id"))
                    handle.write(np.int64(record.frame_id).astype("<i8").tobytes())
                    handle.write(record.descriptor.astype("<f4").tobytes())
        except OSError as e:
            logger.error("store_write_failed", path=str(path), error=str(e))
            raise StorageError(path, f"cannot write descriptor store: {str(e)}")
        logger.info("store_saved", path=str(path), records=len(records), n_o=n_o)
        return path

    @classmethod
    def load_store(cls, path) -> "DescriptorDatabase":
        """Read a store file written by ``save_store``"""
        path = Path(path)
        try:
            buffer = path.read_bytes()
        except OSError as e:
            logger.error("store_read_failed", path=str(path), error=str(e))
            raise StorageError(path, f"cannot read descriptor store: {str(e)}")
        if len(buffer) < STORE_HEADER.itemsize:
            raise StorageError(path, "truncated store header")
        header = np.frombuffer(buffer, dtype=STORE_HEADER, count=1)[0]
        if bytes(header["magic"]) != STORE_MAGIC:
            raise StorageError(path, f"bad magic {bytes(header['magic'])!r}")
        version = int(header["version"])
        if version not in READABLE_VERSIONS:
            raise StorageError(path, f"unsupported store version {version}")

        n_o, count = int(header["n_o"]), int(header["count"])
        records = []
        offset = STORE_HEADER.itemsize
        try:
            for _ in range(count):
                object_id, offset = _decode_text(buffer, offset)
                sequence_id = "default"
                if version >= 2:
                    sequence_id, offset = _decode_text(buffer, offset)
                frame_id = int(np.frombuffer(buffer, dtype="<i8", count=1, offset=offset)[0])
                offset += 8
                descriptor = np.frombuffer(buffer, dtype="<f4", count=n_o, offset=offset)
                offset += 4 * n_o
                records.append(DescriptorRecord(
                    object_id=object_id, sequence_id=sequence_id, frame_id=frame_id,
                    descriptor=descriptor.astype(np.float64),
                ))
        except (ValueError, UnicodeDecodeError) as e:
            logger.error("store_read_failed", path=str(path), error=str(e))
            raise StorageError(path, f"corrupt descriptor store: {str(e)}")
        if offset != len(buffer):
            raise StorageError(path, f"{len(buffer) - offset} trailing bytes after {count} records")
        database = cls(n_o=n_o if n_o else None)
        database.add_many(records)
        logger.info("store_loaded", path=str(path), records=count, n_o=n_o, version=version)
        return database
