"""
Key-point files: JSON lines, a header line followed by one object per line.
"""
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import structlog
from pydantic import ValidationError

from app.schemas.keypoints import KeypointFileHeader, KeypointFileRecord, ObjectInstance
from app.utils.errors import DataFormatError, StorageError

logger = structlog.get_logger(__name__)

KEYPOINT_FORMAT = "objcode-keypoints"
KEYPOINT_VERSION = 1

PathLike = Union[str, Path]


def _first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error.get("loc", ()))
    return f"{location}: {error['msg']}" if location else error["msg"]


def write_keypoints(path: PathLike, objects: Iterable[ObjectInstance], n_p: int) -> int:
    """
    Write objects to a key-point file

    Args:
        path: Destination file
        objects: Observations to store, in order
        n_p: Descriptor width declared in the header

    Returns:
        int: Number of records written
    """
    path = Path(path)
    header = KeypointFileHeader(format=KEYPOINT_FORMAT, version=KEYPOINT_VERSION, n_p=n_p)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(header.model_dump_json() + "\n")
            for obj in objects:
                width = obj.keypoints[0].descriptor.shape[0]
                if width != n_p:
                    raise DataFormatError(path, count + 2, f"descriptor width {width} != n_p {n_p}")
                handle.write(KeypointFileRecord.from_object(obj).model_dump_json() + "\n")
                count += 1
    except OSError as e:
        logger.error("keypoint_write_failed", path=str(path), error=str(e))
        raise StorageError(path, f"cannot write key-point file: {str(e)}")
    logger.info("keypoints_written", path=str(path), records=count, n_p=n_p)
    return count


def read_keypoints(path: PathLike) -> Tuple[int, List[ObjectInstance]]:
    """
    Read a key-point file

    Returns:
        tuple: (n_p, objects in file order)

    Raises:
        StorageError: If the file cannot be opened
        DataFormatError: On the first malformed line, naming its number
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        logger.error("keypoint_read_failed", path=str(path), error=str(e))
        raise StorageError(path, f"cannot read key-point file: {str(e)}")
    if not lines:
        raise DataFormatError(path, 1, "missing header line")

    try:
        header = KeypointFileHeader.model_validate_json(lines[0])
    except ValidationError as e:
        raise DataFormatError(path, 1, f"invalid header: {_first_error(e)}")
    if header.format != KEYPOINT_FORMAT or header.version != KEYPOINT_VERSION:
        raise DataFormatError(path, 1, f"unsupported format {header.format!r} version {header.version}")

    objects = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = KeypointFileRecord.model_validate_json(line)
            obj = record.to_object()
        except ValidationError as e:
            raise DataFormatError(path, number, _first_error(e))
        for entry in record.keypoints:
            if len(entry.desc) != header.n_p:
                raise DataFormatError(
                    path, number, f"descriptor width {len(entry.desc)} != n_p {header.n_p}"
                )
        objects.append(obj)
    logger.info("keypoints_read", path=str(path), records=len(objects), n_p=header.n_p)
    return header.n_p, objects


def group_frames(objects: Iterable[ObjectInstance]) -> Dict[str, List[List[ObjectInstance]]]:
    """
    Group observations into sequences of frames

    Returns:
        dict: sequence_id -> frames ordered by frame_id, each frame in file order
    """
    sequences: Dict[str, Dict[int, List[ObjectInstance]]] = defaultdict(lambda: defaultdict(list))
    for obj in objects:
        sequences[obj.sequence_id][obj.frame_id].append(obj)
    return {
        sequence_id: [frames[frame_id] for frame_id in sorted(frames)]
        for sequence_id, frames in sequences.items()
    }
