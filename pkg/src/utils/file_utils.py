import hashlib
import io
import json
import os
import pathlib
import tempfile
import zipfile
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
import pandas as pd

from .logger import app_logger as logger


def ensure_directory(directory: str) -> None:
    """Ensure directory exists, create if it doesn't.
    
    Args:
        directory: Directory path
    """
    pathlib.Path(directory).mkdir(parents=True, exist_ok=True)


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write bytes to path via a temp file in the same directory and a rename.
    
    Args:
        path: Destination path
        data: File content
    """
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directory(directory)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def atomic_write_csv(path: str, frame: pd.DataFrame) -> None:
    """Write a DataFrame as CSV without the index, atomically."""
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.12g"))


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file."""
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()

# Array containers
#
# Layout of every .npz container written here:
#   format_version  int64 scalar
#   kind            unicode scalar naming the artifact type
#   header          unicode scalar holding a JSON object of scalar metadata
#   field_order     unicode array listing the array fields below, in order
#   <field>...      float64 / int64 arrays, one per name in field_order


CONTAINER_FORMAT_VERSION = 1

# fixed member timestamp so identical arrays give identical bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npz_bytes(fields: Mapping[str, np.ndarray]) -> bytes:
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, value in fields.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            with archive.open(info, "w", force_zip64=True) as member:
                np.lib.format.write_array(member, np.asanyarray(value), allow_pickle=False)
    return buffer.getvalue()


def save_container(
    path: str,
    kind: str,
    header: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray]
) -> None:
    """Save a versioned array container atomically.
    
    Args:
        path: Destination .npz path
        kind: Artifact type tag checked on load
        header: JSON-serializable scalar metadata
        arrays: Ordered mapping of field name to array
    """
    reserved = {"format_version", "kind", "header", "field_order"}
    clash = reserved.intersection(arrays)
    if clash:
        raise ValueError(f"Reserved container field names used: {sorted(clash)}")
    fields = {
        "format_version": np.int64(CONTAINER_FORMAT_VERSION),
        "kind": np.str_(kind),
        "header": np.str_(json.dumps(dict(header), sort_keys=True)),
        "field_order": np.array(list(arrays.keys()), dtype=np.str_),
    }
    fields.update({name: np.asarray(value) for name, value in arrays.items()})
    atomic_write_bytes(path, _npz_bytes(fields))
    logger.debug(f"Wrote {kind} container with {len(arrays)} fields to {path}")


def load_container(path: str, kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Load a container written by save_container.
    
    Args:
        path: Container path
        kind: Expected artifact type
        
    Returns:
        Tuple of (header dict, ordered dict of arrays)
    """
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CONTAINER_FORMAT_VERSION:
            raise ValueError(f"Unsupported container version {version} in {path}")
        found_kind = str(data["kind"])
        if found_kind != kind:
            raise ValueError(f"Expected a {kind} container, found {found_kind} in {path}")
        header = json.loads(str(data["header"]))
        field_order: List[str] = [str(name) for name in data["field_order"]]
        arrays = {name: np.array(data[name]) for name in field_order}
    return header, arrays
