"""
Run Store Module for the Wigner Pushforward Solver

This module is the persistence layer of a run directory: the versioned binary
array container used for checkpoints and grid fields, the append-only metrics
CSV, sample and sweep tables, and JSON reports. Every whole-file write goes
through a temporary file in the same directory followed by os.replace.
"""

import io
import json
import logging
import os
import struct
import tempfile
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from oracle import GridField
from phase_core import WignerError


class CheckpointFormatError(WignerError):
    """Raised when a container file is truncated, foreign or of an unknown version."""
    pass


MAGIC = b"WGNR"
FORMAT_VERSION = 1
CSV_FLOAT_FORMAT = "%.17g"


def encode_container(arrays: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None) -> bytes:
    """
    Serialize named float64 arrays.

    Layout: magic, uint32 version, uint32 header length, JSON header (array
    names and shapes plus metadata), then the arrays as row-major
    little-endian float64 in header order. Arrays are written sorted by name,
    so equal contents always encode to equal bytes.
    """
    entries = []
    payload = io.BytesIO()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.write(arr.astype("<f8", copy=False).tobytes(order="C"))
    header = json.dumps({"arrays": entries, "metadata": metadata or {}}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + payload.getvalue()


def decode_container(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointFormatError("not a solver container (bad magic)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported container version {version}")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"corrupt container header: {e}") from e

    arrays = {}
    offset = 12 + header_len
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointFormatError(f"container truncated inside array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointFormatError("trailing bytes after the last array")
    return arrays, header.get("metadata", {})


class RunStore:
    """
    Manages the files of one run directory.
    """

    def __init__(self, out_dir: str):
        """
        Initialize the Run Store, creating the directory layout if needed.
        """
        self.out_dir = out_dir
        self.logger = logging.getLogger('RunStore')
        os.makedirs(self.checkpoint_dir, exist_ok=True)

    @property
    def checkpoint_dir(self) -> str:
        return os.path.join(self.out_dir, "checkpoints")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _atomic_write(self, path: str, data: bytes) -> str:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_path, path)
        except Exception:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        return path

    # --- containers ---

    def write_container(self, path: str, arrays: Dict[str, np.ndarray],
                        metadata: Optional[Dict[str, Any]] = None) -> str:
        return self._atomic_write(path, encode_container(arrays, metadata))

    @staticmethod
    def read_container(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        try:
            with open(path, "rb") as handle:
                blob = handle.read()
        except OSError as e:
            error_msg = f"Cannot read container {path}: {e}"
            logging.getLogger('RunStore').error(error_msg)
            raise CheckpointFormatError(error_msg) from e
        return decode_container(blob)

    def save_checkpoint(self, name: str, arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> str:
        path = os.path.join(self.checkpoint_dir, f"{name}.wgnr")
        self.write_container(path, arrays, metadata)
        self.logger.info(f"Checkpoint written: {path}")
        return path

    def load_checkpoint(self, name_or_path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        path = name_or_path if os.path.exists(name_or_path) else \
            os.path.join(self.checkpoint_dir, f"{name_or_path}.wgnr")
        return self.read_container(path)

    # --- tables and reports ---

    def append_metrics(self, row: Dict[str, Any], filename: str = "metrics.csv") -> None:
        """Append one row; the header is written with the first row only."""
        path = self.path(filename)
        exists = os.path.exists(path) and os.path.getsize(path) > 0
        frame = pd.DataFrame([row])
        if exists:
            columns = pd.read_csv(path, nrows=0).columns.tolist()
            frame = frame.reindex(columns=columns)
        frame.to_csv(path, mode="a", header=not exists, index=False, float_format=CSV_FLOAT_FORMAT)

    def write_table(self, frame: pd.DataFrame, filename: str) -> str:
        text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT)
        return self._atomic_write(self.path(filename), text.encode("utf-8"))

    def read_table(self, filename: str) -> pd.DataFrame:
        return pd.read_csv(self.path(filename))

    def write_json(self, report: Dict[str, Any], filename: str) -> str:
        text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
        return self._atomic_write(self.path(filename), (text + "\n").encode("utf-8"))

    def read_json(self, filename: str) -> Dict[str, Any]:
        with open(self.path(filename), "r", encoding="utf-8") as handle:
            return json.load(handle)

    # --- grid fields ---

    def save_grid_field(self, field: GridField, name: str) -> str:
        """Binary container (x, p, values) plus a long-format CSV for plotting."""
        path = self.write_container(self.path(f"{name}.grid"),
                                    {"x": field.x, "p": field.p, "values": field.values},
                                    {"kind": "grid_field", "n_x": int(field.x.size), "n_p": int(field.p.size)})
        xx, pp = field.mesh()
        frame = pd.DataFrame({"x": xx.ravel(), "p": pp.ravel(), "f": field.values.ravel()})
        self.write_table(frame, f"{name}.csv")
        return path

    def load_grid_field(self, name: str) -> GridField:
        arrays, metadata = self.read_container(self.path(f"{name}.grid"))
        if metadata.get("kind") != "grid_field":
            raise CheckpointFormatError(f"{name} is not a grid field container")
        return GridField(arrays["x"], arrays["p"], arrays["values"])


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
