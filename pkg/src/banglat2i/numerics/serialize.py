"""Flat binary tensor files and index-mapped checkpoint archives.

Tensor file layout: magic "T2IT", version u16, rank u16, dims as u64
little-endian, then the values as 64-bit little-endian floats. An archive is
a directory of one tensor file per dotted parameter name plus ``index.json``
mapping names to files and shapes (the name avoids colliding with the run
manifest that owns each output directory).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import IoError

MAGIC = b"T2IT"
VERSION = 1


def save_tensor(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float64)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HH", VERSION, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write tensor file {path}: {exc}") from exc


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read tensor file {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise IoError(f"{path}: bad magic {blob[:4]!r}")
    version, rank = struct.unpack_from("<HH", blob, 4)
    if version != VERSION:
        raise IoError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{rank}Q", blob, 8)
    offset = 8 + 8 * rank
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.reshape(dims).copy()


def _name_to_file(name: str) -> str:
    return name.replace("/", "_") + ".t2it"


def save_archive(directory, tensors: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for name in sorted(tensors):
        fname = _name_to_file(name)
        save_tensor(directory / fname, tensors[name])
        index[name] = {"file": fname, "shape": list(np.asarray(tensors[name]).shape)}
    (directory / "index.json").write_text(
        json.dumps({"format": "t2it-archive", "version": VERSION, "tensors": index},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_archive(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise IoError(f"archive index not found: {index_path}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    out = {}
    for name, entry in index["tensors"].items():
        out[name] = load_tensor(directory / entry["file"])
    return out
