"""Binary quadrature stream files.

Layout (all little-endian)::

    magic        4 bytes   b"PHQS"
    version      uint32    FORMAT_VERSION
    count        uint64    number of samples
    meta_len     uint32    length of the metadata blob
    metadata     meta_len bytes of UTF-8 JSON (the StateConfig)
    body         count float64 samples
"""
from __future__ import annotations

import json
import os
import struct
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import StreamCorruptionError
from .qstates import StateConfig

MAGIC = b"PHQS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")
READ_CHUNK = 1 << 20


def write_stream(path, chunks: Iterable[np.ndarray], count: int,
                 cfg: Optional[StateConfig] = None) -> None:
    meta = json.dumps(cfg.to_json() if cfg is not None else {}, sort_keys=True).encode()
    written = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, count, len(meta)))
        fh.write(meta)
        for chunk in chunks:
            body = np.ascontiguousarray(chunk, dtype="<f8")
            fh.write(body.tobytes())
            written += body.size
    if written != count:
        os.remove(path)
        raise StreamCorruptionError(f"wrote {written} samples but header declares {count}")


class StreamReader:
    """Validates the header on open; yields the body in bounded chunks."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "rb")
        try:
            raw = self._fh.read(_HEADER.size)
            if len(raw) < _HEADER.size:
                raise StreamCorruptionError(f"{path}: file too short for a stream header")
            magic, version, count, meta_len = _HEADER.unpack(raw)
            if magic != MAGIC:
                raise StreamCorruptionError(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise StreamCorruptionError(f"{path}: unsupported format version {version}")
            meta = self._fh.read(meta_len)
            if len(meta) != meta_len:
                raise StreamCorruptionError(f"{path}: truncated metadata")
            try:
                self.metadata = json.loads(meta.decode()) if meta_len else {}
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise StreamCorruptionError(f"{path}: metadata is not JSON") from exc
            self.count = count
            self.version = version
            self._body = _HEADER.size + meta_len
            size = os.fstat(self._fh.fileno()).st_size
            if size - self._body != 8 * count:
                raise StreamCorruptionError(
                    f"{path}: body holds {(size - self._body) / 8:g} samples, header declares {count}")
        except Exception:
            self._fh.close()
            raise

    @property
    def config(self) -> Optional[StateConfig]:
        return StateConfig.from_json(self.metadata) if self.metadata else None

    def iter_chunks(self, chunk: int = READ_CHUNK) -> Iterator[np.ndarray]:
        self._fh.seek(self._body)
        left = self.count
        while left:
            m = min(chunk, left)
            data = np.fromfile(self._fh, dtype="<f8", count=m)
            if data.size != m:
                raise StreamCorruptionError(f"{self.path}: body ended early")
            left -= m
            yield data.astype(np.float64, copy=False)

    def read_all(self) -> np.ndarray:
        return np.concatenate(list(self.iter_chunks())) if self.count else np.empty(0)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
