"""Word-to-phone upsampling and the ``.fmat`` feature-matrix file format.

File layout (all integers little-endian)::

    b"FMAT"  u8 version  u32 rows  u32 cols
    rows*cols float32, row-major
    u32 meta_len  meta_len bytes of UTF-8 "key=value\\n" lines
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence, Union

import numpy as np

from .errors import AlignmentError, CorruptFile, NonFiniteValue
from .textfront import PhoneSequence

MAGIC = b"FMAT"
VERSION = 1
_HEADER = struct.Struct("<4sBII")
_U32 = struct.Struct("<I")


@dataclass
class FeatureMatrix:
    data: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype="<f4")
        if data.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {data.shape}")
        self.data = data

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and self.meta == other.meta
        )


def upsample(word_feats: np.ndarray, phone_seq: Union[PhoneSequence, Sequence[int]]) -> np.ndarray:
    """Repeat each word row once per phone of that word; append an is-word flag.

    Phones that belong to no word (SIL, EOS) get an all-zero row.
    """
    word_index = np.asarray(
        phone_seq.word_index if isinstance(phone_seq, PhoneSequence) else phone_seq, dtype=np.int64
    )
    word_feats = np.asarray(word_feats, dtype=np.float32)
    n_words = len(np.unique(word_index[word_index >= 0]))
    if word_feats.ndim != 2:
        if word_feats.size == 0 and n_words == 0:
            word_feats = word_feats.reshape(0, 0)
        else:
            raise ValueError(f"word features must be 2-D, got shape {word_feats.shape}")
    if word_feats.shape[0] != n_words:
        raise AlignmentError(n_words, word_feats.shape[0])
    out = np.zeros((len(word_index), word_feats.shape[1] + 1), dtype=np.float32)
    is_word = word_index >= 0
    out[is_word, :-1] = word_feats[word_index[is_word]]
    out[is_word, -1] = 1.0
    return out


def _encode_meta(meta: Dict[str, str]) -> bytes:
    lines = []
    for key, value in meta.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"metadata entry not representable: {key!r}={value!r}")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def write_matrix(m: FeatureMatrix, path: Union[str, Path]) -> None:
    if not np.all(np.isfinite(m.data)):
        raise NonFiniteValue(f"matrix for {path} contains NaN or infinity")
    meta = _encode_meta(m.meta)
    payload = b"".join(
        [
            _HEADER.pack(MAGIC, VERSION, m.rows, m.cols),
            np.ascontiguousarray(m.data, dtype="<f4").tobytes(),
            _U32.pack(len(meta)),
            meta,
        ]
    )
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_matrix(path: Union[str, Path]) -> FeatureMatrix:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    nbytes = rows * cols * 4
    if len(raw) < offset + nbytes + _U32.size:
        raise CorruptFile(f"{path}: truncated data")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset).reshape(rows, cols).copy()
    offset += nbytes
    (meta_len,) = _U32.unpack_from(raw, offset)
    offset += _U32.size
    if len(raw) != offset + meta_len:
        raise CorruptFile(f"{path}: metadata length {meta_len} does not match file size")
    try:
        text = raw[offset:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptFile(f"{path}: metadata is not UTF-8") from exc
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptFile(f"{path}: bad metadata line {line!r}")
        meta[key] = value
    return FeatureMatrix(data, meta)
