"""Binary container shared by recorded datasets and model parameter bundles.

Layout (little-endian):

    magic "IMDD" | u16 version | u8 kind | u8 scheme tag | u32 rows | u32 columns | u32 block_len
    float64 payload | u16 labels | u32 metadata length | UTF-8 JSON metadata

Datasets carry rows * columns * block_len floats and rows * columns labels. Models use rows = 1,
columns = parameter count, block_len = 0 and no labels.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from imdd_dsp.errors import DatasetFormatError, StorageError, TruncatedFileError, VersionMismatchError


logger = logging.getLogger(__name__)

MAGIC = b"IMDD"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIII")
_META_LEN = struct.Struct("<I")
_MAX_LABEL = np.iinfo(np.uint16).max


class FileKind(IntEnum):
    DATASET = 0
    MODEL = 1


@dataclass(frozen=True)
class StoredRecord:
    kind: FileKind
    scheme_tag: int
    rows: int
    columns: int
    block_len: int
    data: np.ndarray
    labels: np.ndarray | None
    meta: dict[str, Any]


def _float_count(kind: FileKind, rows: int, columns: int, block_len: int) -> int:
    return rows * columns * block_len if kind is FileKind.DATASET else rows * columns


def encode_record(record: StoredRecord) -> bytes:
    kind = FileKind(record.kind)
    data = np.ascontiguousarray(record.data, dtype="<f8").ravel()
    expected = _float_count(kind, record.rows, record.columns, record.block_len)
    if data.size != expected:
        raise StorageError(f"payload_size: {data.size} floats, header implies {expected}")
    parts = [
        _HEADER.pack(MAGIC, VERSION, int(kind), record.scheme_tag, record.rows, record.columns, record.block_len),
        data.tobytes(),
    ]
    if kind is FileKind.DATASET:
        labels = np.asarray(record.labels).ravel()
        if labels.size != record.rows * record.columns:
            raise StorageError(f"label_count: {labels.size} != {record.rows * record.columns}")
        if labels.size and (labels.min() < 0 or labels.max() > _MAX_LABEL):
            raise StorageError("labels_do_not_fit_u16")
        parts.append(labels.astype("<u2").tobytes())
    meta = json.dumps(record.meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts.append(_META_LEN.pack(len(meta)))
    parts.append(meta)
    return b"".join(parts)


def _take(buf: memoryview, offset: int, size: int, what: str) -> tuple[memoryview, int]:
    if offset + size > len(buf):
        raise TruncatedFileError(f"truncated_{what}: need {offset + size} bytes, have {len(buf)}")
    return buf[offset : offset + size], offset + size


def decode_record(raw: bytes) -> StoredRecord:
    buf = memoryview(raw)
    if len(buf) >= 4 and bytes(buf[:4]) != MAGIC:
        raise DatasetFormatError(f"bad_magic: {bytes(buf[:4])!r}")
    head, offset = _take(buf, 0, _HEADER.size, "header")
    magic, version, kind_raw, scheme_tag, rows, columns, block_len = _HEADER.unpack(head)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad_magic: {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported_version: file={version} supported={VERSION}")
    try:
        kind = FileKind(kind_raw)
    except ValueError as exc:
        raise DatasetFormatError(f"unknown_kind: {kind_raw}") from exc

    count = _float_count(kind, rows, columns, block_len)
    chunk, offset = _take(buf, offset, 8 * count, "payload")
    data = np.frombuffer(chunk, dtype="<f8").astype(np.float64)
    labels = None
    if kind is FileKind.DATASET:
        chunk, offset = _take(buf, offset, 2 * rows * columns, "labels")
        labels = np.frombuffer(chunk, dtype="<u2").astype(np.uint16).reshape(rows, columns)
        data = data.reshape(rows, columns * block_len)
    chunk, offset = _take(buf, offset, _META_LEN.size, "metadata_length")
    (meta_len,) = _META_LEN.unpack(chunk)
    chunk, offset = _take(buf, offset, meta_len, "metadata")
    if offset != len(buf):
        raise DatasetFormatError(f"trailing_bytes: {len(buf) - offset}")
    try:
        meta = json.loads(bytes(chunk).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"corrupt_metadata: {exc}") from exc
    return StoredRecord(kind, scheme_tag, rows, columns, block_len, data, labels, meta)


def write_record(record: StoredRecord, path: str | Path) -> Path:
    target = Path(path)
    if not target.parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {target.parent}")
    target.write_bytes(encode_record(record))
    logger.info("file_written path=%s kind=%s rows=%s columns=%s", target, record.kind.name.lower(), record.rows, record.columns)
    return target


def read_record(path: str | Path, *, expected_kind: FileKind | None = None) -> StoredRecord:
    source = Path(path)
    record = decode_record(source.read_bytes())
    if expected_kind is not None and record.kind is not expected_kind:
        raise DatasetFormatError(f"wrong_file_kind: {source} holds {record.kind.name.lower()}")
    return record


def write_dataset_file(path: str | Path, *, scheme_tag: int, d: np.ndarray, l: np.ndarray, block_len: int, meta: dict[str, Any]) -> Path:
    rows, columns = np.asarray(l).shape
    record = StoredRecord(FileKind.DATASET, scheme_tag, rows, columns, block_len, d, l, meta)
    return write_record(record, path)


def read_dataset_file(path: str | Path) -> StoredRecord:
    return read_record(path, expected_kind=FileKind.DATASET)


def write_model_file(path: str | Path, *, scheme_tag: int, params: np.ndarray, meta: dict[str, Any]) -> Path:
    flat = np.asarray(params, dtype=np.float64).ravel()
    record = StoredRecord(FileKind.MODEL, scheme_tag, 1, flat.size, 0, flat, None, meta)
    return write_record(record, path)


def read_model_file(path: str | Path) -> StoredRecord:
    return read_record(path, expected_kind=FileKind.MODEL)


def export_csv(matrix: np.ndarray, path: str | Path, *, header: list[str] | None = None) -> Path:
    target = Path(path)
    frame = pd.DataFrame(np.atleast_2d(matrix))
    if header is not None:
        frame.columns = header
    frame.to_csv(target, index=False, header=header is not None, float_format="%.17g")
    return target
