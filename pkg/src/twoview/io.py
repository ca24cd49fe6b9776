"""Little-endian binary formats for features, matches, masks and score maps.

Layouts (all integers unsigned, all reals float32):

* features ``TVGF``: version u16, count u32, dim u16, then count x (x, y, score),
  then the count x dim descriptor block.
* matches ``TVGM``: version u16, count u32, then count x (index_a u32, index_b u32,
  confidence f32).
* mask ``TVGK``: width u32, height u32, then width*height class bytes, row-major.
* score map ``TVGS``: width u32, height u32, then width*height f32, row-major.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import DuplicatePair, IndexOutOfRange, ParseError
from .types import Keypoints, MatchSet

FORMAT_VERSION = 1
N_MASK_CLASSES = 6

_FEAT_HEAD = struct.Struct("<4sHIH")
_MATCH_HEAD = struct.Struct("<4sHI")
_GRID_HEAD = struct.Struct("<4sII")
_KP_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("score", "<f4")])
_MATCH_DTYPE = np.dtype([("a", "<u4"), ("b", "<u4"), ("conf", "<f4")])


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None


def _header(buf: bytes, head: struct.Struct, magic: bytes, what: str):
    if len(buf) < head.size:
        raise ParseError(f"truncated {what} header: {len(buf)} of {head.size} bytes", len(buf))
    fields = head.unpack_from(buf)
    if fields[0] != magic:
        raise ParseError(f"bad magic {fields[0]!r}, expected {magic!r}", 0)
    return fields[1:]


def _check_length(buf: bytes, expected: int, what: str) -> None:
    if len(buf) < expected:
        raise ParseError(f"truncated {what}: expected {expected} bytes, got {len(buf)}", len(buf))
    if len(buf) > expected:
        raise ParseError(f"{len(buf) - expected} trailing bytes after {what}", expected)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def encode_features(kps: Keypoints) -> bytes:
    n = len(kps)
    desc = kps.descriptors if kps.descriptors is not None else np.zeros((n, 0), np.float32)
    if desc.shape[1] > 0xFFFF:
        raise ValueError("descriptor dim does not fit in u16")
    rec = np.empty(n, dtype=_KP_DTYPE)
    rec["x"], rec["y"], rec["score"] = kps.xy[:, 0], kps.xy[:, 1], kps.scores
    return (_FEAT_HEAD.pack(b"TVGF", FORMAT_VERSION, n, desc.shape[1]) + rec.tobytes()
            + np.ascontiguousarray(desc, dtype="<f4").tobytes())


def decode_features(buf: bytes) -> Keypoints:
    version, n, dim = _header(buf, _FEAT_HEAD, b"TVGF", "feature")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported feature file version {version}", 4)
    off = _FEAT_HEAD.size
    _check_length(buf, off + n * _KP_DTYPE.itemsize + n * dim * 4, "feature file")
    rec = np.frombuffer(buf, dtype=_KP_DTYPE, count=n, offset=off)
    desc = np.frombuffer(buf, dtype="<f4", count=n * dim, offset=off + n * _KP_DTYPE.itemsize)
    xy = np.column_stack([rec["x"], rec["y"]]).astype(np.float64)
    if not np.isfinite(xy).all() or not np.isfinite(rec["score"]).all():
        bad = int(np.flatnonzero(~(np.isfinite(xy).all(axis=1) & np.isfinite(rec["score"])))[0])
        raise ParseError(f"non-finite keypoint {bad}", off + bad * _KP_DTYPE.itemsize)
    return Keypoints(xy, rec["score"].astype(np.float64),
                     desc.reshape(n, dim).astype(np.float32) if dim else None)


def write_features(path, kps: Keypoints) -> None:
    _atomic_write(path, encode_features(kps))


def read_features(path) -> Keypoints:
    return decode_features(_read(path))


# ---------------------------------------------------------------------------
# matches
# ---------------------------------------------------------------------------

def encode_matches(ms: MatchSet) -> bytes:
    rec = np.empty(len(ms), dtype=_MATCH_DTYPE)
    rec["a"], rec["b"], rec["conf"] = ms.idx_a, ms.idx_b, ms.confidence
    return _MATCH_HEAD.pack(b"TVGM", FORMAT_VERSION, len(ms)) + rec.tobytes()


def decode_matches(buf: bytes, n_a: int | None = None, n_b: int | None = None) -> MatchSet:
    version, n = _header(buf, _MATCH_HEAD, b"TVGM", "match")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported match file version {version}", 4)
    off = _MATCH_HEAD.size
    _check_length(buf, off + n * _MATCH_DTYPE.itemsize, "match file")
    rec = np.frombuffer(buf, dtype=_MATCH_DTYPE, count=n, offset=off)
    a, b = rec["a"].astype(np.int64), rec["b"].astype(np.int64)
    conf = rec["conf"].astype(np.float64)
    row_off = lambda r: off + r * _MATCH_DTYPE.itemsize  # noqa: E731
    bad = np.flatnonzero(~((conf >= 0.0) & (conf <= 1.0)))
    if len(bad):
        r = int(bad[0])
        raise ParseError(f"row {r}: confidence {conf[r]} outside [0, 1]", row_off(r))
    for name, idx, limit in (("index_a", a, n_a), ("index_b", b, n_b)):
        if limit is not None:
            bad = np.flatnonzero(idx >= limit)
            if len(bad):
                r = int(bad[0])
                raise IndexOutOfRange(f"row {r}: {name} {idx[r]} >= keypoint count {limit}", r)
    if n:
        order = np.lexsort((np.arange(n), b, a))
        dup = (a[order][1:] == a[order][:-1]) & (b[order][1:] == b[order][:-1])
        if dup.any():
            rows = order[1:][dup]
            r = int(rows.min())
            raise DuplicatePair(f"row {r}: duplicate pair ({a[r]}, {b[r]})", r)
    return MatchSet(a, b, conf)


def write_matches(path, ms: MatchSet) -> None:
    _atomic_write(path, encode_matches(ms))


def read_matches(path, n_a: int | None = None, n_b: int | None = None) -> MatchSet:
    return decode_matches(_read(path), n_a, n_b)


# ---------------------------------------------------------------------------
# masks and score maps
# ---------------------------------------------------------------------------

def encode_mask(mask) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if mask.size and (mask.min() < 0 or mask.max() >= N_MASK_CLASSES):
        raise ValueError("mask class codes must lie in 0..5")
    h, w = mask.shape
    return _GRID_HEAD.pack(b"TVGK", w, h) + mask.astype(np.uint8).tobytes()


def decode_mask(buf: bytes) -> np.ndarray:
    w, h = _header(buf, _GRID_HEAD, b"TVGK", "mask")
    off = _GRID_HEAD.size
    _check_length(buf, off + w * h, "mask file")
    mask = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=off).reshape(h, w)
    bad = np.flatnonzero(mask.reshape(-1) >= N_MASK_CLASSES)
    if len(bad):
        raise ParseError(f"unknown mask class {mask.reshape(-1)[bad[0]]}", off + int(bad[0]))
    return mask.copy()


def write_mask(path, mask) -> None:
    _atomic_write(path, encode_mask(mask))


def read_mask(path) -> np.ndarray:
    return decode_mask(_read(path))


def encode_score_map(score_map) -> bytes:
    s = np.asarray(score_map)
    if s.ndim != 2:
        raise ValueError("score map must be 2-D")
    h, w = s.shape
    return _GRID_HEAD.pack(b"TVGS", w, h) + np.ascontiguousarray(s, dtype="<f4").tobytes()


def decode_score_map(buf: bytes) -> np.ndarray:
    w, h = _header(buf, _GRID_HEAD, b"TVGS", "score map")
    off = _GRID_HEAD.size
    _check_length(buf, off + 4 * w * h, "score map file")
    s = np.frombuffer(buf, dtype="<f4", count=w * h, offset=off).reshape(h, w)
    if not np.isfinite(s).all():
        raise ParseError("non-finite score", off + 4 * int(np.flatnonzero(~np.isfinite(s.reshape(-1)))[0]))
    return s.astype(np.float64)


def write_score_map(path, score_map) -> None:
    _atomic_write(path, encode_score_map(score_map))


def read_score_map(path) -> np.ndarray:
    return decode_score_map(_read(path))


# ---------------------------------------------------------------------------
# structured text
# ---------------------------------------------------------------------------

def dump_json(obj) -> bytes:
    """Deterministic JSON bytes (sorted keys, fixed separators, trailing newline)."""
    return (json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n").encode()


def write_json(path, obj) -> None:
    _atomic_write(path, dump_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc.msg}", exc.pos) from None
