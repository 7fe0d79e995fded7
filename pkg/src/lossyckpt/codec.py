"""Error-bounded lossy compression of float64 arrays, with lossless and identity baselines.

The lossy codec works on the grid ``v = ±2**(c + q*s)``. Rounding ``log2|v|``
to the nearest grid point, spaced ``s = 2*log2(1+eb)*0.999`` apart, keeps
every element within ``eb`` of its original value in relative terms, which is
a quantization bin of width proportional to ``|v|``. The integer grid indices are then predicted from
their already-coded neighbours (order 1 or order 2, chosen per block), the
residual codes are zigzagged, byte-shuffled and deflated.

Every frame is self-describing::

    magic "LCKP" | u8 version | u8 codec id | u64 count | f64 eb | u32 crc32 | payload
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFrameError, UnknownCodecError
from .kernels import predict_codes, reconstruct

MAGIC = b"LCKP"
VERSION = 1
IDENTITY, LOSSLESS, LOSSY_REL = 0, 1, 2
CODEC_NAMES = {IDENTITY: "identity", LOSSLESS: "lossless", LOSSY_REL: "lossy"}
HEADER = struct.Struct("<4sBBQdI")

# elements this small are stored verbatim: a relative bound is unreachable at 0
EXACT_FLOOR = 1e-300
BLOCK = 128  # 1 KiB of float64 per predictor-order decision
ZLIB_LEVEL = 9

# lossless payload backends (first payload byte)
_RAW_ZLIB, _SHUFFLE_ZLIB = 0, 1
_LOSSY_BODY = struct.Struct("<QdBH")  # exceptions, grid phase, code width, block


@dataclass(frozen=True)
class CodecSpec:
    """Which codec to apply. ``eb`` is the pointwise relative bound of ``lossy``."""

    kind: str = "identity"
    eb: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "lossless", "lossy"):
            raise ValueError(f"unknown codec kind {self.kind!r}")
        if self.kind == "lossy":
            if not 0.0 < self.eb < 1.0:
                raise ValueError(f"lossy error bound must lie in (0, 1), got {self.eb}")
        elif self.eb != 0.0:
            raise ValueError(f"{self.kind} codec takes no error bound")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def lossless(cls):
        return cls("lossless")

    @classmethod
    def lossy(cls, eb):
        return cls("lossy", float(eb))

    @classmethod
    def parse(cls, text: str) -> "CodecSpec":
        """``identity``, ``lossless`` or ``lossy:<eb>``."""
        name, _, arg = text.strip().partition(":")
        if name == "lossy":
            try:
                return cls.lossy(float(arg))
            except ValueError as exc:
                raise ValueError(f"bad codec {text!r}: {exc}") from None
        if arg:
            raise ValueError(f"codec {name!r} takes no argument")
        return cls(name)

    @property
    def codec_id(self) -> int:
        return {"identity": IDENTITY, "lossless": LOSSLESS, "lossy": LOSSY_REL}[self.kind]

    def __str__(self):
        return f"lossy:{self.eb:g}" if self.kind == "lossy" else self.kind


@dataclass(frozen=True)
class CompressedFrame:
    codec_id: int
    count: int
    eb: float
    payload: bytes
    checksum: int

    def to_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, VERSION, self.codec_id, self.count, self.eb,
                           self.checksum) + self.payload

    @property
    def nbytes(self) -> int:
        return HEADER.size + len(self.payload)

    @classmethod
    def from_bytes(cls, buf) -> "CompressedFrame":
        buf = bytes(buf)
        if len(buf) < HEADER.size:
            raise CorruptFrameError(f"frame of {len(buf)} bytes is shorter than its header")
        magic, version, codec_id, count, eb, crc = HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise CorruptFrameError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CorruptFrameError(f"unsupported frame version {version}")
        if codec_id not in CODEC_NAMES:
            raise UnknownCodecError(f"unknown codec id {codec_id}")
        payload = buf[HEADER.size:]
        if zlib.crc32(payload) != crc:
            raise CorruptFrameError("payload checksum mismatch")
        return cls(codec_id, count, eb, payload, crc)


def _as_data(data) -> np.ndarray:
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot compress NaN or Inf")
    return v


def _shuffle(arr: np.ndarray) -> bytes:
    w = arr.dtype.itemsize
    return arr.view(np.uint8).reshape(-1, w).T.tobytes()


def _unshuffle(buf, dtype, n) -> np.ndarray:
    w = np.dtype(dtype).itemsize
    raw = np.frombuffer(buf, dtype=np.uint8, count=n * w).reshape(w, n).T
    return np.ascontiguousarray(raw).view(dtype).reshape(n)


def _step(eb: float) -> float:
    return 2.0 * np.log2(1.0 + eb) * 0.999


def _grid_values(q, negative, s, phase):
    # near the largest double a grid point can overflow; such elements fail
    # the bound check and are stored exactly
    with np.errstate(over="ignore"):
        mag = np.exp2(phase + q.astype(np.float64) * s)
    return np.where(negative, -mag, mag)


def _encode_lossy(v: np.ndarray, eb: float) -> bytes:
    n = v.shape[0]
    s = _step(eb)
    mag = np.abs(v)
    small = mag < EXACT_FLOOR
    logs = np.log2(mag[~small])
    # the phase c centres the first element in its bin; a fixed phase would
    # make values near powers of two (like a solution of all ones) snap exactly
    phase = float(logs[0] - s * np.rint(logs[0] / s)) if logs.size else 0.0
    q = np.zeros(n, dtype=np.int64)
    q[~small] = np.rint((logs - phase) / s).astype(np.int64)
    negative = np.signbit(v)
    rec = _grid_values(q, negative, s, phase)
    exact = small | ~(np.abs(v - rec) <= eb * mag)

    if exact.any():
        # carry the last grid index through exact elements so they cost ~0 codes
        pos = np.where(exact, -1, np.arange(n))
        np.maximum.accumulate(pos, out=pos)
        q = np.where(pos >= 0, q[np.maximum(pos, 0)], 0)

    codes, orders = predict_codes(q, BLOCK)
    zig = ((codes << 1) ^ (codes >> 63)).view(np.uint64)
    top = int(zig.max()) if n else 0
    dtype = next(t for t in (np.uint8, np.uint16, np.uint32, np.uint64)
                 if top <= np.iinfo(t).max)
    exc = np.flatnonzero(exact)
    exc_gaps = np.diff(exc, prepend=0).astype(np.uint64)

    body = b"".join([
        _LOSSY_BODY.pack(exc.size, phase, np.dtype(dtype).itemsize, BLOCK),
        np.packbits(orders == 2).tobytes(),
        np.packbits(negative & ~exact).tobytes(),
        _shuffle(exc_gaps),
        _shuffle(v[exact]),
        _shuffle(zig.astype(dtype)),
    ])
    return zlib.compress(body, ZLIB_LEVEL)


def _decode_lossy(payload: bytes, n: int, eb: float) -> np.ndarray:
    body = zlib.decompress(payload)
    nexc, phase, width, block = _LOSSY_BODY.unpack_from(body)
    dtype = {1: np.uint8, 2: np.uint16, 4: np.uint32, 8: np.uint64}[width]
    nblocks = (n + block - 1) // block
    off = _LOSSY_BODY.size
    sizes = [(nblocks + 7) // 8, (n + 7) // 8, 8 * nexc, 8 * nexc, width * n]
    if off + sum(sizes) != len(body):
        raise CorruptFrameError("lossy payload has inconsistent section sizes")
    parts = []
    for size in sizes:
        parts.append(body[off:off + size])
        off += size
    orders = np.unpackbits(np.frombuffer(parts[0], np.uint8), count=nblocks).astype(np.uint8) + 1
    negative = np.unpackbits(np.frombuffer(parts[1], np.uint8), count=n).astype(bool)
    exc = np.cumsum(_unshuffle(parts[2], np.uint64, nexc)).astype(np.int64)
    exc_vals = _unshuffle(parts[3], np.float64, nexc)
    zig = _unshuffle(parts[4], dtype, n).astype(np.uint64)
    codes = ((zig >> np.uint64(1)) ^ (np.uint64(0) - (zig & np.uint64(1)))).view(np.int64)
    q = reconstruct(codes, orders, block)
    out = _grid_values(q, negative, _step(eb), phase)
    if nexc:
        if exc[-1] >= n:
            raise CorruptFrameError("exception index out of range")
        out[exc] = exc_vals
    return out


def _encode_lossless(v: np.ndarray) -> bytes:
    return bytes([_SHUFFLE_ZLIB]) + zlib.compress(_shuffle(v), ZLIB_LEVEL)


def _decode_lossless(payload: bytes, n: int) -> np.ndarray:
    if not payload:
        raise CorruptFrameError("empty lossless payload")
    backend, body = payload[0], zlib.decompress(payload[1:])
    if len(body) != 8 * n:
        raise CorruptFrameError("lossless payload length mismatch")
    if backend == _SHUFFLE_ZLIB:
        return _unshuffle(body, np.float64, n)
    if backend == _RAW_ZLIB:
        return np.frombuffer(body, dtype=np.float64).copy()
    raise UnknownCodecError(f"unknown lossless backend {backend}")


def compress(data, spec: CodecSpec) -> CompressedFrame:
    """Encode a finite float64 array; the frame is a pure function of (data, spec)."""
    v = _as_data(data)
    if spec.kind == "identity":
        payload = v.astype("<f8").tobytes()
    elif spec.kind == "lossless":
        payload = _encode_lossless(v)
    else:
        payload = _encode_lossy(v, spec.eb)
    return CompressedFrame(spec.codec_id, v.shape[0], spec.eb, payload, zlib.crc32(payload))


def decompress(frame) -> np.ndarray:
    """Decode a :class:`CompressedFrame` or its serialized bytes.

    Raises
    ------
    CorruptFrameError
        Checksum mismatch, truncation or malformed payload.
    UnknownCodecError
        Codec id not recognised.
    """
    if not isinstance(frame, CompressedFrame):
        frame = CompressedFrame.from_bytes(frame)
    elif zlib.crc32(frame.payload) != frame.checksum:
        raise CorruptFrameError("payload checksum mismatch")
    n = frame.count
    try:
        if frame.codec_id == IDENTITY:
            if len(frame.payload) != 8 * n:
                raise CorruptFrameError("identity payload length mismatch")
            return np.frombuffer(frame.payload, dtype="<f8").astype(np.float64)
        if frame.codec_id == LOSSLESS:
            return _decode_lossless(frame.payload, n)
        if frame.codec_id == LOSSY_REL:
            return _decode_lossy(frame.payload, n, frame.eb)
    except (zlib.error, struct.error, ValueError, KeyError) as exc:
        if isinstance(exc, CorruptFrameError):
            raise
        raise CorruptFrameError(f"malformed payload: {exc}") from exc
    raise UnknownCodecError(f"unknown codec id {frame.codec_id}")


def compression_ratio(frame: CompressedFrame) -> float:
    """Original bytes over payload bytes; 1 for an empty array."""
    if frame.count == 0:
        return 1.0
    return 8.0 * frame.count / max(len(frame.payload), 1)


def max_relative_error(original, restored) -> float:
    """Largest |v - v'| / |v| over elements above the exact-storage floor."""
    v = np.asarray(original, dtype=np.float64)
    w = np.asarray(restored, dtype=np.float64)
    mask = np.abs(v) >= EXACT_FLOOR
    if not mask.any():
        return float(np.max(np.abs(v - w), initial=0.0))
    return float(np.max(np.abs(v[mask] - w[mask]) / np.abs(v[mask])))


def bound_violations(original, restored, eb: float) -> int:
    """Elements breaking |v - v'| <= eb |v| (those below the floor must be exact)."""
    v = np.asarray(original, dtype=np.float64)
    w = np.asarray(restored, dtype=np.float64)
    small = np.abs(v) < EXACT_FLOOR
    bad = np.where(small, v != w, ~(np.abs(v - w) <= eb * np.abs(v)))
    return int(np.count_nonzero(bad))
