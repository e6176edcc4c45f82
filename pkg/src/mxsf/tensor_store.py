"""On-disk formats.

Dense tensor file::

    u32 LE   header length in bytes
    header   ASCII ``key=value`` lines: ``format=dense1``, ``dtype=f32``,
             ``rows``, ``cols``, ``count``
    payload  ``count`` IEEE-754 binary32 values, little-endian, row-major

MX block file (``.mxb``)::

    "MXB1"            magic
    u8                format id (0=INT8 1=E4M3 2=E5M2 3=E2M5 4=MXSF 5=E2M1 6=E2M3 7=E3M2)
    u16 LE, u16 LE    tile rows, tile cols
    u32 LE, u32 LE    logical rows, logical cols
    per block, row-major over the tile grid:
        u8            shared exponent + 127, or 0xFF for an all-zero block
        codes         row-major within the tile; 8-bit formats one byte per
                      code, narrower formats a little-endian bit stream
                      zero-padded to the next byte

Every block starts on a byte boundary.  Writing is canonical: loading a
file and saving it again reproduces the same bytes.
"""

from __future__ import annotations

import math
import os
import struct

import numpy as np

from .block_quant import QuantizedTensor, TileShape
from .errors import BadMagic, CorruptBlock, CorruptHeader, IoError, TruncatedPayload, UnknownFormatId
from .formats import FORMAT_IDS, ID_OF_FORMAT, ElementFormat
from .scalar_codec import code_dtype

MAGIC = b"MXB1"
ZERO_BLOCK_BYTE = 0xFF
S_E_BIAS = 127
_MXB_HEADER = struct.Struct("<4sBHHII")
MXB_HEADER_SIZE = _MXB_HEADER.size
_DENSE_KEYS = ("format", "dtype", "rows", "cols", "count")


def _read(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _write(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(str(exc)) from exc


# --- dense ------------------------------------------------------------------------


def dense_bytes(matrix) -> bytes:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    header = f"format=dense1\ndtype=f32\nrows={rows}\ncols={cols}\ncount={rows * cols}\n".encode("ascii")
    payload = arr.astype("<f4").tobytes()
    return struct.pack("<I", len(header)) + header + payload


def parse_dense(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise CorruptHeader("file shorter than the header length prefix")
    (hlen,) = struct.unpack_from("<I", data)
    if 4 + hlen > len(data):
        raise CorruptHeader("header length runs past end of file")
    try:
        lines = data[4 : 4 + hlen].decode("ascii").splitlines()
        fields = dict(line.split("=", 1) for line in lines if line)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptHeader(f"unreadable header: {exc}") from exc
    if any(k not in fields for k in _DENSE_KEYS) or fields["format"] != "dense1" or fields["dtype"] != "f32":
        raise CorruptHeader(f"bad header fields: {fields}")
    try:
        rows, cols, count = int(fields["rows"]), int(fields["cols"]), int(fields["count"])
    except ValueError as exc:
        raise CorruptHeader(str(exc)) from exc
    if rows < 0 or cols < 0 or rows * cols != count:
        raise CorruptHeader(f"dims {rows}x{cols} disagree with count {count}")
    payload = data[4 + hlen :]
    if len(payload) < 4 * count:
        raise TruncatedPayload(f"expected {4 * count} payload bytes, found {len(payload)}")
    if len(payload) > 4 * count:
        raise CorruptHeader(f"{len(payload) - 4 * count} trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(rows, cols)


def save_dense(path: str | os.PathLike, matrix) -> None:
    _write(path, dense_bytes(matrix))


def load_dense(path: str | os.PathLike) -> np.ndarray:
    return parse_dense(_read(path))


def import_raw(path: str | os.PathLike, delimiter: str | None = None) -> np.ndarray:
    """Read a whitespace- or ``delimiter``-separated text dump as a matrix."""
    try:
        arr = np.loadtxt(path, dtype=np.float64, delimiter=delimiter, ndmin=2)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except ValueError as exc:
        raise CorruptHeader(f"unparseable numeric dump: {exc}") from exc
    return arr


# --- MX blocks ---------------------------------------------------------------------------


def block_payload_size(fmt: ElementFormat, tile: TileShape) -> int:
    """Bytes of element codes per block (shared-exponent byte excluded)."""
    return math.ceil(fmt.width * tile.size / 8)


def mxb_size(q: QuantizedTensor) -> int:
    return MXB_HEADER_SIZE + q.n_blocks * (1 + block_payload_size(q.format, q.tile))


def _pack_codes(codes: np.ndarray, width: int) -> np.ndarray:
    """Pack ``(n_blocks, n)`` codes into per-block LSB-first bit streams."""
    if width == 8:
        return codes.astype(np.uint8)
    n_blocks, n = codes.shape
    bits = ((codes[..., None].astype(np.uint32) >> np.arange(width, dtype=np.uint32)) & 1).astype(np.uint8)
    bits = bits.reshape(n_blocks, n * width)
    pad = -bits.shape[1] % 8
    if pad:
        bits = np.concatenate([bits, np.zeros((n_blocks, pad), np.uint8)], axis=1)
    return np.packbits(bits, axis=1, bitorder="little")


def _unpack_codes(raw: np.ndarray, width: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``_pack_codes``; also returns the padding bits for validation."""
    if width == 8:
        return raw.astype(np.uint8), np.zeros((raw.shape[0], 0), np.uint8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    used = bits[:, : n * width].reshape(raw.shape[0], n, width).astype(np.uint32)
    codes = (used << np.arange(width, dtype=np.uint32)).sum(axis=-1)
    return codes, bits[:, n * width :]


def mxb_bytes(q: QuantizedTensor) -> bytes:
    q = q.materialize()
    fmt = q.format
    if fmt not in ID_OF_FORMAT:
        raise UnknownFormatId(f"{fmt} has no file-format id")
    if fmt.width > 8:
        raise UnknownFormatId(f"{fmt} is wider than 8 bits")
    rows, cols = q.base_dims
    header = _MXB_HEADER.pack(MAGIC, ID_OF_FORMAT[fmt], q.base_tile.rows, q.base_tile.cols, rows, cols)
    gr, gc = q.shared_exps.shape
    n_blocks = gr * gc
    se = q.shared_exps.reshape(n_blocks).astype(np.int64) + S_E_BIAS
    zero = q.zero_blocks.reshape(n_blocks)
    se = np.where(zero, ZERO_BLOCK_BYTE, se).astype(np.uint8)
    codes = np.where(zero[:, None], 0, q.codes.reshape(n_blocks, -1))
    payload = _pack_codes(codes, fmt.width)
    body = np.concatenate([se[:, None], payload], axis=1)
    return header + body.tobytes()


def parse_mxb(data: bytes) -> QuantizedTensor:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {data[:4]!r}")
    if len(data) < MXB_HEADER_SIZE:
        raise CorruptBlock("file ends inside the header")
    _, fid, tr, tc, rows, cols = _MXB_HEADER.unpack_from(data)
    if fid not in FORMAT_IDS:
        raise UnknownFormatId(f"unknown format id {fid}")
    fmt = FORMAT_IDS[fid]
    if tr == 0 or tc == 0:
        raise CorruptBlock(f"zero tile dimension {tr}x{tc}")
    tile = TileShape(tr, tc)
    gr, gc = -(-rows // tr), -(-cols // tc)
    n_blocks = gr * gc
    stride = 1 + block_payload_size(fmt, tile)
    body = data[MXB_HEADER_SIZE:]
    if len(body) != n_blocks * stride:
        raise CorruptBlock(f"expected {n_blocks} blocks of {stride} bytes, found {len(body)} bytes")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(n_blocks, stride)
    se = raw[:, 0].astype(np.int64)
    codes, padding = _unpack_codes(raw[:, 1:], fmt.width, tile.size)
    if padding.any():
        raise CorruptBlock("nonzero padding bits")
    zero = se == ZERO_BLOCK_BYTE
    if np.any(codes[zero] != 0):
        raise CorruptBlock("zero-block sentinel with nonzero codes")
    shared = np.where(zero, 0, se - S_E_BIAS).astype(np.int16)
    return QuantizedTensor(
        fmt,
        (rows, cols),
        tile,
        shared.reshape(gr, gc),
        zero.reshape(gr, gc),
        codes.astype(code_dtype(fmt)).reshape(gr, gc, tile.size),
    )


def save_mxb(path: str | os.PathLike, q: QuantizedTensor) -> None:
    _write(path, mxb_bytes(q))


def load_mxb(path: str | os.PathLike) -> QuantizedTensor:
    return parse_mxb(_read(path))
