"""Blocks, tiles and whole-tensor quantization.

A tensor is cut into ``rows x cols`` tiles enumerated row-major; each tile
is one block with its own shared exponent.  Edge tiles are zero-padded and
the padding never influences the shared exponent.  Tiles with both sides
larger than one can be reused transposed without re-quantization.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import scalar_codec as sc
from .errors import ExponentOutOfRange, NonFiniteInput, NotReusable
from .formats import ElementFormat

S_E_MIN = -127
S_E_MAX = 127


@dataclass(frozen=True)
class TileShape:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"tile dims must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def is_2d(self) -> bool:
        return self.rows > 1 and self.cols > 1

    def transposed(self) -> "TileShape":
        return TileShape(self.cols, self.rows)

    @classmethod
    def parse(cls, text: str) -> "TileShape":
        r, sep, c = text.lower().partition("x")
        if not sep:
            raise ValueError(f"tile must look like RxC, got {text!r}")
        return cls(int(r), int(c))

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


OCP_TILE = TileShape(1, 32)
INFERENCE_TILE = TileShape(1, 64)
TRAINING_TILE = TileShape(8, 8)
PROFILE_TILES = (TileShape(1, 16), TileShape(4, 4), OCP_TILE, TileShape(4, 8), INFERENCE_TILE, TRAINING_TILE)


@dataclass(frozen=True, eq=False)
class QuantizedBlock:
    shared_exp: int
    codes: np.ndarray
    format: ElementFormat
    zero_block: bool = False

    def __len__(self) -> int:
        return len(self.codes)

    def element_codes(self) -> list[sc.ElementCode]:
        return [sc.ElementCode(int(c), self.format) for c in self.codes]

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedBlock):
            return NotImplemented
        return (
            self.shared_exp == other.shared_exp
            and self.format == other.format
            and self.zero_block == other.zero_block
            and np.array_equal(self.codes, other.codes)
        )


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("input contains NaN or Inf")


def shared_exponent(values: Sequence[float]) -> tuple[int, bool]:
    """``floor(log2(max|X|))``; ``(0, True)`` for an all-zero block."""
    arr = np.asarray(values, dtype=np.float64)
    _check_finite(arr)
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    if peak == 0.0:
        return 0, True
    return math.frexp(peak)[1] - 1, False


def _check_range(S_e) -> None:
    S = np.asarray(S_e)
    if S.size and (S.min() < S_E_MIN or S.max() > S_E_MAX):
        raise ExponentOutOfRange(f"shared exponent outside [{S_E_MIN}, {S_E_MAX}]")


def quantize_block(values: Sequence[float], fmt: ElementFormat) -> QuantizedBlock:
    """Quantize one block element by element through the scalar codec."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    S_e, zero = shared_exponent(arr)
    dtype = sc.code_dtype(fmt)
    if zero:
        return QuantizedBlock(0, np.zeros(arr.size, dtype=dtype), fmt, True)
    _check_range(S_e)
    codes = np.array([sc.encode(float(v), S_e, fmt).bits for v in arr], dtype=dtype)
    return QuantizedBlock(S_e, codes, fmt, False)


def dequantize_block(b: QuantizedBlock) -> list[float]:
    if b.zero_block:
        return [0.0] * len(b.codes)
    return [sc.decode(code, b.shared_exp) for code in b.element_codes()]


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Grid of blocks in storage orientation, plus an optional transpose flag.

    ``shared_exps``/``zero_blocks`` have shape ``(grid_rows, grid_cols)`` and
    ``codes`` has shape ``(grid_rows, grid_cols, tile.rows * tile.cols)``,
    all in the orientation the tensor was quantized in.  ``transposed``
    only changes how that storage is presented.
    """

    format: ElementFormat
    base_dims: tuple[int, int]
    base_tile: TileShape
    shared_exps: np.ndarray
    zero_blocks: np.ndarray
    codes: np.ndarray
    transposed: bool = False

    @property
    def logical_dims(self) -> tuple[int, int]:
        r, c = self.base_dims
        return (c, r) if self.transposed else (r, c)

    @property
    def tile(self) -> TileShape:
        return self.base_tile.transposed() if self.transposed else self.base_tile

    @property
    def grid_shape(self) -> tuple[int, int]:
        gr, gc = self.shared_exps.shape
        return (gc, gr) if self.transposed else (gr, gc)

    @property
    def n_blocks(self) -> int:
        return int(self.shared_exps.size)

    def block(self, i: int, j: int) -> QuantizedBlock:
        """Block ``(i, j)`` of the grid as presented, codes row-major in the tile."""
        if self.transposed:
            bi, bj = j, i
        else:
            bi, bj = i, j
        codes = self.codes[bi, bj]
        if self.transposed:
            codes = codes.reshape(self.base_tile.rows, self.base_tile.cols).T.ravel()
        return QuantizedBlock(
            int(self.shared_exps[bi, bj]), codes.copy(), self.format, bool(self.zero_blocks[bi, bj])
        )

    @property
    def blocks(self) -> list[list[QuantizedBlock]]:
        gr, gc = self.grid_shape
        return [[self.block(i, j) for j in range(gc)] for i in range(gr)]

    def _base_padded(self, values: np.ndarray) -> np.ndarray:
        gr, gc = self.shared_exps.shape
        tr, tc = self.base_tile.rows, self.base_tile.cols
        return values.reshape(gr, gc, tr, tc).transpose(0, 2, 1, 3).reshape(gr * tr, gc * tc)

    def _present(self, padded: np.ndarray, crop: bool) -> np.ndarray:
        if crop:
            r, c = self.base_dims
            padded = padded[:r, :c]
        return padded.T if self.transposed else padded

    def relative_values(self, crop: bool = True) -> np.ndarray:
        """Element values divided by their block scale ``2**S_e``."""
        rel = sc.decode_array(self.codes, 0, self.format)
        rel = np.where(self.zero_blocks[..., None], 0.0, rel)
        return self._present(self._base_padded(rel), crop)

    def element_exponents(self, crop: bool = True) -> np.ndarray:
        """Shared exponent of the block holding each element."""
        tr, tc = self.base_tile.rows, self.base_tile.cols
        S = np.repeat(np.repeat(self.shared_exps.astype(np.int64), tr, axis=0), tc, axis=1)
        return self._present(S, crop)

    def dequantize(self) -> np.ndarray:
        return np.ldexp(self.relative_values(), self.element_exponents())

    def materialize(self) -> "QuantizedTensor":
        """Same payload laid out in the presented orientation (no-op if not transposed)."""
        if not self.transposed:
            return self
        tr, tc = self.base_tile.rows, self.base_tile.cols
        gr, gc = self.shared_exps.shape
        codes = self.codes.reshape(gr, gc, tr, tc).transpose(1, 0, 3, 2).reshape(gc, gr, tr * tc)
        return QuantizedTensor(
            self.format,
            self.logical_dims,
            self.tile,
            np.ascontiguousarray(self.shared_exps.T),
            np.ascontiguousarray(self.zero_blocks.T),
            np.ascontiguousarray(codes),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        a, b = self.materialize(), other.materialize()
        return (
            a.format == b.format
            and a.base_dims == b.base_dims
            and a.base_tile == b.base_tile
            and np.array_equal(a.shared_exps, b.shared_exps)
            and np.array_equal(a.zero_blocks, b.zero_blocks)
            and np.array_equal(a.codes, b.codes)
        )


def _as_matrix(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    return arr


def quantize_tensor(t, tile: TileShape, fmt: ElementFormat) -> QuantizedTensor:
    arr = _as_matrix(t)
    _check_finite(arr)
    n_rows, n_cols = arr.shape
    tr, tc = tile.rows, tile.cols
    gr, gc = -(-n_rows // tr), -(-n_cols // tc)
    padded = np.zeros((gr * tr, gc * tc))
    padded[:n_rows, :n_cols] = arr
    blocks = padded.reshape(gr, tr, gc, tc).transpose(0, 2, 1, 3).reshape(gr, gc, tr * tc)

    peak = np.max(np.abs(blocks), axis=-1) if blocks.size else np.zeros((gr, gc))
    zero = peak == 0
    S = np.where(zero, 0, np.frexp(peak)[1].astype(np.int64) - 1)
    _check_range(S)
    _, codes = sc.quantize_array(blocks, S[..., None], fmt)
    codes[zero] = 0
    return QuantizedTensor(fmt, (n_rows, n_cols), tile, S.astype(np.int16), zero, codes)


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    return q.dequantize()


def transpose_view(q: QuantizedTensor) -> QuantizedTensor:
    if not q.base_tile.is_2d:
        raise NotReusable(f"{q.base_tile} tiles run along one axis; re-quantize the transpose instead")
    return dataclasses.replace(q, transposed=not q.transposed)


# --- training-step quantization schedule ------------------------------------------


class TrainStepRun:
    """Scripted forward/backward pass of one linear layer ``Y = X @ W``.

    Operands are requested in the orientation a GEMM consumes them: the
    left operand blocked along its columns, the right operand along its
    rows.  A cached quantization is reused directly when it already has the
    needed layout, reused through ``transpose_view`` when only the
    orientation differs, and re-quantized otherwise.
    """

    def __init__(self, tile: TileShape, quantize: Callable[[str, bool, TileShape], QuantizedTensor]):
        self.tile = tile
        self._quantize = quantize
        self._cache: dict[str, list[tuple[bool, int, QuantizedTensor]]] = {}
        self.events = 0

    def _needed_tile(self, role: str) -> TileShape:
        return self.tile if role == "left" else self.tile.transposed()

    def operand(self, name: str, transposed: bool, role: str) -> QuantizedTensor:
        # contraction axis in the stored tensor's own coordinates
        axis = 1 if (role == "left") != transposed else 0
        entries = self._cache.setdefault(name, [])
        for orient, ax, q in entries:
            if orient == transposed and (ax == axis or q.tile.is_2d):
                return q
        for orient, _, q in entries:
            if orient != transposed:
                try:
                    return transpose_view(q)
                except NotReusable:
                    pass
        q = self._quantize(name, transposed, self._needed_tile(role))
        self.events += 1
        entries.append((transposed, axis, q))
        return q

    def forward(self):
        return self.operand("X", False, "left"), self.operand("W", False, "right")

    def backward(self):
        grad_x = (self.operand("dY", False, "left"), self.operand("W", True, "right"))
        grad_w = (self.operand("X", True, "left"), self.operand("dY", False, "right"))
        return grad_x, grad_w


def _shape_only_quantizer(dims: dict[str, tuple[int, int]], fmt: ElementFormat):
    def quantize(name: str, transposed: bool, tile: TileShape) -> QuantizedTensor:
        r, c = dims[name]
        if transposed:
            r, c = c, r
        gr, gc = -(-r // tile.rows), -(-c // tile.cols)
        return QuantizedTensor(
            fmt,
            (r, c),
            tile,
            np.zeros((gr, gc), dtype=np.int16),
            np.ones((gr, gc), dtype=bool),
            np.zeros((gr, gc, tile.size), dtype=sc.code_dtype(fmt)),
        )

    return quantize


def count_quantization_events(layer_dims: tuple[int, int, int], tile: TileShape, training: bool = True) -> int:
    """Number of tensor quantizations for one linear layer step.

    ``layer_dims`` is ``(M, K, N)`` for ``X: MxK`` and ``W: KxN``.  Runs the
    schedule on zero placeholders so any layer size is cheap.
    """
    m, k, n = layer_dims
    if min(m, k, n) < 1:
        raise ValueError(f"layer dims must be positive, got {layer_dims}")
    from .formats import MXSF

    run = TrainStepRun(tile, _shape_only_quantizer({"X": (m, k), "W": (k, n), "dY": (m, n)}, MXSF))
    run.forward()
    if training:
        run.backward()
    return run.events
