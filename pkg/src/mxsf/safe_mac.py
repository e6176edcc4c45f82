"""Bit-accurate model of the SAFE-MAC dot-product datapath and a GEMM on top.

Datapath, per block pair ``(a, b)``:

1. decode each code into ``sign * significand * 2**offset`` relative to the
   block scale (MXSF picks E2M5 or E3M2 from the two bits after the sign);
2. multiply exactly (at most 6x6 significand bits);
3. round each product into FP12 (E4M7, bias 7, gradual underflow,
   saturating), add in a fixed ``(p0+p1)+(p2+p3)`` tree, rounding after
   every addition;
4. accumulate the 4-lane group results sequentially in FP12;
5. rescale by ``2**(S_a + S_b - anchor)`` and hand over in binary32.

Products are placed into FP12 with ``anchor`` extra exponent so that a
product of two unit operands sits in exponent field 8; this leaves room for
64 maximal products before saturation.

The GEMM accumulates block results across K in the configured accumulator.
The 1D mapping folds four K-blocks into a partial sum before adding it to
the output, the tiled mapping folds two.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import scalar_codec as sc
from .block_quant import QuantizedBlock, QuantizedTensor
from .errors import BlockShapeMismatch, DimMismatch, MalformedCode, TileIncompatible
from .formats import FP8_E2M5, MXSF_LOW, ElementFormat, Kind

FP12_EXP_BITS = 4
FP12_MAN_BITS = 7
FP12_BIAS = 7
FP12_MIN_EXP = 1 - FP12_BIAS
FP12_MAX = math.ldexp(2.0 - 2.0**-FP12_MAN_BITS, (1 << FP12_EXP_BITS) - 1 - FP12_BIAS)
DEFAULT_ANCHOR = 1
LANES = 4

ACCUMULATORS = ("binary32", "binary64", "exact")
MAPPINGS = ("oneD", "tiled")
_GROUP_BLOCKS = {"oneD": 4, "tiled": 2}


@dataclass(frozen=True)
class MacConfig:
    intra_block: str = "fp12"  # "fp12" | "exact"
    inter_block: str = "binary32"  # "binary32" | "binary64" | "exact"
    anchor: int = DEFAULT_ANCHOR
    tree_arity: int = LANES

    def __post_init__(self):
        if self.intra_block not in ("fp12", "exact"):
            raise ValueError(f"intra_block must be 'fp12' or 'exact', got {self.intra_block!r}")
        if self.inter_block not in ACCUMULATORS:
            raise ValueError(f"inter_block must be one of {ACCUMULATORS}, got {self.inter_block!r}")
        if self.tree_arity != LANES:
            raise ValueError("the adder tree is fixed at 4 lanes")


DEFAULT = MacConfig()
EXACT = MacConfig("exact", "exact")
CONFIGS = {"default": DEFAULT, "exact": EXACT}


def threads() -> int:
    """Worker cap from ``MXSAFE_THREADS`` (0 or unset means one per CPU)."""
    try:
        n = int(os.environ.get("MXSAFE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


# --- FP12 ------------------------------------------------------------------------


def round_fp12(v):
    """Round binary64 value(s) to FP12 E4M7: nearest-even, saturating."""
    v = np.asarray(v, dtype=np.float64)
    a = np.abs(v)
    e = np.maximum(np.frexp(a)[1] - 1, FP12_MIN_EXP)
    step = e - FP12_MAN_BITS
    q = np.minimum(np.ldexp(np.rint(np.ldexp(a, -step)), step), FP12_MAX)
    q = np.copysign(q, v)
    return float(q) if q.ndim == 0 else q


def fp12_half_ulp(y):
    """Half the FP12 spacing at magnitude ``y`` (subnormal spacing below 2**-6)."""
    y = np.asarray(y, dtype=np.float64)
    e = np.maximum(np.frexp(np.abs(y))[1] - 1, FP12_MIN_EXP)
    return np.ldexp(1.0, e - FP12_MAN_BITS - 1)


@dataclass(frozen=True)
class Fp12Value:
    bits: int

    @classmethod
    def from_float(cls, v: float) -> "Fp12Value":
        q = round_fp12(v)
        sign = 1 if math.copysign(1.0, q) < 0 else 0
        a = abs(q)
        if a == 0:
            return cls(sign << 11)
        e = math.frexp(a)[1] - 1
        if e < FP12_MIN_EXP:
            field, mant = 0, int(math.ldexp(a, FP12_MAN_BITS - FP12_MIN_EXP))
        else:
            field = e + FP12_BIAS
            mant = int(math.ldexp(a, FP12_MAN_BITS - e)) - (1 << FP12_MAN_BITS)
        return cls((sign << 11) | (field << FP12_MAN_BITS) | mant)

    @property
    def sign(self) -> int:
        return -1 if self.bits >> 11 else 1

    @property
    def exponent_field(self) -> int:
        return (self.bits >> FP12_MAN_BITS) & 0xF

    @property
    def mantissa(self) -> int:
        return self.bits & 0x7F

    @property
    def value(self) -> float:
        f, m = self.exponent_field, self.mantissa
        if f:
            mag = math.ldexp(0x80 | m, f - FP12_BIAS - FP12_MAN_BITS)
        else:
            mag = math.ldexp(m, FP12_MIN_EXP - FP12_MAN_BITS)
        return math.copysign(mag, self.sign)

    def scaled(self, anchor: int = DEFAULT_ANCHOR) -> float:
        """Value relative to the block-pair scale."""
        return math.ldexp(self.value, -anchor)


# --- operands and products -------------------------------------------------------------


@dataclass(frozen=True)
class Operand:
    sign: int
    offset: int
    significand: float

    @property
    def is_zero(self) -> bool:
        return self.significand == 0

    @property
    def value(self) -> float:
        return math.copysign(math.ldexp(self.significand, self.offset), self.sign)


@dataclass(frozen=True)
class MacProduct:
    sign: int
    exponent_offset: int
    significand: float

    @property
    def value(self) -> float:
        return math.copysign(math.ldexp(self.significand, self.exponent_offset), self.sign)


def _fp_operand(sign: int, mag_bits: int, fmt: ElementFormat) -> Operand:
    field = mag_bits >> fmt.m_f
    mant = mag_bits & ((1 << fmt.m_f) - 1)
    if field:
        return Operand(sign, field - fmt.bias, 1.0 + math.ldexp(mant, -fmt.m_f))
    return Operand(sign, 1 - fmt.bias, math.ldexp(mant, -fmt.m_f))


def decode_operand(code: sc.ElementCode, mode_hint: ElementFormat | None = None) -> Operand:
    """Split a code into sign, offset from the block scale, and significand."""
    fmt = code.format
    if mode_hint is not None and mode_hint != fmt:
        raise MalformedCode(f"code tagged {fmt} but {mode_hint} expected")
    if not 0 <= code.bits < fmt.n_codes:
        raise MalformedCode(f"code {code.bits:#x} does not fit {fmt}")
    sign = code.sign
    mag_bits = code.bits & (fmt.sign_mask - 1)
    if fmt.kind is Kind.INT:
        return Operand(sign, 0, math.ldexp(mag_bits, -(fmt.m_i - 2)))
    if fmt.kind is Kind.MXSF:
        # E3M2 when the 2nd and 3rd MSBs are both zero
        if (mag_bits >> 5) & 0b11:
            return _fp_operand(sign, mag_bits, FP8_E2M5)
        return _fp_operand(sign, mag_bits, MXSF_LOW)
    return _fp_operand(sign, mag_bits, fmt)


def multiply(a: Operand, b: Operand) -> MacProduct:
    sign = a.sign * b.sign
    if a.is_zero or b.is_zero:
        return MacProduct(sign, 0, 0.0)
    # <= 12 significant bits: exact in binary64
    return MacProduct(sign, a.offset + b.offset, a.significand * b.significand)


def adder_tree4(products: Sequence[MacProduct], cfg: MacConfig = DEFAULT) -> Fp12Value:
    if len(products) != LANES:
        raise BlockShapeMismatch(f"adder tree takes {LANES} products, got {len(products)}")
    r = [round_fp12(math.ldexp(p.value, cfg.anchor)) for p in products]
    left = round_fp12(r[0] + r[1])
    right = round_fp12(r[2] + r[3])
    return Fp12Value.from_float(left + right)


def _to_binary32(v: float) -> float:
    return float(np.float32(v))


def _exact_sum_to_f32(terms: Sequence[float]) -> float:
    """Correctly rounded binary32 of the exact sum of binary64 terms."""
    terms = list(terms)
    s = math.fsum(terms)
    if not math.isfinite(s):
        return _to_binary32(s)
    f = np.float32(s)
    if float(f) == s or not np.isfinite(f):
        return float(f)
    if float(f) > s:
        lo, hi = np.nextafter(f, np.float32(-np.inf)), f
    else:
        lo, hi = f, np.nextafter(f, np.float32(np.inf))
    mid = (float(lo) + float(hi)) / 2
    if mid != s:
        return float(f)
    # s sits on a binary32 tie; the part fsum rounded away breaks it
    residual = math.fsum(terms + [-s])
    if residual > 0:
        return float(hi)
    if residual < 0:
        return float(lo)
    return float(f)


def block_dot(a: QuantizedBlock, b: QuantizedBlock, cfg: MacConfig = DEFAULT) -> float:
    if len(a) != len(b):
        raise BlockShapeMismatch(f"block lengths differ: {len(a)} vs {len(b)}")
    if a.zero_block or b.zero_block:
        return 0.0
    prods = [
        multiply(decode_operand(x), decode_operand(y))
        for x, y in zip(a.element_codes(), b.element_codes())
    ]
    scale = a.shared_exp + b.shared_exp
    if cfg.intra_block == "exact":
        return _exact_sum_to_f32([math.ldexp(p.value, scale) for p in prods])
    prods += [MacProduct(1, 0, 0.0)] * (-len(prods) % LANES)
    acc = None
    for g in range(0, len(prods), LANES):
        group = adder_tree4(prods[g : g + LANES], cfg).value
        acc = group if acc is None else round_fp12(acc + group)
    return _to_binary32(math.ldexp(acc, scale - cfg.anchor))


# --- GEMM ----------------------------------------------------------------------------


def _min_positive(fmt: ElementFormat) -> float:
    t = sc.code_table(fmt)
    return float(np.min(t[t > 0]))


def _exact_sum_fits(fa: ElementFormat, fb: ElementFormat, n: int) -> bool:
    """True when any-order binary64 summation of ``n`` products is exact."""
    lsb = _min_positive(fa) * _min_positive(fb)
    top = sc.max_magnitude(fa) * sc.max_magnitude(fb) * n
    return top < math.ldexp(lsb, 53)


def _operands(A: QuantizedTensor, B: QuantizedTensor, mapping: str):
    if mapping not in MAPPINGS:
        raise ValueError(f"mapping must be one of {MAPPINGS}, got {mapping!r}")
    M, K = A.logical_dims
    K2, N = B.logical_dims
    if K != K2:
        raise DimMismatch(f"inner dims differ: {M}x{K} @ {K2}x{N}")
    kb = A.tile.cols
    if B.tile.rows != kb:
        raise TileIncompatible(f"A blocks span {kb} along K but B blocks span {B.tile.rows}")
    if mapping == "tiled" and not (A.tile.is_2d and B.tile.is_2d):
        raise TileIncompatible("tiled mapping needs 2D tiles on both operands")
    a_rel = A.relative_values(crop=False)
    b_rel = B.relative_values(crop=False)
    sa = A.element_exponents(crop=False)[:, ::kb]
    sb = B.element_exponents(crop=False)[::kb, :]
    return M, N, kb, a_rel, b_rel, sa, sb


def _block_values(P: np.ndarray, kb: int, scale: np.ndarray, cfg: MacConfig, exact_fits: bool) -> np.ndarray:
    """Per K-block dot products, shape ``(m, n, nK)``, in binary64."""
    m, n, k_pad = P.shape
    nK = k_pad // kb
    P = P.reshape(m, n, nK, kb)
    if cfg.intra_block == "exact":
        if exact_fits:
            s = P.sum(axis=-1)
        else:
            s = np.array([math.fsum(r) for r in P.reshape(-1, kb).tolist()]).reshape(m, n, nK)
        return np.ldexp(s, scale)
    pad = -kb % LANES
    if pad:
        P = np.concatenate([P, np.zeros((m, n, nK, pad))], axis=-1)
    r = round_fp12(np.ldexp(P, cfg.anchor)).reshape(m, n, nK, -1, LANES)
    left = round_fp12(r[..., 0] + r[..., 1])
    right = round_fp12(r[..., 2] + r[..., 3])
    groups = round_fp12(left + right)
    acc = groups[..., 0]
    for g in range(1, groups.shape[-1]):
        acc = round_fp12(acc + groups[..., g])
    return np.ldexp(acc, scale - cfg.anchor)


def _accumulate(bv: np.ndarray, mapping: str, dtype) -> np.ndarray:
    bv = bv.astype(dtype)
    nK = bv.shape[-1]
    step = _GROUP_BLOCKS[mapping]
    out = np.zeros(bv.shape[:-1], dtype=dtype)
    for c0 in range(0, nK, step):
        part = bv[..., c0]
        for t in range(c0 + 1, min(c0 + step, nK)):
            part = part + bv[..., t]
        out = out + part
    return out


def _gemm_rows(rows: slice, mapping: str, cfg: MacConfig, ops, exact_fits: bool) -> np.ndarray:
    _, _, kb, a_rel, b_rel, sa, sb = ops
    P = a_rel[rows, None, :] * b_rel.T[None, :, :]
    scale = sa[rows, None, :] + sb.T[None, :, :]
    if cfg.inter_block == "exact":
        if cfg.intra_block == "exact":
            terms = np.ldexp(P, np.repeat(scale, kb, axis=-1))
        else:
            terms = _block_values(P, kb, scale, cfg, exact_fits)
        flat = terms.reshape(-1, terms.shape[-1])
        out = np.array([_exact_sum_to_f32(t) for t in flat.tolist()], dtype=np.float32)
        return out.reshape(terms.shape[:2])
    bv = _block_values(P, kb, scale, cfg, exact_fits)
    if cfg.inter_block == "binary32":
        return _accumulate(bv, mapping, np.float32)
    return _accumulate(bv, mapping, np.float64).astype(np.float32)


def gemm(A: QuantizedTensor, B: QuantizedTensor, mapping: str = "oneD", cfg: MacConfig = DEFAULT) -> np.ndarray:
    """``A @ B`` through the modeled datapath; returns a binary32 matrix.

    Output rows are computed in independent chunks (``MXSAFE_THREADS``
    workers); every reduction order is fixed, so the result does not depend
    on the worker count.
    """
    ops = _operands(A, B, mapping)
    M, N = ops[0], ops[1]
    exact_fits = _exact_sum_fits(A.format, B.format, ops[2])
    m_pad = ops[3].shape[0]
    chunk = max(1, min(m_pad, max(1, (1 << 18) // max(1, ops[4].size))))
    slices = [slice(i, min(i + chunk, m_pad)) for i in range(0, m_pad, chunk)]
    workers = min(threads(), len(slices))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: _gemm_rows(s, mapping, cfg, ops, exact_fits), slices))
    else:
        parts = [_gemm_rows(s, mapping, cfg, ops, exact_fits) for s in slices]
    out = np.concatenate(parts, axis=0) if parts else np.zeros((0, ops[4].shape[1]), np.float32)
    return np.ascontiguousarray(out[:M, :N], dtype=np.float32)


def gemm_error_bound(A: QuantizedTensor, B: QuantizedTensor, mapping: str = "oneD", cfg: MacConfig = DEFAULT) -> np.ndarray:
    """Per-output bound on ``|gemm(cfg) - gemm(EXACT)|``, from operand magnitudes only.

    Each K-block contributes one FP12 half-ulp for each of its ``2*kb - 1``
    roundings (products, tree adds, group accumulation), taken at the
    block's absolute product sum.  The accumulator adds one half-ulp of its
    own precision per addition at the running absolute sum, and the exact
    reference's own binary32 rounding is included.
    """
    if cfg.intra_block != "fp12":
        raise ValueError("bound is for the FP12 datapath")
    M, N, kb, a_rel, b_rel, sa, sb = _operands(A, B, mapping)
    k_pad = a_rel.shape[1]
    nK = k_pad // kb
    absP = (np.abs(a_rel)[:, None, :] * np.abs(b_rel).T[None, :, :]).reshape(a_rel.shape[0], b_rel.shape[1], nK, kb)
    S_raw = np.ldexp(absP.sum(axis=-1), cfg.anchor)
    kb4 = kb + (-kb % LANES)
    n_round = 2 * kb4 - 1
    # partial sums stay below the absolute sum up to a tiny accumulated error
    per_block_raw = np.where(S_raw > 0, n_round * fp12_half_ulp(S_raw * (1 + 2.0**-6)), 0.0)
    scale = sa[:, None, :] + sb.T[None, :, :]
    fp12_part = np.ldexp(per_block_raw, scale - cfg.anchor)
    total_mag = np.ldexp(S_raw, scale - cfg.anchor) + fp12_part
    T = total_mag.sum(axis=-1)
    eps = {"binary32": 2.0**-24, "binary64": 2.0**-53, "exact": 0.0}[cfg.inter_block]
    bound = fp12_part.sum(axis=-1) + 2 * nK * eps * T + 2.0**-24 * T
    return bound[:M, :N]


def reference_gemm(A_dense, B_dense) -> np.ndarray:
    """Dense binary64 GEMM, each output a correctly rounded ``fsum`` in K order."""
    A = np.asarray(A_dense, dtype=np.float64)
    B = np.asarray(B_dense, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimMismatch(f"cannot multiply {A.shape} by {B.shape}")
    M, N = A.shape[0], B.shape[1]
    out = np.empty((M, N))
    for i in range(M):
        P = A[i, :, None] * B
        out[i] = [math.fsum(col) for col in P.T.tolist()]
    return out
