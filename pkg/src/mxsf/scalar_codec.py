"""Element-level encode/decode against a block's shared exponent.

Two paths live here.  The scalar functions (``decompose``, ``quantize_int``,
``quantize_fp``, ``encode_mxsf``, ``decode``) follow the per-element
formulas literally and build codes bit by bit.  The array functions
(``quantize_array``, ``decode_array``) are the vectorized numpy versions
used by the tensor layer; they map rounded magnitudes to codes through a
lookup table built from the scalar ``decode``, so the two paths check
each other.

All rounding is round-half-to-even.  Every scaling is by a power of two,
so binary64 arithmetic is exact throughout.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ExponentAboveShared, MalformedCode, NonFiniteInput
from .formats import (
    FP8_E2M5,
    INT8,
    MXSF,
    MXSF_GAP_THRESHOLD,
    MXSF_LOW,
    ElementFormat,
    Kind,
    int_format,
)


@dataclass(frozen=True)
class ScalarDecomp:
    """``x == sign * significand * 2**exponent`` with significand in [1, 2)."""

    sign: int
    exponent: int
    significand: float
    is_zero: bool = False

    @property
    def value(self) -> float:
        if self.is_zero:
            return math.copysign(0.0, self.sign)
        return self.sign * math.ldexp(self.significand, self.exponent)


@dataclass(frozen=True)
class ElementCode:
    bits: int
    format: ElementFormat

    def __post_init__(self):
        if not 0 <= self.bits < self.format.n_codes:
            raise MalformedCode(f"code {self.bits:#x} does not fit {self.format.width}-bit {self.format}")

    @property
    def mxsf_mode(self) -> str:
        if self.format.kind is not Kind.MXSF:
            return "not_applicable"
        return "E3M2" if (self.bits >> 5) & 0b11 == 0 else "E2M5"

    @property
    def sign(self) -> int:
        return -1 if self.bits & self.format.sign_mask else 1

    def __repr__(self) -> str:
        return f"ElementCode({self.bits:#04x}, {self.format.name})"


Number = Union[float, int, ScalarDecomp]


def decompose(x: float) -> ScalarDecomp:
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteInput(f"cannot decompose {x!r}")
    sign = -1 if math.copysign(1.0, x) < 0 else 1
    if x == 0.0:
        return ScalarDecomp(sign, 0, 0.0, is_zero=True)
    m, e = math.frexp(abs(x))
    return ScalarDecomp(sign, e - 1, 2.0 * m)


def round_significand(value: float, frac_bits: int) -> float:
    """Round ``value`` to the nearest multiple of ``2**-frac_bits``, ties to even."""
    if frac_bits < 0:
        raise ValueError("frac_bits must be >= 0")
    # round() on a float is exact half-to-even
    return math.ldexp(round(math.ldexp(value, frac_bits)), -frac_bits)


def local_exponent(e_x: int, S_e: int, fmt: ElementFormat) -> int:
    """Exponent field an element lands in: ``bias - (S_e - e_x)``.

    For the standard formats ``bias == E`` so this is ``E - (S_e - e_x)``.
    """
    if fmt.kind is Kind.INT:
        raise ValueError("integer formats have no local exponent")
    return fmt.bias - (S_e - e_x)


def _as_decomp(x: Number) -> ScalarDecomp:
    return x if isinstance(x, ScalarDecomp) else decompose(x)


def _check_gap(x: ScalarDecomp, S_e: int) -> None:
    if not x.is_zero and x.exponent > S_e:
        raise ExponentAboveShared(f"element exponent {x.exponent} above shared exponent {S_e}")


def _signed(q: float, sign: int) -> float:
    return math.copysign(q, sign)


# --- integer -----------------------------------------------------------------


def _int_bits_from_magnitude(q: float, S_e: int, fmt: ElementFormat) -> int:
    return int(math.ldexp(q, -(S_e - (fmt.m_i - 2))))


def quantize_int(x: Number, S_e: int, m_i: int = 8) -> tuple[float, ElementCode]:
    fmt = INT8 if m_i == 8 else int_format(m_i)
    d = _as_decomp(x)
    _check_gap(d, S_e)
    sign_bit = fmt.sign_mask if d.sign < 0 else 0
    if d.is_zero:
        return _signed(0.0, d.sign), ElementCode(sign_bit, fmt)
    frac = m_i - 2
    steps = round(math.ldexp(d.significand, frac - (S_e - d.exponent)))
    steps = min(steps, (1 << (m_i - 1)) - 1)
    q = math.ldexp(steps, S_e - frac)
    return _signed(q, d.sign), ElementCode(sign_bit | steps, fmt)


# --- floating point ------------------------------------------------------------


def _fp_round(d: ScalarDecomp, S_e: int, fmt: ElementFormat) -> float:
    """Unclamped rounded magnitude of ``d`` on ``fmt``'s grid."""
    x_le = local_exponent(d.exponent, S_e, fmt)
    if x_le > 0:
        return math.ldexp(round_significand(d.significand, fmt.m_f), d.exponent)
    # subnormal: fixed grid 2**(S_e - bias + 1 - m_f)
    steps = round(math.ldexp(d.significand, fmt.m_f + x_le - 1))
    return math.ldexp(steps, S_e - fmt.bias + 1 - fmt.m_f)


def _fp_max(S_e: int, fmt: ElementFormat) -> float:
    return math.ldexp(2.0 - math.ldexp(1.0, -fmt.m_f), S_e - fmt.bias + fmt.max_local_exp)


def _fp_bits_from_magnitude(q: float, S_e: int, fmt: ElementFormat) -> int:
    if q == 0.0:
        return 0
    e = math.frexp(q)[1] - 1
    field = e - S_e + fmt.bias
    if field >= 1:
        mant = int(math.ldexp(q, fmt.m_f - e)) - (1 << fmt.m_f)
        return (field << fmt.m_f) | mant
    return int(math.ldexp(q, -(S_e - fmt.bias + 1 - fmt.m_f)))


def quantize_fp(x: Number, S_e: int, fmt: ElementFormat) -> tuple[float, ElementCode]:
    if fmt.kind is not Kind.FP:
        raise ValueError(f"{fmt} is not a plain floating-point format")
    d = _as_decomp(x)
    _check_gap(d, S_e)
    sign_bit = fmt.sign_mask if d.sign < 0 else 0
    if d.is_zero:
        return _signed(0.0, d.sign), ElementCode(sign_bit, fmt)
    q = min(_fp_round(d, S_e, fmt), _fp_max(S_e, fmt))
    return _signed(q, d.sign), ElementCode(sign_bit | _fp_bits_from_magnitude(q, S_e, fmt), fmt)


# --- MXSF ----------------------------------------------------------------------


def _mxsf_bits_from_magnitude(q: float, S_e: int) -> int:
    if q >= math.ldexp(1.0, S_e - (MXSF_GAP_THRESHOLD - 1)):
        bits = _fp_bits_from_magnitude(q, S_e, FP8_E2M5)
        assert bits >> 5, "E2M5 half must carry a nonzero exponent field"
        return bits
    return _fp_bits_from_magnitude(q, S_e, MXSF_LOW)


def encode_mxsf(x: Number, S_e: int) -> tuple[float, ElementCode]:
    d = _as_decomp(x)
    _check_gap(d, S_e)
    sign_bit = MXSF.sign_mask if d.sign < 0 else 0
    if d.is_zero:
        return _signed(0.0, d.sign), ElementCode(sign_bit, MXSF)
    if S_e - d.exponent < MXSF_GAP_THRESHOLD:
        q = min(_fp_round(d, S_e, FP8_E2M5), _fp_max(S_e, FP8_E2M5))
    else:
        # a round-up out of the E3M2 range lands on 2**(S_e-2), which the
        # E2M5 half represents exactly
        q = _fp_round(d, S_e, MXSF_LOW)
    return _signed(q, d.sign), ElementCode(sign_bit | _mxsf_bits_from_magnitude(q, S_e), MXSF)


# --- dispatch ------------------------------------------------------------------


def quantize(x: Number, S_e: int, fmt: ElementFormat) -> tuple[float, ElementCode]:
    """Quantize one element; returns ``(value, code)``."""
    if fmt.kind is Kind.INT:
        return quantize_int(x, S_e, fmt.m_i)
    if fmt.kind is Kind.MXSF:
        return encode_mxsf(x, S_e)
    return quantize_fp(x, S_e, fmt)


def encode(x: Number, S_e: int, fmt: ElementFormat) -> ElementCode:
    return quantize(x, S_e, fmt)[1]


def _decode_fp_magnitude(mag_bits: int, S_e: int, fmt: ElementFormat) -> float:
    field = mag_bits >> fmt.m_f
    mant = mag_bits & ((1 << fmt.m_f) - 1)
    if field:
        return math.ldexp((1 << fmt.m_f) | mant, S_e + field - fmt.bias - fmt.m_f)
    return math.ldexp(mant, S_e + 1 - fmt.bias - fmt.m_f)


def decode(code: ElementCode, S_e: int) -> float:
    fmt = code.format
    if not 0 <= code.bits < fmt.n_codes:
        raise MalformedCode(f"code {code.bits:#x} does not fit {fmt}")
    mag_bits = code.bits & (fmt.sign_mask - 1)
    if fmt.kind is Kind.INT:
        mag = math.ldexp(mag_bits, S_e - (fmt.m_i - 2))
    elif fmt.kind is Kind.MXSF:
        if mag_bits >> 5:
            mag = _decode_fp_magnitude(mag_bits, S_e, FP8_E2M5)
        else:
            mag = _decode_fp_magnitude(mag_bits, S_e, MXSF_LOW)
    else:
        mag = _decode_fp_magnitude(mag_bits, S_e, fmt)
    return _signed(mag, code.sign)


def max_magnitude(fmt: ElementFormat, S_e: int = 0) -> float:
    if fmt.kind is Kind.INT:
        return math.ldexp((1 << (fmt.m_i - 1)) - 1, S_e - (fmt.m_i - 2))
    if fmt.kind is Kind.MXSF:
        return _fp_max(S_e, FP8_E2M5)
    return _fp_max(S_e, fmt)


def grid_step(fmt: ElementFormat, e_x: int, S_e: int) -> float:
    """Spacing of representable values around an element of exponent ``e_x``."""
    gap = S_e - e_x
    if fmt.kind is Kind.INT:
        return math.ldexp(1.0, S_e - (fmt.m_i - 2))
    if fmt.kind is Kind.MXSF:
        fmt = FP8_E2M5 if gap < MXSF_GAP_THRESHOLD else MXSF_LOW
    if fmt.bias - gap >= 1:
        return math.ldexp(1.0, e_x - fmt.m_f)
    return math.ldexp(1.0, S_e - fmt.bias + 1 - fmt.m_f)


# --- vectorized path ---------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def code_table(fmt: ElementFormat) -> np.ndarray:
    """Signed value of every code at ``S_e == 0``, indexed by code."""
    return np.array([decode(ElementCode(c, fmt), 0) for c in range(fmt.n_codes)], dtype=np.float64)


@functools.lru_cache(maxsize=None)
def _magnitude_index(fmt: ElementFormat) -> tuple[np.ndarray, np.ndarray]:
    n_pos = fmt.sign_mask
    vals = code_table(fmt)[:n_pos]
    order = np.argsort(vals, kind="stable")
    if np.any(np.diff(vals[order]) == 0):
        raise AssertionError(f"{fmt} has duplicate magnitudes")
    return vals[order], order.astype(np.int64)


def code_dtype(fmt: ElementFormat) -> np.dtype:
    return np.dtype(np.uint8 if fmt.width <= 8 else np.uint16 if fmt.width <= 16 else np.uint32)


def quantize_array(x, S_e, fmt: ElementFormat) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``quantize``; ``S_e`` broadcasts against ``x``.

    Returns ``(values, codes)`` with the shape of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    S = np.broadcast_to(np.asarray(S_e, dtype=np.int64), x.shape)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input contains NaN or Inf")
    a = np.abs(x)
    nz = a != 0
    e_x = np.frexp(a)[1].astype(np.int64) - 1
    if np.any(nz & (e_x > S)):
        raise ExponentAboveShared("element exponent above shared exponent")
    gap = S - e_x

    if fmt.kind is Kind.INT:
        step_exp = S - (fmt.m_i - 2)
    elif fmt.kind is Kind.MXSF:
        lo = MXSF_LOW
        low_step = np.where(lo.bias - gap >= 1, e_x - lo.m_f, S - lo.bias + 1 - lo.m_f)
        step_exp = np.where(gap < MXSF_GAP_THRESHOLD, e_x - FP8_E2M5.m_f, low_step)
    else:
        step_exp = np.where(fmt.bias - gap >= 1, e_x - fmt.m_f, S - fmt.bias + 1 - fmt.m_f)

    q = np.ldexp(np.rint(np.ldexp(a, -step_exp)), step_exp)
    q = np.minimum(q, np.ldexp(max_magnitude(fmt, 0), S))

    rel = np.ldexp(q, -S)
    sorted_vals, sorted_codes = _magnitude_index(fmt)
    idx = np.clip(np.searchsorted(sorted_vals, rel), 0, len(sorted_vals) - 1)
    if not np.array_equal(sorted_vals[idx], rel):
        raise AssertionError("rounded magnitude missing from code table")
    codes = sorted_codes[idx]
    codes = np.where(np.signbit(x), codes | fmt.sign_mask, codes).astype(code_dtype(fmt))
    return np.copysign(q, x), codes


def decode_array(codes, S_e, fmt: ElementFormat) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() >= fmt.n_codes):
        raise MalformedCode(f"codes out of range for {fmt}")
    return np.ldexp(code_table(fmt)[codes.astype(np.int64)], np.asarray(S_e, dtype=np.int64))
