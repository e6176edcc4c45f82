"""Independent reference models used by the tests.

The representable set of each format is enumerated from its field layout
with exact rationals, without touching the package's decoders.  Quantizing
is then "nearest member of the set, ties to the even code", which needs no
knowledge of binades, subnormals or saturation.
"""

from __future__ import annotations

import functools
from fractions import Fraction

from mxsf.formats import Kind


@functools.lru_cache(maxsize=None)
def magnitudes(fmt) -> tuple[tuple[Fraction, int], ...]:
    """Sorted ``(value at S_e = 0, code)`` pairs for the non-negative codes."""
    out = []
    if fmt.kind is Kind.INT:
        n = fmt.m_f  # magnitude bits
        for k in range(1 << n):
            out.append((Fraction(k, 1 << (n - 1)), k))
    elif fmt.kind is Kind.MXSF:
        # high mode: 2 exponent bits (1..3), 5 mantissa bits, bias 3
        for f in range(1, 4):
            for m in range(32):
                out.append((Fraction(32 + m, 32) * Fraction(2) ** (f - 3), (f << 5) | m))
        # low mode: 3-bit exponent, 2 mantissa bits, bias 10
        for f in range(8):
            for m in range(4):
                v = Fraction(m, 4) * Fraction(2) ** -9 if f == 0 else Fraction(4 + m, 4) * Fraction(2) ** (f - 10)
                out.append((v, (f << 2) | m))
    else:
        mf = fmt.m_f
        for f in range(1 << fmt.e_f):
            for m in range(1 << mf):
                if f == 0:
                    v = Fraction(m, 1 << mf) * Fraction(2) ** (1 - fmt.bias)
                else:
                    v = Fraction((1 << mf) + m, 1 << mf) * Fraction(2) ** (f - fmt.bias)
                out.append((v, (f << mf) | m))
    out.sort()
    return tuple(out)


def oracle_quantize(x: float, S_e: int, fmt) -> tuple[Fraction, int]:
    """Nearest representable magnitude, ties to the even code; sign bit kept."""
    a = abs(Fraction(x)) / Fraction(2) ** S_e
    best = None
    for v, c in magnitudes(fmt):
        key = (abs(v - a), c & 1)
        if best is None or key < best[0]:
            best = (key, v, c)
    _, v, c = best
    neg = x < 0 or (x == 0 and str(x).startswith("-"))
    sign_bit = 1 << (fmt.width - 1)
    return (-v if neg else v) * Fraction(2) ** S_e, c | (sign_bit if neg else 0)


def fp12_values() -> list[tuple[Fraction, int]]:
    """Every non-negative E4M7 (bias 7) value with its 11-bit magnitude code."""
    out = []
    for f in range(16):
        for m in range(128):
            if f == 0:
                v = Fraction(m, 128) * Fraction(2) ** -6
            else:
                v = Fraction(128 + m, 128) * Fraction(2) ** (f - 7)
            out.append((v, (f << 7) | m))
    return out


def oracle_fp12(x: float) -> float:
    a = abs(Fraction(x))
    key, v = min(((abs(v - a), c & 1), v) for v, c in fp12_values())
    return float(-v if x < 0 else v)
