"""Element format descriptors.

Every element is stored relative to its block's shared exponent ``S_e``.
For floating-point kinds an exponent field ``f >= 1`` encodes
``2**(S_e + f - bias) * 1.m`` and ``f == 0`` encodes the subnormal
``2**(S_e + 1 - bias) * 0.m``.  There are no NaN/Inf encodings; with
``bias == 2**e_f - 1`` the top field lands exactly on ``S_e``.

Integer formats are sign-magnitude with ``m_f`` magnitude bits on the grid
``2**(S_e - (m_i - 2))`` where ``m_i = m_f + 1`` counts the sign bit.

``MXSF`` is the dual-mode 8-bit format: E2M5 (bias 3) while the two bits
after the sign are nonzero, and an E3M2 sub-format (bias 10) carried in the
low five bits when they are both zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Kind(enum.Enum):
    INT = "int"
    FP = "fp"
    MXSF = "mxsf"


@dataclass(frozen=True)
class ElementFormat:
    name: str
    kind: Kind
    e_f: int
    m_f: int
    bias: int

    @property
    def width(self) -> int:
        return self.e_f + self.m_f + 1

    @property
    def max_local_exp(self) -> int:
        return (1 << self.e_f) - 1 if self.kind is not Kind.INT else 0

    @property
    def m_i(self) -> int:
        """MXINT mantissa width including the sign bit."""
        return self.m_f + 1

    @property
    def n_codes(self) -> int:
        return 1 << self.width

    @property
    def sign_mask(self) -> int:
        return 1 << (self.width - 1)

    def __str__(self) -> str:
        return self.name


def int_format(m_i: int) -> ElementFormat:
    if m_i < 2:
        raise ValueError(f"m_i must be >= 2, got {m_i}")
    return ElementFormat(f"INT{m_i}", Kind.INT, 0, m_i - 1, 0)


def fp_format(e_f: int, m_f: int, bias: int | None = None, name: str | None = None) -> ElementFormat:
    if bias is None:
        bias = (1 << e_f) - 1
    if name is None:
        name = f"FP{e_f + m_f + 1}_E{e_f}M{m_f}"
    return ElementFormat(name, Kind.FP, e_f, m_f, bias)


INT8 = int_format(8)
FP8_E4M3 = fp_format(4, 3)
FP8_E5M2 = fp_format(5, 2)
FP8_E2M5 = fp_format(2, 5)
# MXSF's low half; named for its 5-bit payload, the sign is the MXSF sign bit
FP5_E3M2 = fp_format(3, 2, bias=10, name="FP5_E3M2")
FP4_E2M1 = fp_format(2, 1)
FP6_E2M3 = fp_format(2, 3)
FP6_E3M2 = fp_format(3, 2)
MXSF = ElementFormat("MXSF", Kind.MXSF, 2, 5, 3)

# E3M2 half of MXSF; gaps 3..9 are normal, deeper gaps subnormal.
MXSF_LOW = FP5_E3M2
MXSF_GAP_THRESHOLD = 3

# File-format ids; order is part of the on-disk contract.
FORMAT_IDS: dict[int, ElementFormat] = {
    0: INT8,
    1: FP8_E4M3,
    2: FP8_E5M2,
    3: FP8_E2M5,
    4: MXSF,
    5: FP4_E2M1,
    6: FP6_E2M3,
    7: FP6_E3M2,
}
ID_OF_FORMAT = {fmt: i for i, fmt in FORMAT_IDS.items()}

CLI_NAMES: dict[str, ElementFormat] = {
    "int8": INT8,
    "e4m3": FP8_E4M3,
    "e5m2": FP8_E5M2,
    "e2m5": FP8_E2M5,
    "mxsf": MXSF,
    "e2m1": FP4_E2M1,
    "e2m3": FP6_E2M3,
    "e3m2": FP6_E3M2,
}
CLI_NAME_OF_FORMAT = {fmt: name for name, fmt in CLI_NAMES.items()}

PREDEFINED = (INT8, FP8_E4M3, FP8_E5M2, FP8_E2M5, FP5_E3M2, FP4_E2M1, FP6_E2M3, FP6_E3M2, MXSF)


def by_name(name: str) -> ElementFormat:
    key = name.lower()
    if key in CLI_NAMES:
        return CLI_NAMES[key]
    for fmt in PREDEFINED:
        if fmt.name.lower() == key:
            return fmt
    raise KeyError(f"unknown element format {name!r}")
