"""Quantization-error analytics.

``max_error_int``/``max_error_fp`` are the closed-form worst-case bounds
evaluated literally.  ``empirical_max_error`` is the brute-force sweep the
tests treat as ground truth, and ``tensor_error_report`` gathers MSE,
underflow and exponent-distance statistics for a whole matrix.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import scalar_codec as sc
from .block_quant import TileShape, quantize_tensor
from .errors import NonFiniteInput
from .formats import ElementFormat

SWEEP_BITS = 12


def max_error_int(S_e: int, e_x: int, m_i: int) -> float:
    return math.ldexp(1.0, S_e - (m_i - 2)) * math.ldexp(1.0, (S_e - e_x) - (m_i - 2))


def max_error_fp(e_x: int, x_le: int, m_f: int) -> float:
    return math.ldexp(1.0, e_x - m_f) * math.ldexp(1.0, -min(x_le, 0) - m_f)


def sweep_significands(bits: int = SWEEP_BITS) -> np.ndarray:
    """All significands ``1 + k/2**bits`` for ``k < 2**bits``."""
    return 1.0 + np.arange(1 << bits, dtype=np.float64) / (1 << bits)


def empirical_max_error(fmt: ElementFormat, d: int, S_e: int = 0, bits: int = SWEEP_BITS) -> float:
    """Largest ``|x - Q(x)|`` over the significand sweep at ``e_x = S_e - d``.

    Points above the format's largest magnitude are skipped: what they
    measure is saturation, not rounding.
    """
    if d < 0:
        raise ValueError("distance must be >= 0")
    x = np.ldexp(sweep_significands(bits), S_e - d)
    x = x[x <= sc.max_magnitude(fmt, S_e)]
    q, _ = sc.quantize_array(x, S_e, fmt)
    return float(np.max(np.abs(x - q)))


def underflow_loss(fmt: ElementFormat, d: int, S_e: int = 0, bits: int = SWEEP_BITS) -> float:
    """Largest magnitude flushed to zero at distance ``d`` (0 if none)."""
    x = np.ldexp(sweep_significands(bits), S_e - d)
    q, _ = sc.quantize_array(x, S_e, fmt)
    flushed = x[q == 0]
    return float(flushed.max()) if flushed.size else 0.0


@dataclass
class ErrorReport:
    mse: float
    max_abs_err: float
    underflow_ratio: float
    distance_histogram: dict[int, int] = field(default_factory=dict)
    mean_distance: float = 0.0
    n_elements: int = 0
    n_nonzero: int = 0
    n_underflow: int = 0

    def merge(self, other: "ErrorReport") -> "ErrorReport":
        """Combine reports over disjoint element sets."""
        n = self.n_elements + other.n_elements
        nz = self.n_nonzero + other.n_nonzero
        hist = Counter(self.distance_histogram)
        hist.update(other.distance_histogram)
        sq = self.mse * self.n_elements + other.mse * other.n_elements
        dist = self.mean_distance * self.n_nonzero + other.mean_distance * other.n_nonzero
        under = self.n_underflow + other.n_underflow
        return ErrorReport(
            mse=sq / n if n else 0.0,
            max_abs_err=max(self.max_abs_err, other.max_abs_err),
            underflow_ratio=under / nz if nz else 0.0,
            distance_histogram=dict(sorted(hist.items())),
            mean_distance=dist / nz if nz else 0.0,
            n_elements=n,
            n_nonzero=nz,
            n_underflow=under,
        )

    def as_pairs(self) -> list[tuple[str, float]]:
        pairs = [
            ("mse", self.mse),
            ("max_err", self.max_abs_err),
            ("underflow_ratio", self.underflow_ratio),
            ("mean_distance", self.mean_distance),
            ("elements", self.n_elements),
            ("nonzero", self.n_nonzero),
            ("underflows", self.n_underflow),
        ]
        pairs += [(f"distance_hist.{d}", c) for d, c in sorted(self.distance_histogram.items())]
        return pairs


def tensor_error_report(original, fmt: ElementFormat, tile: TileShape) -> ErrorReport:
    x = np.asarray(original, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input contains NaN or Inf")
    q = quantize_tensor(x, tile, fmt)
    xq = q.dequantize()
    err = x - xq
    nz = x != 0
    n_nz = int(nz.sum())
    under = int((nz & (xq == 0)).sum())

    S = q.element_exponents()
    e_x = np.frexp(np.abs(x))[1].astype(np.int64) - 1
    dist = (S - e_x)[nz]
    values, counts = np.unique(dist, return_counts=True)
    return ErrorReport(
        mse=float(np.mean(err**2)) if x.size else 0.0,
        max_abs_err=float(np.max(np.abs(err))) if x.size else 0.0,
        underflow_ratio=under / n_nz if n_nz else 0.0,
        distance_histogram={int(v): int(c) for v, c in zip(values, counts)},
        mean_distance=float(dist.mean()) if n_nz else 0.0,
        n_elements=int(x.size),
        n_nonzero=n_nz,
        n_underflow=under,
    )
