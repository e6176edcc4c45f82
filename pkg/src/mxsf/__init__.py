"""Microscaling (MX) block quantization: MXINT8, MXFP8/6/4 and the dual-mode MXSF
format, tile-based blocks, error analytics and a SAFE-MAC GEMM model."""

from .block_quant import (
    QuantizedBlock,
    QuantizedTensor,
    TileShape,
    count_quantization_events,
    dequantize_block,
    dequantize_tensor,
    quantize_block,
    quantize_tensor,
    shared_exponent,
    transpose_view,
)
from .error_metrics import ErrorReport, empirical_max_error, max_error_fp, max_error_int, tensor_error_report
from .formats import (
    FP4_E2M1,
    FP5_E3M2,
    FP6_E2M3,
    FP6_E3M2,
    FP8_E2M5,
    FP8_E4M3,
    FP8_E5M2,
    INT8,
    MXSF,
    ElementFormat,
    Kind,
)
from .safe_mac import DEFAULT, EXACT, MacConfig, block_dot, gemm, reference_gemm
from .scalar_codec import ElementCode, ScalarDecomp, decode, decompose, encode, encode_mxsf, quantize
from .tensor_store import load_dense, load_mxb, save_dense, save_mxb

__version__ = "0.1.0"
