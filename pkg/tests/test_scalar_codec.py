import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from oracles import magnitudes, oracle_quantize

from mxsf import scalar_codec as sc
from mxsf.errors import ExponentAboveShared, MalformedCode, NonFiniteInput
from mxsf.formats import FP5_E3M2, FP8_E2M5, FP8_E4M3, INT8, MXSF, PREDEFINED, ElementFormat

ALL_FORMATS = list(PREDEFINED)
FMT_IDS = [f.name for f in ALL_FORMATS]


def block_member(S_e):
    """Finite binary64 with exponent in [S_e - 14, S_e]."""
    return st.tuples(
        st.integers(0, 14), st.integers(0, (1 << 52) - 1), st.booleans()
    ).map(lambda t: (-1 if t[2] else 1) * math.ldexp(1 + t[1] * 2.0**-52, S_e - t[0]))


# --- decompose / rounding helpers ---------------------------------------------


@pytest.mark.parametrize(
    "x, sign, exp, sig",
    [(6.0, 1, 2, 1.5), (-0.375, -1, -2, 1.5), (1.0, 1, 0, 1.0), (2.0**-1074, 1, -1074, 1.0)],
)
def test_decompose_examples(x, sign, exp, sig):
    d = sc.decompose(x)
    assert (d.sign, d.exponent, d.significand, d.is_zero) == (sign, exp, sig, False)


def test_decompose_zero():
    assert sc.decompose(0.0).is_zero
    assert sc.decompose(-0.0).sign == -1


@pytest.mark.parametrize("x", [math.nan, math.inf, -math.inf])
def test_decompose_rejects_non_finite(x):
    with pytest.raises(NonFiniteInput):
        sc.decompose(x)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_decompose_reconstructs(x):
    d = sc.decompose(x)
    assert d.value == x
    if not d.is_zero:
        assert 1.0 <= d.significand < 2.0


@pytest.mark.parametrize(
    "v, bits, out",
    [(1.5, 0, 2.0), (2.5, 0, 2.0), (1.25, 1, 1.0), (1.75, 1, 2.0), (1.0625, 3, 1.0), (1.1875, 3, 1.25)],
)
def test_round_significand_half_even(v, bits, out):
    assert sc.round_significand(v, bits) == out


@pytest.mark.parametrize("e_x, S_e, fmt, le", [(0, 0, FP8_E2M5, 3), (-2, 0, FP8_E2M5, 1), (-5, 0, FP8_E2M5, -2), (3, 3, FP8_E4M3, 15)])
def test_local_exponent(e_x, S_e, fmt, le):
    assert sc.local_exponent(e_x, S_e, fmt) == le


# --- frozen per-format examples -------------------------------------------------


@pytest.mark.parametrize(
    "x, S_e, value, bits",
    [(0.75, 0, 0.75, 0x30), (1.25 * 2**-6, 0, 2**-6, 0x01), (1.0, 0, 1.0, 0x40), (-1.0, 0, -1.0, 0xC0), (2**-8, 0, 0.0, 0x00)],
)
def test_quantize_int8_examples(x, S_e, value, bits):
    q, code = sc.quantize_int(x, S_e, 8)
    assert q == value and code.bits == bits


@pytest.mark.parametrize(
    "x, S_e, value, bits",
    [(1.5, 0, 1.5, 0x70), (2**-5, 0, 2**-5, 0x04), (2**-12, 0, 0.0, 0x00), (2**-7, 0, 2**-7, 0x01)],
)
def test_quantize_e2m5_examples(x, S_e, value, bits):
    q, code = sc.quantize_fp(x, S_e, FP8_E2M5)
    assert q == value and code.bits == bits


@pytest.mark.parametrize(
    "x, value, bits, mode",
    [(1.5, 1.5, 0x70, "E2M5"), (0.5, 0.5, 0x40, "E2M5"), (2**-3, 2**-3, 0x1C, "E3M2"), (2**-9, 2**-9, 0x04, "E3M2"), (2**-10, 2**-10, 0x02, "E3M2"), (2**-11, 2**-11, 0x01, "E3M2")],
)
def test_encode_mxsf_examples(x, value, bits, mode):
    q, code = sc.encode_mxsf(x, 0)
    assert (q, code.bits, code.mxsf_mode) == (value, bits, mode)


def test_mxsf_promotes_round_up_into_high_mode():
    # just under 2^-2 rounds up past the E3M2 maximum 1.75 * 2^-3
    q, code = sc.encode_mxsf(0.2499, 0)
    assert q == 0.25 and code.mxsf_mode == "E2M5" and code.bits == 0x20


def test_dynamic_range_endpoints():
    assert min(v for v, _ in magnitudes(MXSF) if v > 0) == Fraction(1, 2**11)
    assert sc.decode(sc.ElementCode(0x04, MXSF), 0) == 2**-9
    assert sc.max_magnitude(MXSF, 0) == sc.max_magnitude(FP8_E2M5, 0) == 1.96875
    assert sc.max_magnitude(INT8, 0) == 127 / 64
    assert sc.max_magnitude(FP8_E4M3, 0) == 1.875


def test_exponent_above_shared_rejected():
    with pytest.raises(ExponentAboveShared):
        sc.quantize(2.0, 0, FP8_E2M5)
    with pytest.raises(ExponentAboveShared):
        sc.quantize_array(np.array([2.0]), 0, MXSF)


def test_malformed_code_rejected():
    with pytest.raises(MalformedCode):
        sc.ElementCode(256, FP8_E2M5)
    with pytest.raises(MalformedCode):
        sc.decode_array(np.array([70]), 0, FP5_E3M2)


def test_mode_not_applicable_outside_mxsf():
    assert sc.ElementCode(0x40, FP8_E2M5).mxsf_mode == "not_applicable"


def test_negative_zero_keeps_sign_bit():
    q, code = sc.quantize(-0.0, 0, MXSF)
    assert code.bits == 0x80 and math.copysign(1, q) == -1


# --- exhaustive round trips -------------------------------------------------------


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
def test_every_code_round_trips_scalar(fmt):
    for S_e in (-64, -3, 0, 5, 64):
        for c in range(fmt.n_codes):
            v = sc.decode(sc.ElementCode(c, fmt), S_e)
            assert sc.encode(v, S_e, fmt).bits == c


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
def test_every_code_round_trips_vectorized(fmt):
    codes = np.arange(fmt.n_codes)
    for S_e in range(-64, 65):
        v = sc.decode_array(codes, S_e, fmt)
        _, back = sc.quantize_array(v, S_e, fmt)
        assert np.array_equal(back, codes)


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
def test_code_table_matches_oracle_enumeration(fmt):
    table = sc.code_table(fmt)
    for v, c in magnitudes(fmt):
        assert table[c] == float(v)
        assert table[c | fmt.sign_mask] == -float(v)


# --- properties against the oracle ----------------------------------------------------


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
@given(data=st.data())
def test_quantize_matches_nearest_even_oracle(fmt, data):
    S_e = data.draw(st.integers(-20, 20))
    x = data.draw(block_member(S_e))
    value, code = sc.quantize(x, S_e, fmt)
    ref_value, ref_code = oracle_quantize(x, S_e, fmt)
    assert Fraction(value) == ref_value
    assert code.bits == ref_code


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
@given(data=st.data())
def test_vector_path_equals_scalar_path(fmt, data):
    S_e = data.draw(st.integers(-30, 30))
    xs = data.draw(st.lists(block_member(S_e), min_size=1, max_size=40))
    values, codes = sc.quantize_array(np.array(xs), S_e, fmt)
    for x, v, c in zip(xs, values, codes):
        sv, scode = sc.quantize(x, S_e, fmt)
        assert v == sv and int(c) == scode.bits


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
@given(data=st.data())
def test_error_within_half_grid_step(fmt, data):
    S_e = data.draw(st.integers(-10, 10))
    x = data.draw(block_member(S_e))
    value, _ = sc.quantize(x, S_e, fmt)
    step = sc.grid_step(fmt, sc.decompose(x).exponent, S_e)
    top = sc.max_magnitude(fmt, S_e)
    if abs(x) > top:
        assert value == math.copysign(top, x)
    else:
        assert abs(value - x) <= step / 2


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
@given(data=st.data())
def test_monotone(fmt, data):
    S_e = data.draw(st.integers(-10, 10))
    xs = sorted(data.draw(st.lists(block_member(S_e), min_size=2, max_size=30)))
    values, _ = sc.quantize_array(np.array(xs), S_e, fmt)
    assert np.all(np.diff(values) >= 0)


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=FMT_IDS)
@given(data=st.data())
def test_sign_symmetric(fmt, data):
    S_e = data.draw(st.integers(-10, 10))
    x = data.draw(block_member(S_e))
    v_pos, c_pos = sc.quantize(abs(x), S_e, fmt)
    v_neg, c_neg = sc.quantize(-abs(x), S_e, fmt)
    assert v_neg == -v_pos
    assert c_neg.bits == c_pos.bits | fmt.sign_mask


@given(st.integers(-40, 40), st.integers(0, 2), st.integers(0, (1 << 52) - 1))
def test_mxsf_equals_e2m5_near_shared_exponent(S_e, gap, frac):
    x = math.ldexp(1 + frac * 2.0**-52, S_e - gap)
    assert sc.quantize(x, S_e, MXSF) == (sc.quantize(x, S_e, FP8_E2M5)[0], sc.encode(x, S_e, MXSF))
    assert sc.encode(x, S_e, MXSF).bits == sc.encode(x, S_e, FP8_E2M5).bits


@pytest.mark.parametrize(
    "gap, mxsf_step, e2m5_step",
    [(0, -5, -5), (2, -7, -7), (3, -5, -7), (4, -6, -7), (5, -7, -7), (6, -8, -7), (9, -11, -7), (12, -11, -7)],
)
def test_grid_steps_around_the_mode_switch(gap, mxsf_step, e2m5_step):
    assert sc.grid_step(MXSF, -gap, 0) == 2.0**mxsf_step
    assert sc.grid_step(FP8_E2M5, -gap, 0) == 2.0**e2m5_step


@given(st.integers(-40, 40), st.integers(5, 14), st.integers(0, (1 << 52) - 1))
def test_mxsf_at_least_as_accurate_as_e2m5_far_from_shared_exponent(S_e, gap, frac):
    x = math.ldexp(1 + frac * 2.0**-52, S_e - gap)
    err_sf = abs(sc.quantize(x, S_e, MXSF)[0] - x)
    err_e2 = abs(sc.quantize(x, S_e, FP8_E2M5)[0] - x)
    assert err_sf <= err_e2


def test_custom_format_round_trip():
    fmt = ElementFormat("FP7_E3M3", sc.Kind.FP, 3, 3, 7)
    for c in range(fmt.n_codes):
        assert sc.encode(sc.decode(sc.ElementCode(c, fmt), 2), 2, fmt).bits == c
