import numpy as np
import pytest

from covspec.comm.f16 import F16_MAX, f16_encode, f16_decode, f16_encode_array, f16_decode_array, f16_roundtrip
from covspec.errors import InvalidValue


@pytest.mark.parametrize("x,code", [
    (1.0, 0x3C00),
    (0.0, 0x0000),
    (-2.0, 0xC000),
    (0.5, 0x3800),
    (2.0**-24, 0x0001),  # smallest subnormal
    (65504.0, 0x7BFF),
])
def test_known_codes(x, code):
    assert f16_encode(x) == code
    assert f16_decode(code) == x


@pytest.mark.parametrize("x,code", [(1e6, 0x7BFF), (-1e6, 0xFBFF), (np.inf, 0x7BFF), (-np.inf, 0xFBFF)])
def test_saturation(x, code):
    assert f16_encode(x) == code


def test_nan():
    with pytest.raises(InvalidValue):
        f16_encode(float('nan'))
    with pytest.raises(InvalidValue):
        f16_encode_array([0.0, np.nan])


def test_negative_zero():
    assert f16_encode(-0.0) == 0x8000


def test_error_bound():
    rng = np.random.default_rng(0)
    x = rng.uniform(-F16_MAX, F16_MAX, size=10**5)
    x[:1000] = rng.uniform(-1, 1, size=1000)
    err = np.abs(f16_roundtrip(x) - x)
    bound = np.maximum(np.abs(x) * 2.0**-11, 2.0**-25)
    assert np.all(err <= bound)


def test_idempotent_on_every_code():
    codes = np.arange(2**16, dtype=np.uint16)
    exponent = (codes >> 10) & 0x1F
    finite = codes[exponent != 0x1F]  # infinities and NaN payloads are never produced
    np.testing.assert_array_equal(f16_encode_array(f16_decode_array(finite)), finite)


def test_array_matches_scalar():
    values = [0.1, -3.25, 1e-6, 7e4, -123.456]
    assert [f16_encode(v) for v in values] == list(f16_encode_array(values))
