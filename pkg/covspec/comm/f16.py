"""
binary16 quantization of logits for the wire

numpy's float64 -> float16 cast rounds to nearest even and keeps subnormals; out of range
magnitudes are clipped to the largest finite value first so no infinity is ever encoded.
"""
from typing import Sequence

import numpy as np

from covspec.errors import InvalidValue

F16_MAX = 65504.0


def f16_encode(x: float) -> int:
    if np.isnan(x):
        raise InvalidValue("NaN cannot be encoded")
    return int(np.float16(np.clip(x, -F16_MAX, F16_MAX)).view(np.uint16))


def f16_decode(code: int) -> float:
    return float(np.uint16(code).view(np.float16))


def f16_encode_array(values: Sequence[float]) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(np.isnan(values)):
        raise InvalidValue("NaN cannot be encoded")
    return np.clip(values, -F16_MAX, F16_MAX).astype(np.float16).view(np.uint16)


def f16_decode_array(codes: np.ndarray) -> np.ndarray:
    return np.asarray(codes, dtype=np.uint16).view(np.float16).astype(np.float64)


def f16_roundtrip(values: Sequence[float]) -> np.ndarray:
    """
    the values a receiver sees after encoding and decoding
    """
    return f16_decode_array(f16_encode_array(values))
