"""
Wire codec: frame = 1-byte message type | u32 little-endian body length | body.

Token ids are u32, counters u16 (u32 for the vocabulary size), logits binary16 codes.
"""
from dataclasses import dataclass, fields
from typing import Tuple, Union

import struct
import numpy as np

from covspec.errors import FrameError, UnknownMessage

HEADER = struct.Struct('<BI')
HEADER_SIZE = HEADER.size  # 5

UPLINK = 0x01
DOWNLINK_ACCEPT = 0x02
DOWNLINK_REJECT = 0x03
UPLINK_FULL = 0x04
DOWNLINK_CORRECTED = 0x05
FIN = 0x06

U16_MAX = 2**16 - 1
U32_MAX = 2**32 - 1


class Message:
    """
    value semantics for message dataclasses holding numpy arrays
    """
    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


@dataclass(eq=False)
class Uplink(Message):
    gated: Tuple[int, ...]  # tokens committed on the device without verification
    draft: Tuple[int, ...]
    draft_scores: np.ndarray  # binary16 codes of log p_d of each drafted token


@dataclass(eq=False)
class UplinkFull(Message):
    gated: Tuple[int, ...]
    draft: Tuple[int, ...]
    vocab_size: int
    draft_logits: np.ndarray  # binary16 codes, (len(draft), vocab_size)


@dataclass(eq=False)
class DownlinkAccept(Message):
    accepted_len: int
    bonus: int


@dataclass(eq=False)
class DownlinkReject(Message):
    accepted_len: int
    target_logits: np.ndarray  # binary16 codes at the first rejected position


@dataclass(eq=False)
class DownlinkCorrected(Message):
    accepted_len: int
    token: int  # correction sampled on the edge


@dataclass(eq=False)
class Fin(Message):
    pass


AnyMessage = Union[Uplink, UplinkFull, DownlinkAccept, DownlinkReject, DownlinkCorrected, Fin]

MESSAGE_TYPES = {
    Uplink: UPLINK,
    DownlinkAccept: DOWNLINK_ACCEPT,
    DownlinkReject: DOWNLINK_REJECT,
    UplinkFull: UPLINK_FULL,
    DownlinkCorrected: DOWNLINK_CORRECTED,
    Fin: FIN,
}


def _check_range(name: str, value: int, high: int):
    if not 0 <= value <= high:
        raise ValueError(f"{name}={value} does not fit its field (max {high})")


def _ids(tokens) -> bytes:
    for t in tokens:
        _check_range("token id", t, U32_MAX)
    return np.asarray(tokens, dtype='<u4').tobytes()


def _codes(codes: np.ndarray) -> bytes:
    return np.asarray(codes, dtype='<u2').tobytes()


def encode_body(msg: AnyMessage) -> bytes:
    if isinstance(msg, (Uplink, UplinkFull)):
        _check_range("n_gated", len(msg.gated), U16_MAX)
        _check_range("n_draft", len(msg.draft), U16_MAX)
        if isinstance(msg, Uplink):
            if np.shape(msg.draft_scores) != (len(msg.draft),):
                raise ValueError("one draft score per drafted token is required")
            head = struct.pack('<HH', len(msg.gated), len(msg.draft))
            return head + _ids(msg.gated) + _ids(msg.draft) + _codes(msg.draft_scores)
        _check_range("vocab_size", msg.vocab_size, U32_MAX)
        if np.shape(msg.draft_logits) != (len(msg.draft), msg.vocab_size):
            raise ValueError("one logit row per drafted token is required")
        head = struct.pack('<HHI', len(msg.gated), len(msg.draft), msg.vocab_size)
        return head + _ids(msg.gated) + _ids(msg.draft) + _codes(msg.draft_logits)
    if isinstance(msg, DownlinkAccept):
        _check_range("accepted_len", msg.accepted_len, U16_MAX)
        _check_range("bonus", msg.bonus, U32_MAX)
        return struct.pack('<HI', msg.accepted_len, msg.bonus)
    if isinstance(msg, DownlinkReject):
        _check_range("accepted_len", msg.accepted_len, U16_MAX)
        vocab_size = len(msg.target_logits)
        _check_range("vocab_size", vocab_size, U32_MAX)
        return struct.pack('<HI', msg.accepted_len, vocab_size) + _codes(msg.target_logits)
    if isinstance(msg, DownlinkCorrected):
        _check_range("accepted_len", msg.accepted_len, U16_MAX)
        _check_range("token", msg.token, U32_MAX)
        return struct.pack('<HI', msg.accepted_len, msg.token)
    if isinstance(msg, Fin):
        return b''
    raise UnknownMessage(f"cannot encode {type(msg).__name__}")


def encode_message(msg: AnyMessage) -> bytes:
    body = encode_body(msg)
    return HEADER.pack(MESSAGE_TYPES[type(msg)], len(body)) + body


class _BodyReader:
    """
    sequential reads that never go past the declared body
    """
    def __init__(self, body: bytes):
        self.body = body
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.body):
            raise FrameError(f"truncated body: need {n} bytes at offset {self.pos}, body has {len(self.body)}")
        chunk = self.body[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def ids(self, n: int) -> Tuple[int, ...]:
        return tuple(int(t) for t in np.frombuffer(self.take(4 * n), dtype='<u4'))

    def codes(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(2 * n), dtype='<u2').astype(np.uint16)

    def finish(self):
        if self.pos != len(self.body):
            raise FrameError(f"{len(self.body) - self.pos} unexpected bytes after the message fields")


def decode_body(msg_type: int, body: bytes) -> AnyMessage:
    reader = _BodyReader(body)
    if msg_type == UPLINK:
        n_gated, n_draft = reader.unpack('<HH')
        msg = Uplink(gated=reader.ids(n_gated), draft=reader.ids(n_draft), draft_scores=reader.codes(n_draft))
    elif msg_type == UPLINK_FULL:
        n_gated, n_draft, vocab_size = reader.unpack('<HHI')
        gated, draft = reader.ids(n_gated), reader.ids(n_draft)
        logits = reader.codes(n_draft * vocab_size).reshape(n_draft, vocab_size)
        msg = UplinkFull(gated=gated, draft=draft, vocab_size=vocab_size, draft_logits=logits)
    elif msg_type == DOWNLINK_ACCEPT:
        msg = DownlinkAccept(*reader.unpack('<HI'))
    elif msg_type == DOWNLINK_REJECT:
        accepted_len, vocab_size = reader.unpack('<HI')
        msg = DownlinkReject(accepted_len=accepted_len, target_logits=reader.codes(vocab_size))
    elif msg_type == DOWNLINK_CORRECTED:
        msg = DownlinkCorrected(*reader.unpack('<HI'))
    elif msg_type == FIN:
        msg = Fin()
    else:
        raise UnknownMessage(f"unknown message type 0x{msg_type:02x}")
    reader.finish()
    return msg


def decode_header(header: bytes) -> Tuple[int, int]:
    if len(header) < HEADER_SIZE:
        raise FrameError(f"truncated header: {len(header)} of {HEADER_SIZE} bytes")
    return HEADER.unpack(header[:HEADER_SIZE])


def decode_message(frame: bytes) -> AnyMessage:
    msg_type, length = decode_header(frame)
    if msg_type not in MESSAGE_TYPES.values():
        raise UnknownMessage(f"unknown message type 0x{msg_type:02x}")
    if len(frame) < HEADER_SIZE + length:
        raise FrameError(f"truncated frame: body declares {length} bytes, {len(frame) - HEADER_SIZE} present")
    if len(frame) > HEADER_SIZE + length:
        raise FrameError(f"{len(frame) - HEADER_SIZE - length} trailing bytes after the frame")
    return decode_body(msg_type, frame[HEADER_SIZE:])


def message_type(msg: AnyMessage) -> int:
    return MESSAGE_TYPES[type(msg)]
