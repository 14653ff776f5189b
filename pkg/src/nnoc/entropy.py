"""Binary range coder with 14-bit frequencies, and run-length coding.

The coder keeps a 32-bit ``range`` and a ``low`` register with one extra
carry bit.  Bytes leave ``low`` through a one-byte cache plus a count of
pending 0xFF bytes, so a late carry can still ripple into them.  All state
is integer; streams are identical on every platform.

Stream layout: the always-zero first cache byte is not written, the flush
picks the value in the final interval with the most trailing zero bytes,
and up to four trailing zero bytes are dropped.  The decoder reads missing
bytes past the end as zero, which it may do at most four times.
"""

from __future__ import annotations

from .errors import CorruptRle, InvalidDistribution, StreamExhausted
from .model import PRECISION_BITS, TOTAL, QuantizedDist

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_MAX_PAD = 4


def _check_c1(c1):
    if not 1 <= c1 <= TOTAL - 1:
        raise InvalidDistribution(f"count c1={c1} outside [1, {TOTAL - 1}]")


def _check_dist(dist: QuantizedDist):
    if dist.c0 < 1 or dist.c1 < 1 or dist.c0 + dist.c1 != TOTAL:
        raise InvalidDistribution(f"invalid distribution {dist}")


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self.symbols = 0

    def encode(self, bit, c1):
        """Code ``bit`` with P(1) = c1 / 2^14."""
        if not 0 < c1 < TOTAL:
            raise InvalidDistribution(f"count c1={c1} outside [1, {TOTAL - 1}]")
        bound = (self.range >> PRECISION_BITS) * (TOTAL - c1)
        if bit:
            self.low += bound
            self.range -= bound
        else:
            self.range = bound
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()
        self.symbols += 1

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self._cache
            out = self._out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def finish(self) -> bytes:
        low, rng = self.low, self.range
        for shift in (32, 24, 16, 8, 0):
            v = ((low + (1 << shift) - 1) >> shift) << shift
            if v < low + rng:
                self.low = v
                break
        for _ in range(5):
            self._shift_low()
        data = bytes(self._out)
        assert data[0] == 0, "leading cache byte must be zero"
        data = data[1:]
        strip = 0
        while strip < _MAX_PAD and strip < len(data) and data[-1 - strip] == 0:
            strip += 1
        return data[: len(data) - strip]


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self):
        pos = self.pos
        self.pos = pos + 1
        if pos < len(self.data):
            return self.data[pos]
        if pos >= len(self.data) + _MAX_PAD:
            raise StreamExhausted("read past the end of the arithmetic-coded payload")
        return 0

    def decode(self, c1):
        if not 0 < c1 < TOTAL:
            raise InvalidDistribution(f"count c1={c1} outside [1, {TOTAL - 1}]")
        bound = (self.range >> PRECISION_BITS) * (TOTAL - c1)
        if self.code < bound:
            self.range = bound
            bit = 0
        else:
            self.code -= bound
            self.range -= bound
            bit = 1
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8
        return bit


# functional surface --------------------------------------------------------

def ac_encode(bit, dist: QuantizedDist, st: RangeEncoder | None = None) -> RangeEncoder:
    _check_dist(dist)
    st = st or RangeEncoder()
    st.encode(int(bit), dist.c1)
    return st


def ac_decode(dist: QuantizedDist, st: RangeDecoder):
    _check_dist(dist)
    return st.decode(dist.c1), st


def ac_finish(st: RangeEncoder) -> bytes:
    return st.finish()


def encode_bits(bits, c1s) -> bytes:
    enc = RangeEncoder()
    for b, c in zip(bits, c1s):
        enc.encode(int(b), int(c))
    return enc.finish()


def decode_bits(data, c1s) -> list[int]:
    dec = RangeDecoder(data)
    return [dec.decode(int(c)) for c in c1s]


# run-length coding ---------------------------------------------------------

def rle_runs(mask):
    """``(first value, run lengths)`` of a binary sequence."""
    mask = [int(bool(v)) for v in mask]
    if not mask:
        return 0, []
    runs = []
    value = mask[0]
    n = 0
    cur = value
    for v in mask:
        if v == cur:
            n += 1
        else:
            runs.append(n)
            cur, n = v, 1
    runs.append(n)
    return value, runs


def _varint(n):
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return out


def rle_encode(mask) -> bytes:
    """Leading bit value as one byte, then each run length as a LEB128 varint."""
    value, runs = rle_runs(mask)
    out = bytearray([value])
    for r in runs:
        out += _varint(r)
    return bytes(out)


def rle_decode(data, length) -> list[int]:
    if not data:
        raise CorruptRle("empty run-length block")
    value = data[0]
    if value not in (0, 1):
        raise CorruptRle(f"leading value byte {value}")
    mask = []
    pos = 1
    while pos < len(data):
        n, shift = 0, 0
        while True:
            if pos >= len(data):
                raise CorruptRle("truncated varint")
            byte = data[pos]
            pos += 1
            n |= (byte & 0x7F) << shift
            shift += 7
            if not byte & 0x80:
                break
        if n == 0:
            raise CorruptRle("zero-length run")
        mask.extend([value] * n)
        if len(mask) > length:
            raise CorruptRle("runs exceed mask length")
        value ^= 1
    if len(mask) != length:
        raise CorruptRle(f"runs cover {len(mask)} of {length} entries")
    return mask
