"""Bit-level writer/reader with Exp-Golomb codes."""

from __future__ import annotations


class CorruptStreamError(ValueError):
    """Raised when a payload ends early or contains an invalid code."""


class BitWriter:
    def __init__(self):
        self._chunks = []
        self.bit_count = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits == 0:
            return
        if value < 0 or value >> nbits:
            raise ValueError(f"{value} does not fit in {nbits} bits")
        self._chunks.append(format(value, f"0{nbits}b"))
        self.bit_count += nbits

    def write_bits(self, bits: str) -> None:
        """Append a string of '0'/'1' characters verbatim."""
        if bits.strip("01"):
            raise ValueError("bit string may only contain '0' and '1'")
        if bits:
            self._chunks.append(bits)
            self.bit_count += len(bits)

    def write_ue(self, value: int) -> None:
        """Unsigned order-0 Exp-Golomb; length 2*floor(log2(v+1))+1."""
        m = value + 1
        k = m.bit_length() - 1
        self._chunks.append("0" * k + format(m, "b"))
        self.bit_count += 2 * k + 1

    def write_se(self, value: int) -> None:
        # 1 -> 1, -1 -> 2, 2 -> 3, ... so code length depends on |value| only
        self.write_ue(2 * value - 1 if value > 0 else -2 * value)

    def getvalue(self) -> bytes:
        bits = "".join(self._chunks)
        if not bits:
            return b""
        pad = (-len(bits)) % 8
        return int(bits + "0" * pad, 2).to_bytes((len(bits) + pad) // 8, "big")


class BitReader:
    def __init__(self, data: bytes, bit_count: int):
        if (bit_count + 7) // 8 != len(data):
            raise CorruptStreamError(
                f"payload holds {len(data)} bytes but header declares {bit_count} bits"
            )
        self._bits = "".join(format(b, "08b") for b in data)[:bit_count]
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self._bits) - self.pos

    def rest(self) -> str:
        """Unread bits as a '0'/'1' string (the position is not moved)."""
        return self._bits[self.pos:]

    def skip(self, nbits: int) -> None:
        if self.pos + nbits > len(self._bits):
            raise CorruptStreamError("unexpected end of payload")
        self.pos += nbits

    def read(self, nbits: int) -> int:
        if nbits == 0:
            return 0
        end = self.pos + nbits
        if end > len(self._bits):
            raise CorruptStreamError("unexpected end of payload")
        value = int(self._bits[self.pos:end], 2)
        self.pos = end
        return value

    def read_ue(self) -> int:
        k = 0
        while True:
            if self.pos >= len(self._bits):
                raise CorruptStreamError("unexpected end of payload")
            if self._bits[self.pos] == "1":
                break
            k += 1
            self.pos += 1
        return self.read(k + 1) - 1

    def read_se(self) -> int:
        m = self.read_ue()
        return (m + 1) // 2 if m % 2 else -(m // 2)


def ue_length(value: int) -> int:
    return 2 * (value + 1).bit_length() - 1


def se_length(value: int) -> int:
    return ue_length(2 * value - 1 if value > 0 else -2 * value)
