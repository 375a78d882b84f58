"""Adaptive multi-symbol arithmetic (range) coder, 32-bit integer arithmetic.

Classic carry-less scheme with pending-bit underflow handling. Output bit
count is exact; the final partial byte is zero padded.
"""

from __future__ import annotations

from typing import List, Optional

from .bitio import BitReader, BitWriter, CorruptStreamError

PRECISION = 32
_FULL = (1 << PRECISION) - 1
_HALF = 1 << (PRECISION - 1)
_QUARTER = 1 << (PRECISION - 2)
MAX_TOTAL = 1 << 16


class AdaptiveModel:
    """Frequency table with +increment updates and periodic halving."""

    def __init__(self, num_symbols: int, increment: int = 24):
        self.freqs = [1] * num_symbols
        self.total = num_symbols
        self.increment = increment

    def interval(self, symbol: int):
        low = sum(self.freqs[:symbol])
        return low, low + self.freqs[symbol], self.total

    def find(self, target: int):
        cum = 0
        for s, f in enumerate(self.freqs):
            if cum + f > target:
                return s, cum, cum + f
            cum += f
        raise CorruptStreamError("symbol lookup out of range")

    def update(self, symbol: int) -> None:
        self.freqs[symbol] += self.increment
        self.total += self.increment
        if self.total > MAX_TOTAL:
            self.freqs = [max(1, f // 2) for f in self.freqs]
            self.total = sum(self.freqs)


class RangeEncoder:
    def __init__(self, out: Optional[BitWriter] = None):
        self.low = 0
        self.high = _FULL
        self.pending = 0
        self.out = out if out is not None else BitWriter()

    def _emit(self, bit: int) -> None:
        self.out.write(bit, 1)
        for _ in range(self.pending):
            self.out.write(1 - bit, 1)
        self.pending = 0

    def encode(self, model: AdaptiveModel, symbol: int) -> None:
        lo, hi, total = model.interval(symbol)
        span = self.high - self.low + 1
        self.high = self.low + span * hi // total - 1
        self.low = self.low + span * lo // total
        while True:
            if self.high < _HALF:
                self._emit(0)
            elif self.low >= _HALF:
                self._emit(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < _HALF + _QUARTER:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                break
            self.low = 2 * self.low
            self.high = 2 * self.high + 1
        model.update(symbol)

    def finish(self):
        """Flush and return ``(payload, bit_count)``."""
        self.pending += 1
        self._emit(0 if self.low < _QUARTER else 1)
        return self.out.getvalue(), self.out.bit_count


class RangeDecoder:
    def __init__(self, reader: BitReader):
        self.reader = reader
        self.low = 0
        self.high = _FULL
        self.value = 0
        for _ in range(PRECISION):
            self.value = (self.value << 1) | self._next_bit()

    def _next_bit(self) -> int:
        # past the end the stream is implicitly zero-extended
        return self.reader.read(1) if self.reader.remaining else 0

    def decode(self, model: AdaptiveModel) -> int:
        span = self.high - self.low + 1
        target = ((self.value - self.low + 1) * model.total - 1) // span
        if not 0 <= target < model.total:
            raise CorruptStreamError("range decoder desynchronised")
        symbol, lo, hi = model.find(target)
        self.high = self.low + span * hi // model.total - 1
        self.low = self.low + span * lo // model.total
        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.value -= _HALF
            elif self.low >= _QUARTER and self.high < _HALF + _QUARTER:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.value -= _QUARTER
            else:
                break
            self.low = 2 * self.low
            self.high = 2 * self.high + 1
            self.value = (self.value << 1) | self._next_bit()
        model.update(symbol)
        return symbol


def encode_symbols(symbols: List[int], contexts: List[int], num_symbols: int, num_contexts: int):
    models = [AdaptiveModel(num_symbols) for _ in range(num_contexts)]
    enc = RangeEncoder()
    for s, c in zip(symbols, contexts):
        enc.encode(models[c], s)
    return enc.finish()


def decode_symbols(payload: bytes, bit_count: int, contexts: List[int], num_symbols: int,
                   num_contexts: int) -> List[int]:
    models = [AdaptiveModel(num_symbols) for _ in range(num_contexts)]
    dec = RangeDecoder(BitReader(payload, bit_count))
    return [dec.decode(models[c]) for c in contexts]
