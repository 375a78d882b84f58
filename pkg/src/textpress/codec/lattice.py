"""Deterministic embedded pixel-lattice codec driven by a quality map.

Each 8x8 block takes the mean of the map over its in-image pixels and turns it
into a halving count ``h = round(5 q)``; every pixel of the block is rounded
to the lattice ``k / 2**(h + 1)``, so the step runs from 1/2 at quality 0 down
to 1/64 at quality 1. The lattices are nested and all contain 0 and 1, which
gives these exact properties without any clipping:

* a finer lattice never moves a pixel further from its true value, so raising
  the quality map can only lower the error of every pixel;
* a reconstruction is already a lattice point, so re-encoding it with the same
  map reproduces it bit for bit;
* a constant block stays constant, since the whole block shares one step;
* the stream is embedded: a base layer that ignores the map, a fixed-size
  level per block, then one fixed-length refinement symbol per pixel and
  extra halving. A higher map only appends symbols, so the bit count cannot
  drop.
"""

from __future__ import annotations

import itertools
import re
from functools import lru_cache

import numpy as np

from ..imagedata import RasterImage
from .bitio import BitReader, BitWriter, CorruptStreamError
from .rangecoder import AdaptiveModel, RangeDecoder, RangeEncoder

BLOCK = 8
HALVINGS = 5
LEVEL_BITS = 3
BASE_DIVISIONS = 2
COARSEST_STEP = 1.0 / BASE_DIVISIONS
FINEST_STEP = COARSEST_STEP / 2 ** HALVINGS

# static refinement code, indexed by symbol + 1
_CODES = np.array(["11", "0", "10"])
_SYMBOL = re.compile("0|1[01]")
_SYMBOL_VALUES = {"11": -1, "0": 0, "10": 1}


def quality_to_level(q) -> np.ndarray:
    """Halving count for a block of mean quality ``q`` (round half up)."""
    return np.clip(np.floor(np.asarray(q, dtype=np.float64) * HALVINGS + 0.5), 0, HALVINGS).astype(int)


def step_for_quality(q: float) -> float:
    return float(COARSEST_STEP * 2.0 ** -int(quality_to_level(q)))


def block_levels(qmap_weights: np.ndarray) -> np.ndarray:
    """Per-block level from the mean map weight over the block's in-image
    pixels."""
    h, w = qmap_weights.shape
    by, bx = -(-h // BLOCK), -(-w // BLOCK)
    sums = np.zeros((by, bx))
    counts = np.zeros((by, bx))
    rows = np.arange(h) // BLOCK
    cols = np.arange(w) // BLOCK
    np.add.at(sums, (rows[:, None], cols[None, :]), qmap_weights)
    np.add.at(counts, (rows[:, None], cols[None, :]), 1.0)
    return quality_to_level(sums / counts)


def pixel_halvings(levels: np.ndarray, height: int, width: int) -> np.ndarray:
    return np.repeat(np.repeat(levels, BLOCK, axis=0), BLOCK, axis=1)[:height, :width]


def quantize(pixels: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Nearest lattice index per pixel; scaling by a power of two is exact."""
    return np.round(pixels * 2.0 ** (h + 1)).astype(np.int64)


def refinement_symbols(pixels: np.ndarray) -> np.ndarray:
    """(HALVINGS, H, W) symbols in {-1, 0, 1}: ``k_j - 2 k_{j-1}``."""
    ks = [quantize(pixels, np.full(pixels.shape, j)) for j in range(HALVINGS + 1)]
    return np.stack([ks[j] - 2 * ks[j - 1] for j in range(1, HALVINGS + 1)])


def _base_contexts(base: np.ndarray) -> np.ndarray:
    padded = np.pad(base, ((1, 0), (1, 0)), constant_values=1)
    return 3 * padded[1:, :-1] + padded[:-1, 1:]


@lru_cache(maxsize=32)
def _encode_base(raw: bytes, height: int, width: int) -> str:
    # the base layer ignores the quality map, so repeated rounds on the same
    # image reuse it
    base = np.frombuffer(raw, dtype=np.int8).reshape(height, width)
    ctx = _base_contexts(base)
    models = [AdaptiveModel(BASE_DIVISIONS + 1) for _ in range(9)]
    enc = RangeEncoder()
    for s, c in zip(base.ravel().tolist(), ctx.ravel().tolist()):
        enc.encode(models[c], s)
    payload, nbits = enc.finish()
    return "".join(format(b, "08b") for b in payload)[:nbits]


@lru_cache(maxsize=32)
def _decode_base(bits: str, height: int, width: int) -> np.ndarray:
    pad = "0" * (-len(bits) % 8)
    raw = int(bits + pad, 2).to_bytes((len(bits) + len(pad)) // 8, "big") if bits else b""
    dec = RangeDecoder(BitReader(raw, len(bits)))
    models = [AdaptiveModel(BASE_DIVISIONS + 1) for _ in range(9)]
    base = np.ones((height + 1, width + 1), dtype=np.int64)
    for i in range(1, height + 1):
        for j in range(1, width + 1):
            base[i, j] = dec.decode(models[3 * base[i, j - 1] + base[i - 1, j]])
    base = base[1:, 1:]
    base.setflags(write=False)
    return base


def encode(image: RasterImage, qmap_weights: np.ndarray):
    """Return ``(payload, bit_count)``."""
    pixels = image.pixels
    height, width = pixels.shape
    levels = block_levels(np.asarray(qmap_weights, dtype=np.float64))
    h = pixel_halvings(levels, height, width)
    writer = BitWriter()
    for level in levels.ravel().tolist():
        writer.write(level, LEVEL_BITS)
    # pixel-major order: each pixel's symbols for planes 1..h
    codes = _CODES[refinement_symbols(pixels) + 1].transpose(1, 2, 0)
    used = np.arange(1, HALVINGS + 1) <= h[..., None]
    writer.write_bits("".join(np.where(used, codes, "").ravel().tolist()))
    base = quantize(pixels, np.zeros(pixels.shape, dtype=int)).astype(np.int8)
    writer.write_bits(_encode_base(base.tobytes(), height, width))
    return writer.getvalue(), writer.bit_count


def decode(payload: bytes, bit_count: int, width: int, height: int) -> RasterImage:
    by, bx = -(-height // BLOCK), -(-width // BLOCK)
    reader = BitReader(payload, bit_count)
    levels = np.array([reader.read(LEVEL_BITS) for _ in range(by * bx)], dtype=int).reshape(by, bx)
    if levels.max(initial=0) > HALVINGS:
        raise CorruptStreamError(f"invalid quality level {levels.max()}")
    h = pixel_halvings(levels, height, width)
    used = np.arange(1, HALVINGS + 1) <= h[..., None]
    count = int(used.sum())
    codes = [m.group() for m in itertools.islice(_SYMBOL.finditer(reader.rest()), count)]
    if len(codes) < count:
        raise CorruptStreamError("unexpected end of refinement symbols")
    reader.skip(sum(map(len, codes)))
    symbols = np.zeros((height, width, HALVINGS), dtype=np.int64)
    symbols[used] = [_SYMBOL_VALUES[c] for c in codes]
    k = _decode_base(reader.rest(), height, width)
    for p in range(HALVINGS):
        k = np.where(h > p, 2 * k + symbols[..., p], k)
    if k.min() < 0 or np.any(k > 2 ** (h + 1)):
        raise CorruptStreamError("lattice index outside [0, 1]")
    return RasterImage(k / 2.0 ** (h + 1))
