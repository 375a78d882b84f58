"""Quality maps, the compressed-blob container and its binary file format.

Blob layout (big-endian)::

    magic    4 bytes  b"TXPC"
    version  u8
    backend  u8       0 = deterministic, 1 = neural
    width    u32
    height   u32
    bits     u32      payload length in bits (bytes = ceil(bits / 8))
    payload  bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from ..imagedata import RasterImage
from .bitio import CorruptStreamError

MAGIC = b"TXPC"
VERSION = 1
_HEADER = struct.Struct(">4sBBIII")

BACKEND_IDS = {"deterministic": 0, "neural": 1}
BACKEND_NAMES = {v: k for k, v in BACKEND_IDS.items()}


@dataclass(frozen=True, eq=False)
class QualityMap:
    """Per-pixel weights in [0, 1]; higher means more bits and fidelity.

    ``text_masks`` optionally records, per text region, which pixels were
    marked as text when the map was seeded, so region weights can later be
    rewritten onto exactly those pixels.
    """

    weights: np.ndarray
    text_masks: Tuple[np.ndarray, ...] = field(default_factory=tuple)
    background: Optional[float] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2:
            raise ValueError("quality map must be 2-D")
        if not np.all(np.isfinite(w)) or w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("quality map weights must lie in [0, 1]")
        w.setflags(write=False)
        masks = []
        for m in self.text_masks:
            m = np.array(m, dtype=bool, copy=True)
            if m.shape != w.shape:
                raise ValueError("text mask shape differs from the map")
            m.setflags(write=False)
            masks.append(m)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "text_masks", tuple(masks))

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    @property
    def shape(self):
        return self.weights.shape

    @classmethod
    def constant(cls, height: int, width: int, value: float) -> "QualityMap":
        return cls(np.full((height, width), float(value)))

    @classmethod
    def like(cls, image: RasterImage, value: float) -> "QualityMap":
        return cls.constant(image.height, image.width, value)


def load_qmap(path) -> QualityMap:
    """Read a quality map from an 8-bit PGM/PNG (weight = value / 255) or a
    float ``.npy`` sidecar."""
    path = Path(path)
    if path.suffix == ".npy":
        return QualityMap(np.load(path))
    with Image.open(path) as im:
        return QualityMap(np.asarray(im.convert("L"), dtype=np.float64) / 255.0)


def save_qmap(qmap: QualityMap, path) -> None:
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, qmap.weights)
    else:
        Image.fromarray(np.round(qmap.weights * 255).astype(np.uint8), mode="L").save(path)


@dataclass(frozen=True)
class CompressedBlob:
    backend: str
    width: int
    height: int
    payload: bytes
    bit_count: int
    version: int = VERSION

    def __post_init__(self):
        if self.backend not in BACKEND_IDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if (self.bit_count + 7) // 8 != len(self.payload):
            raise ValueError("bit_count inconsistent with payload length")

    @property
    def bpp(self) -> float:
        return self.bit_count / (self.width * self.height)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC, self.version, BACKEND_IDS[self.backend], self.width, self.height, self.bit_count
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedBlob":
        if len(data) < _HEADER.size:
            raise CorruptStreamError("blob shorter than its header")
        magic, version, backend_id, width, height, bits = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptStreamError("bad magic bytes")
        if version != VERSION:
            raise CorruptStreamError(f"unsupported blob version {version}")
        if backend_id not in BACKEND_NAMES:
            raise CorruptStreamError(f"unknown backend id {backend_id}")
        if width < 1 or height < 1:
            raise CorruptStreamError("invalid dimensions")
        payload = data[_HEADER.size:]
        if len(payload) != (bits + 7) // 8:
            raise CorruptStreamError(
                f"payload is {len(payload)} bytes, header declares {bits} bits"
            )
        return cls(BACKEND_NAMES[backend_id], width, height, payload, bits, version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CompressedBlob":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class CompressionResult:
    reconstruction: RasterImage
    bpp: float
    per_region_psnr: List[float]
    blob: Optional[CompressedBlob] = None
