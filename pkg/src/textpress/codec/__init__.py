"""Quality-map-conditioned compression with interchangeable backends.

``deterministic`` is an embedded pixel-lattice codec that needs no training;
``neural`` is a small SFT-conditioned autoencoder (see ``codec.neural``).
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

from ..imagedata import RasterImage, TextRegion, crop_region
from ..metrics import psnr
from . import lattice
from .bitio import CorruptStreamError
from .container import (
    BACKEND_IDS,
    CompressedBlob,
    CompressionResult,
    QualityMap,
    load_qmap,
    save_qmap,
)


class DeterministicBackend:
    name = "deterministic"

    def encode(self, image: RasterImage, qmap_weights):
        return lattice.encode(image, qmap_weights)

    def decode(self, payload: bytes, bit_count: int, width: int, height: int) -> RasterImage:
        return lattice.decode(payload, bit_count, width, height)


BackendLike = Union[str, object]


def get_backend(backend: BackendLike = "deterministic", model_path=None):
    """Resolve a backend name (or pass through a backend instance)."""
    if not isinstance(backend, str):
        return backend
    if backend == "deterministic":
        return DeterministicBackend()
    if backend == "neural":
        from .neural import NeuralBackend

        if model_path is None:
            raise ValueError("the neural backend needs a model file")
        return NeuralBackend.load(model_path)
    raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKEND_IDS)}")


def compress(image: RasterImage, qmap: QualityMap, backend: BackendLike = "deterministic") -> CompressedBlob:
    if qmap.shape != image.shape:
        raise ValueError(f"quality map {qmap.shape} does not match image {image.shape}")
    impl = get_backend(backend)
    payload, bits = impl.encode(image, qmap.weights)
    return CompressedBlob(impl.name, image.width, image.height, payload, bits)


def decompress(blob: CompressedBlob, backend: Optional[BackendLike] = None) -> RasterImage:
    """Decode a blob. Neural blobs need the backend instance that made them."""
    if backend is None:
        backend = blob.backend
    impl = get_backend(backend)
    if impl.name != blob.backend:
        raise ValueError(f"blob was written by the {blob.backend} backend, not {impl.name}")
    return impl.decode(blob.payload, blob.bit_count, blob.width, blob.height)


def compress_and_measure(image: RasterImage, qmap: QualityMap, regions: Sequence[TextRegion] = (),
                         backend: BackendLike = "deterministic") -> CompressionResult:
    impl = get_backend(backend)
    blob = compress(image, qmap, impl)
    recon = decompress(blob, impl)
    region_psnr = [psnr(crop_region(image, r), crop_region(recon, r)) for r in regions]
    return CompressionResult(recon, blob.bpp, region_psnr, blob)


__all__ = [
    "CompressedBlob", "CompressionResult", "CorruptStreamError", "DeterministicBackend", "QualityMap",
    "compress", "compress_and_measure", "decompress", "get_backend", "load_qmap", "save_qmap",
]
