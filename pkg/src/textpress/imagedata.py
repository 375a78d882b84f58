"""Image and text-region types, manifest ingestion, and the crop/resize
protocol used to feed text regions to the quality assessor."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

ASSESS_HEIGHT = 32
ASSESS_WIDTH = 128
FILL_NOISE_SIGMA = 0.02

PathLike = Union[str, Path]


class ManifestError(ValueError):
    """Raised for unreadable or inconsistent manifest records."""


class RegionBoundsError(ValueError):
    """Raised when a text region does not fit inside its image."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Single-channel image with intensities in [0, 1], stored row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D pixel grid, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "RasterImage":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)


ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789 "
_ALPHABET_SET = frozenset(ALPHABET)


def normalize_text(text: str) -> str:
    """Lowercase, drop characters outside the 37-class alphabet, and collapse
    whitespace runs to single spaces."""
    lowered = " ".join(text.lower().split())
    kept = "".join(ch for ch in lowered if ch in _ALPHABET_SET)
    return re.sub(" +", " ", kept).strip()


@dataclass(frozen=True)
class TextRegion:
    """Axis-aligned text box ``(x, y, w, h)`` with its transcription."""

    box: Tuple[int, int, int, int]
    transcription: str
    label: Optional[float] = None

    def __post_init__(self):
        box = tuple(int(v) for v in self.box)
        if len(box) != 4:
            raise ValueError(f"box must have 4 entries, got {self.box!r}")
        x, y, w, h = box
        if x < 0 or y < 0 or w < 1 or h < 1:
            raise ValueError(f"invalid box {box}")
        bad = sorted(set(self.transcription) - set(ALPHABET))
        if bad:
            raise ValueError(f"transcription has characters outside the alphabet: {bad}")
        if self.label is not None and not 0.0 <= self.label <= 1.0:
            raise ValueError(f"label {self.label} outside [0, 1]")
        object.__setattr__(self, "box", box)

    @property
    def slices(self) -> Tuple[slice, slice]:
        x, y, w, h = self.box
        return slice(y, y + h), slice(x, x + w)

    def fits(self, width: int, height: int) -> bool:
        x, y, w, h = self.box
        return x + w <= width and y + h <= height

    def with_label(self, label: Optional[float]) -> "TextRegion":
        return TextRegion(self.box, self.transcription, label)


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    regions: Tuple[TextRegion, ...] = field(default_factory=tuple)

    def load_image(self) -> RasterImage:
        return load_image(self.image_path)


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def load_image(path: PathLike) -> RasterImage:
    """Load an 8-bit PNG/PGM (colour inputs are averaged to gray)."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
            arr = rgb.mean(axis=2)
    return RasterImage(arr / 255.0)


def save_image(image: RasterImage, path: PathLike) -> None:
    """Write as 8-bit; the format follows the file suffix (.png, .pgm)."""
    Image.fromarray(image.to_uint8(), mode="L").save(path)


def check_region(image: RasterImage, region: TextRegion) -> None:
    if not region.fits(image.width, image.height):
        raise RegionBoundsError(
            f"region {region.box} exceeds image bounds {image.width}x{image.height}"
        )


def crop_region(image: RasterImage, region: TextRegion) -> RasterImage:
    check_region(image, region)
    return RasterImage(image.pixels[region.slices])


def _parse_region(raw) -> TextRegion:
    if not isinstance(raw, dict) or "box" not in raw:
        raise ValueError("region must be an object with a 'box'")
    label = raw.get("label")
    return TextRegion(
        tuple(raw["box"]),
        normalize_text(str(raw.get("text", ""))),
        None if label is None else float(label),
    )


def load_manifest(path: PathLike) -> DatasetManifest:
    """Read a JSON-lines manifest and validate every region against its image.

    Image paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    index = 0
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            image_path = path.parent / record["image"]
            regions = tuple(_parse_region(r) for r in record.get("regions", []))
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"entry {index}: malformed record ({exc})") from exc
        try:
            image = load_image(image_path)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"entry {index}: cannot load image {image_path} ({exc})") from exc
        for r in regions:
            if not r.fits(image.width, image.height):
                raise ManifestError(
                    f"entry {index}: region {r.box} outside image "
                    f"{image.width}x{image.height}"
                )
        entries.append(ManifestEntry(image_path, regions))
        index += 1
    return DatasetManifest(tuple(entries))


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    path = Path(path)
    lines = []
    for entry in manifest:
        try:
            rel = Path(entry.image_path).resolve().relative_to(path.parent.resolve())
        except ValueError:
            rel = Path(entry.image_path).resolve()
        regions = [
            {"box": list(r.box), "text": r.transcription, "label": r.label}
            for r in entry.regions
        ]
        lines.append(json.dumps({"image": rel.as_posix(), "regions": regions}))
    path.write_text("".join(line + "\n" for line in lines))


def second_lowest_corner(pixels: np.ndarray) -> float:
    corners = np.sort([pixels[0, 0], pixels[0, -1], pixels[-1, 0], pixels[-1, -1]])
    return float(corners[1])


def resize_for_assessment(
    region_image: RasterImage,
    rng_seed: int,
    noise_sigma: float = FILL_NOISE_SIGMA,
    size: Tuple[int, int] = (ASSESS_HEIGHT, ASSESS_WIDTH),
) -> RasterImage:
    """Bring a cropped text region to the assessor's fixed input size without
    rescaling.

    Undersized dimensions are padded (content centred) with the second-lowest
    corner value plus Gaussian noise; oversized dimensions are cropped at a
    seeded random offset. Original pixels are never resampled.
    """
    src = region_image.pixels
    th, tw = size
    h, w = src.shape
    rng = np.random.default_rng(rng_seed)

    ch, cw = max(h, th), max(w, tw)
    if (ch, cw) != (h, w):
        fill = second_lowest_corner(src)
        canvas = np.full((ch, cw), fill)
        if noise_sigma > 0:
            canvas = np.clip(canvas + rng.normal(0.0, noise_sigma, size=canvas.shape), 0.0, 1.0)
        top, left = (ch - h) // 2, (cw - w) // 2
        canvas[top:top + h, left:left + w] = src
    else:
        canvas = src

    top = int(rng.integers(0, ch - th + 1)) if ch > th else 0
    left = int(rng.integers(0, cw - tw + 1)) if cw > tw else 0
    return RasterImage(canvas[top:top + th, left:left + tw])


def prepare_region(image: RasterImage, region: TextRegion, rng_seed: int = 0) -> RasterImage:
    """Crop a region and bring it to assessor size."""
    return resize_for_assessment(crop_region(image, region), rng_seed)
