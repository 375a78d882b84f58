"""Synthetic scene-text corpus: rendered words on textured backgrounds,
degraded per region at graded severities and labelled with the synthetic
recognizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .imagedata import RasterImage, TextRegion, crop_region, resize_for_assessment
from .labels import label_or_zero, synthetic_recognizer

SCENE_WIDTH = 192
SCENE_HEIGHT = 128
DEFAULT_GRID = (0.0, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 1.0)
DEGRADATIONS = ("blur", "noise", "block", "mixed")
_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_DIGITS = "0123456789"


@dataclass
class SyntheticScene:
    image: RasterImage
    regions: List[TextRegion]
    severities: List[float] = field(default_factory=list)
    kinds: List[str] = field(default_factory=list)
    clean: RasterImage = None


@dataclass(frozen=True)
class LabeledCrop:
    image: RasterImage
    label: float
    text: str
    severity: float
    kind: str
    scene: int
    region: int


@lru_cache(maxsize=None)
def _font(size: int):
    return ImageFont.load_default(size=size)


def random_word(rng: np.random.Generator) -> str:
    n = int(rng.integers(3, 8))
    pool = _LETTERS + _DIGITS if rng.random() < 0.2 else _LETTERS
    return "".join(pool[i] for i in rng.integers(0, len(pool), n))


def textured_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    base = rng.uniform(0.2, 0.8)
    texture = gaussian_filter(rng.normal(size=(height, width)), sigma=rng.uniform(3, 10))
    texture *= rng.uniform(0.02, 0.12) / max(texture.std(), 1e-9)
    yy, xx = np.mgrid[0:height, 0:width]
    ramp = rng.uniform(-0.1, 0.1) * (xx / width) + rng.uniform(-0.1, 0.1) * (yy / height)
    return np.clip(base + texture + ramp, 0.0, 1.0)


def _overlaps(a, b, pad=2) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return not (ax + aw + pad <= bx or bx + bw + pad <= ax or ay + ah + pad <= by or by + bh + pad <= ay)


def render_scene(rng: np.random.Generator, width: int = SCENE_WIDTH, height: int = SCENE_HEIGHT,
                 max_words: int = 4) -> Tuple[np.ndarray, List[TextRegion]]:
    """Draw 1..max_words non-overlapping words; boxes hug the glyphs with a
    2-pixel margin."""
    pixels = textured_background(rng, height, width)
    regions: List[TextRegion] = []
    target = int(rng.integers(1, max_words + 1))
    attempts = 0
    while len(regions) < target and attempts < 50:
        attempts += 1
        word = random_word(rng)
        font = _font(int(rng.integers(12, 23)))
        l, t, r, b = font.getbbox(word)
        w, h = r - l + 4, b - t + 4
        if w >= width or h >= height:
            continue
        x, y = int(rng.integers(0, width - w + 1)), int(rng.integers(0, height - h + 1))
        box = (x, y, w, h)
        if any(_overlaps(box, reg.box) for reg in regions):
            continue
        mask_img = Image.new("L", (w, h), 0)
        ImageDraw.Draw(mask_img).text((2 - l, 2 - t), word, font=font, fill=255)
        alpha = np.asarray(mask_img, dtype=np.float64) / 255.0
        patch = pixels[y:y + h, x:x + w]
        bg = float(np.median(patch))
        contrast = rng.uniform(0.35, 0.8)
        fg = bg - contrast if bg - contrast >= 0.0 or bg + contrast > 1.0 else bg + contrast
        if rng.random() < 0.3 and bg + contrast <= 1.0:
            fg = bg + contrast
        pixels[y:y + h, x:x + w] = patch * (1 - alpha) + np.clip(fg, 0, 1) * alpha
        regions.append(TextRegion(box, word))
    return np.clip(pixels, 0.0, 1.0), regions


def block_quantize(pixels: np.ndarray, step: float, block: int = 8) -> np.ndarray:
    """JPEG-style artefacts: uniform quantization of 8x8 DCT coefficients."""
    h, w = pixels.shape
    padded = np.pad(pixels - 0.5, ((0, -h % block), (0, -w % block)), mode="edge")
    by, bx = padded.shape[0] // block, padded.shape[1] // block
    tiles = padded.reshape(by, block, bx, block)
    coeffs = dctn(tiles, axes=(1, 3), norm="ortho")
    tiles = idctn(np.round(coeffs / step) * step, axes=(1, 3), norm="ortho")
    return tiles.reshape(padded.shape)[:h, :w] + 0.5


def degrade(patch: np.ndarray, severity: float, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Blur, additive noise, coarse block quantization, or all three."""
    if severity <= 0:
        return patch.copy()
    out = patch
    if kind in ("blur", "mixed"):
        out = gaussian_filter(out, sigma=(2.5 if kind == "blur" else 1.5) * severity, mode="nearest")
    if kind in ("noise", "mixed"):
        out = out + rng.normal(0.0, (0.3 if kind == "noise" else 0.15) * severity, size=out.shape)
    if kind in ("block", "mixed"):
        step = 0.02 + (1.6 if kind == "block" else 0.8) * severity
        out = block_quantize(np.clip(out, 0, 1), step)
    return np.clip(out, 0.0, 1.0)


def generate_scene(seed, grid: Sequence[float] = (0.0,), kinds: Sequence[str] = DEGRADATIONS,
                   **render_kw) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    clean, regions = render_scene(rng, **render_kw)
    pixels = clean.copy()
    severities, chosen = [], []
    for reg in regions:
        sev = float(grid[rng.integers(len(grid))])
        kind = str(kinds[rng.integers(len(kinds))])
        sl = reg.slices
        pixels[sl] = degrade(pixels[sl], sev, kind, rng)
        severities.append(sev)
        chosen.append(kind)
    return SyntheticScene(RasterImage(pixels), regions, severities, chosen, RasterImage(clean))


def label_scene(scene: SyntheticScene, scene_index: int, crop_seed: int = 0) -> List[LabeledCrop]:
    crops = []
    for j, (reg, sev, kind) in enumerate(zip(scene.regions, scene.severities, scene.kinds)):
        crop = resize_for_assessment(crop_region(scene.image, reg), crop_seed + 1000 * scene_index + j)
        label = label_or_zero(reg.transcription, synthetic_recognizer(crop, reg.transcription, sev))
        crops.append(LabeledCrop(crop, label.q, reg.transcription, sev, kind, scene_index, j))
    return crops


def generate_synthetic_corpus(seed: int, count: int, grid: Sequence[float] = DEFAULT_GRID,
                              kinds: Sequence[str] = DEGRADATIONS):
    """Scenes plus ``count`` labelled 32x128 region crops, deterministic in
    ``seed``. Each scene gets its own child seed, so scenes can be generated
    independently (or in parallel) without changing the result."""
    if count < 1:
        raise ValueError("count must be at least 1")
    children = np.random.SeedSequence(seed)
    scenes: List[SyntheticScene] = []
    crops: List[LabeledCrop] = []
    while len(crops) < count:
        (child,) = children.spawn(1)
        scene = generate_scene(child, grid, kinds)
        scenes.append(scene)
        crops.extend(label_scene(scene, len(scenes) - 1, crop_seed=seed))
    return scenes, crops[:count]


def generate_clean_scenes(seed: int, count: int, **render_kw) -> List[SyntheticScene]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [generate_scene(c, (0.0,), **render_kw) for c in children]
