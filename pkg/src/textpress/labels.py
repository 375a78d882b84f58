"""Text-quality labels derived from a recognizer's character probabilities.

A label mixes how confident the recognizer is (mean of per-character maximum
probabilities) with how accurate its decoding is (one minus normalised edit
distance to the ground truth).
"""

from __future__ import annotations

import hashlib
import io
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .imagedata import ALPHABET, RasterImage, normalize_text

NUM_CLASSES = len(ALPHABET)
_ROW_SUM_TOL = 1e-6
TIE_TILT = 0.01


def levenshtein(s1: str, s2: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if len(s1) < len(s2):
        s1, s2 = s2, s1
    previous = list(range(len(s2) + 1))
    for i, c1 in enumerate(s1, start=1):
        current = [i]
        for j, c2 in enumerate(s2, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (c1 != c2),
            ))
        previous = current
    return previous[-1]


def check_probs(probs) -> np.ndarray:
    """Validate a character probability sequence, returning an ``(n, 37)`` array."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, NUM_CLASSES)
    if arr.ndim != 2 or arr.shape[1] != NUM_CLASSES:
        raise ValueError(f"expected shape (n, {NUM_CLASSES}), got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("probabilities must be non-negative")
    if arr.shape[0] and np.any(np.abs(arr.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
        raise ValueError("each probability row must sum to 1")
    return arr


def decode(probs) -> str:
    arr = check_probs(probs)
    return "".join(ALPHABET[i] for i in arr.argmax(axis=1))


@dataclass(frozen=True, eq=False)
class RecognizerOutput:
    probs: np.ndarray
    decoded_text: str

    def __post_init__(self):
        arr = check_probs(self.probs)
        if len(self.decoded_text) != arr.shape[0]:
            raise ValueError("decoded text length must equal the number of rows")
        if self.decoded_text != decode(arr):
            raise ValueError("decoded text must be the argmax decoding of probs")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def from_probs(cls, probs) -> "RecognizerOutput":
        arr = check_probs(probs)
        return cls(arr, decode(arr))

    @property
    def n(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class QualityLabel:
    q: float
    c: float
    a: float


def confidence(probs) -> float:
    arr = check_probs(probs)
    if arr.shape[0] == 0:
        raise ValueError("confidence is undefined for an empty sequence")
    return float(arr.max(axis=1).mean())


def accuracy(ground_truth: str, prediction: str, n: int) -> float:
    """``max(0, 1 - lev(gt, pred) / n)`` where ``n`` is the prediction length.

    The divisor is the prediction length, not the ground-truth length; the
    clamp keeps labels in [0, 1] when the distance exceeds ``n``.
    """
    if n < 1:
        raise ValueError("accuracy needs a non-empty prediction (n >= 1)")
    return max(0.0, 1.0 - levenshtein(ground_truth, prediction) / n)


def make_label(ground_truth: str, rec: RecognizerOutput) -> QualityLabel:
    c = confidence(rec.probs)
    a = accuracy(normalize_text(ground_truth), rec.decoded_text, rec.n)
    return QualityLabel((c + a) / 2.0, c, a)


def label_or_zero(ground_truth: str, rec: RecognizerOutput) -> QualityLabel:
    """Batch labelling policy: an empty prediction is the worst quality."""
    if rec.n == 0:
        return QualityLabel(0.0, 0.0, 0.0)
    return make_label(ground_truth, rec)


# -- recognizers -----------------------------------------------------------

Recognizer = Callable[[RasterImage, str], RecognizerOutput]


def clarity(pixels: np.ndarray) -> float:
    """Crude sharpness-times-contrast score in [0, 1] for a text patch."""
    lo, hi = np.percentile(pixels, [2, 98])
    contrast = hi - lo
    if contrast < 1e-3:
        return 0.0
    gy, gx = np.gradient(pixels)
    mag = np.hypot(gx, gy).ravel()
    k = max(1, mag.size // 10)
    edge = np.partition(mag, -k)[-k:].mean() / contrast
    return float(np.clip(contrast / 0.5, 0, 1) * np.clip(2.0 * edge, 0, 1))


def _seed_for(pixels: np.ndarray, text: str, knob: float) -> int:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pixels, dtype=np.float64).tobytes())
    h.update(text.encode())
    h.update(np.float64(knob).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def synthetic_recognizer(
    region_image: RasterImage, ground_truth: str, degradation_knob: float
) -> RecognizerOutput:
    """Deterministic stand-in for a trained scene-text recognizer.

    Rows interpolate between the one-hot ground truth (knob 0) and the uniform
    distribution (knob 1). In between, low clarity of the patch pushes the
    effective degradation up, and characters are swapped for wrong classes at
    a rate equal to the effective degradation.
    """
    if not 0.0 <= degradation_knob <= 1.0:
        raise ValueError("degradation_knob must lie in [0, 1]")
    text = normalize_text(ground_truth)
    n = len(text)
    if n == 0:
        return RecognizerOutput(np.zeros((0, NUM_CLASSES)), "")

    s = clarity(region_image.pixels)
    d = 1.0 - (1.0 - degradation_knob) ** (1.0 + 2.0 * (1.0 - s))
    rng = np.random.default_rng(_seed_for(region_image.pixels, text, degradation_knob))

    uniform = np.full(NUM_CLASSES, 1.0 / NUM_CLASSES)
    rows = np.empty((n, NUM_CLASSES))
    for i, ch in enumerate(text):
        peak = ALPHABET.index(ch)
        if rng.random() < d:
            peak = (peak + int(rng.integers(1, NUM_CLASSES))) % NUM_CLASSES
        onehot = np.eye(NUM_CLASSES)[peak]
        # the small tilt towards the peak keeps argmax decoding away from ties
        noise = (1.0 - TIE_TILT) * uniform + TIE_TILT * onehot
        row = (1.0 - d) * onehot + d * noise
        mix = 0.5 * d * (1.0 - d)
        rows[i] = (1.0 - mix) * row + mix * rng.dirichlet(np.ones(NUM_CLASSES))
    rows /= rows.sum(axis=1, keepdims=True)
    return RecognizerOutput.from_probs(rows)


class SyntheticRecognizer:
    """Binds a fixed degradation knob so the synthetic model fits the
    ``Recognizer`` call signature."""

    def __init__(self, degradation: float = 0.5):
        self.degradation = degradation

    def __call__(self, region_image: RasterImage, ground_truth: str) -> RecognizerOutput:
        return synthetic_recognizer(region_image, ground_truth, self.degradation)


def encode_pgm(image: RasterImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode()
    return header + image.to_uint8().tobytes()


def parse_prob_lines(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        values = line.split()
        if len(values) != NUM_CLASSES:
            raise ValueError(f"line {lineno}: expected {NUM_CLASSES} values, got {len(values)}")
        rows.append([float(v) for v in values])
    return check_probs(np.array(rows).reshape(-1, NUM_CLASSES))


class ExternalRecognizer:
    """Runs a command per region: 32x128 PGM on stdin, one line of 37
    probabilities per decoded character on stdout."""

    def __init__(self, command: str, timeout: Optional[float] = 60.0):
        self.argv = shlex.split(command)
        self.timeout = timeout

    def __call__(self, region_image: RasterImage, ground_truth: str) -> RecognizerOutput:
        proc = subprocess.run(
            self.argv,
            input=encode_pgm(region_image),
            capture_output=True,
            timeout=self.timeout,
        )
        if proc.returncode != 0:
            raise RuntimeError(
                f"recognizer exited with {proc.returncode}: {proc.stderr.decode(errors='replace')}"
            )
        return RecognizerOutput.from_probs(parse_prob_lines(proc.stdout.decode()))


def read_pgm(data: bytes) -> RasterImage:
    """Minimal binary PGM reader, for external recognizers written in Python."""
    from PIL import Image

    with Image.open(io.BytesIO(data)) as im:
        return RasterImage.from_uint8(np.asarray(im.convert("L")))
