"""Iterative text-aware compression: seed a quality map from glyph geometry,
compress, score each text region, nudge the region weights towards a target
score, and keep the best round."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from skimage.feature import canny

from .codec import CompressionResult, QualityMap, compress_and_measure, get_backend
from .imagedata import RasterImage, TextRegion, check_region, prepare_region
from .metrics import psnr

Assessor = Callable[[RasterImage], float]


@dataclass
class ControllerConfig:
    lam: float = 5.0
    score_target: float = 0.90
    iterations: int = 3
    edge_weight: float = 0.5
    interior_weight: float = 0.5
    background_weight: float = 0.2
    canny_low: float = 0.1
    canny_high: float = 0.3
    canny_sigma: float = 1.0
    assess_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.background_weight <= self.edge_weight <= 1.0:
            raise ValueError("need 0 <= background_weight <= edge_weight <= 1")
        if not self.background_weight <= self.interior_weight <= 1.0:
            raise ValueError("need background_weight <= interior_weight <= 1")
        if not 0.0 <= self.score_target <= 1.0:
            raise ValueError("score_target must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0.0 <= self.canny_low <= self.canny_high:
            raise ValueError("need 0 <= canny_low <= canny_high")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class RegionWeightState:
    weights: List[float]
    scores: List[float] = field(default_factory=list)

    def __post_init__(self):
        if any(not 0.0 <= k <= 1.0 for k in self.weights):
            raise ValueError("region weights must lie in [0, 1]")


@dataclass
class RoundRecord:
    round: int
    weights: List[float]
    qmap: QualityMap
    result: CompressionResult
    scores: List[float]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores)) if self.scores else float("nan")


def text_pixel_masks(image: RasterImage, region: TextRegion, config: ControllerConfig):
    """(edges, interior) boolean masks over the full image for one region.

    Interior is what closing the edge map and filling its holes adds on top of
    the edges; everything is confined to the region box.
    """
    check_region(image, region)
    sl = region.slices
    patch = image.pixels[sl]
    edges = canny(patch, sigma=config.canny_sigma, low_threshold=config.canny_low,
                  high_threshold=config.canny_high)
    closed = ndimage.binary_closing(edges, structure=np.ones((3, 3)), border_value=0)
    filled = ndimage.binary_fill_holes(closed | edges)
    full_edges = np.zeros(image.shape, dtype=bool)
    full_inner = np.zeros(image.shape, dtype=bool)
    full_edges[sl] = edges
    full_inner[sl] = filled & ~edges
    return full_edges, full_inner


def init_quality_map(image: RasterImage, regions: Sequence[TextRegion],
                     config: Optional[ControllerConfig] = None) -> QualityMap:
    config = config or ControllerConfig()
    w = np.full(image.shape, config.background_weight)
    masks = []
    for region in regions:
        edges, inner = text_pixel_masks(image, region, config)
        w[inner] = np.maximum(w[inner], config.interior_weight)
        w[edges] = np.maximum(w[edges], config.edge_weight)
        masks.append(edges | inner)
    return QualityMap(w, tuple(masks), config.background_weight)


def update_weight(k_old: float, score: float, config: Optional[ControllerConfig] = None) -> float:
    config = config or ControllerConfig()
    if not (0.0 <= k_old <= 1.0 and 0.0 <= score <= 1.0):
        raise ValueError("k_old and score must lie in [0, 1]")
    k = k_old + config.lam * (config.score_target - score)
    return min(1.0, max(0.0, k))


def apply_region_weights(qmap: QualityMap, regions: Sequence[TextRegion],
                         weights: Union[RegionWeightState, Sequence[float]]) -> QualityMap:
    """Write each region's k onto its text pixels; overlaps take the max."""
    ks = weights.weights if isinstance(weights, RegionWeightState) else list(weights)
    if len(ks) != len(regions) or len(qmap.text_masks) != len(regions):
        raise ValueError(f"got {len(ks)} weights and {len(qmap.text_masks)} text masks "
                         f"for {len(regions)} regions")
    if any(not 0.0 <= k <= 1.0 for k in ks):
        raise ValueError("region weights must lie in [0, 1]")
    background = qmap.background if qmap.background is not None else float(qmap.weights.min())
    w = np.full(qmap.shape, background)
    any_text = np.zeros(qmap.shape, dtype=bool)
    for mask, k in zip(qmap.text_masks, ks):
        w[mask] = np.where(any_text[mask], np.maximum(w[mask], k), k)
        any_text |= mask
    return QualityMap(w, qmap.text_masks, qmap.background)


def as_assessor(model) -> Callable[[List[RasterImage]], List[float]]:
    """Batch scorer from a STIQA model (anything with ``score_batch``) or a
    plain per-crop callable."""
    if hasattr(model, "score_batch"):
        def score_all(crops):
            if not crops:
                return []
            s = model.score_batch(np.stack([c.pixels for c in crops]))
            return [float(v) for v in np.clip(s, 1e-7, 1 - 1e-7)]
        return score_all
    return lambda crops: [float(model(c)) for c in crops]


def select_best(trace: Sequence[RoundRecord]) -> RoundRecord:
    """Highest mean region score; ties go to the lower bit rate, then the
    earlier round."""
    if not trace:
        raise ValueError("empty trace")
    if not trace[0].scores:
        return min(trace, key=lambda r: (r.result.bpp, r.round))
    return min(trace, key=lambda r: (-r.mean_score, r.result.bpp, r.round))


def run_pipeline(image: RasterImage, regions: Sequence[TextRegion], assessor, backend="deterministic",
                 config: Optional[ControllerConfig] = None):
    """Returns ``(best CompressionResult, trace)``; ``trace`` holds one
    RoundRecord per compression."""
    config = config or ControllerConfig()
    impl = get_backend(backend)
    if not regions:
        qmap = QualityMap.constant(image.height, image.width, config.background_weight)
        result = compress_and_measure(image, qmap, (), impl)
        trace = [RoundRecord(1, [], qmap, result, [])]
        return result, trace

    score_all = as_assessor(assessor)
    init = init_quality_map(image, regions, config)
    state = RegionWeightState([config.edge_weight] * len(regions))
    qmap = init
    trace: List[RoundRecord] = []
    for rnd in range(1, config.iterations + 1):
        result = compress_and_measure(image, qmap, regions, impl)
        crops = [prepare_region(result.reconstruction, r, config.assess_seed) for r in regions]
        scores = score_all(crops)
        trace.append(RoundRecord(rnd, list(state.weights), qmap, result, scores))
        state = RegionWeightState([update_weight(k, s, config) for k, s in zip(state.weights, scores)], scores)
        qmap = apply_region_weights(init, regions, state)
    return select_best(trace).result, trace


def trace_records(image: RasterImage, trace: Sequence[RoundRecord]) -> List[dict]:
    rows = []
    for r in trace:
        rows.append({
            "round": r.round,
            "k": r.weights,
            "scores": r.scores,
            "mean_score": None if not r.scores else r.mean_score,
            "bpp": r.result.bpp,
            "psnr": psnr(image, r.result.reconstruction),
            "region_psnr": r.result.per_region_psnr,
        })
    return rows


def write_trace(path, image: RasterImage, trace: Sequence[RoundRecord]) -> None:
    with open(path, "w") as fh:
        for row in trace_records(image, trace):
            fh.write(json.dumps(row, allow_nan=True) + "\n")
