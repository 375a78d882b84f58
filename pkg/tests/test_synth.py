import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dct2_naive
from textpress.synth import (
    DEFAULT_GRID,
    DEGRADATIONS,
    block_quantize,
    degrade,
    generate_clean_scenes,
    generate_scene,
    generate_synthetic_corpus,
    render_scene,
)


def _dct_matrix(n=8):
    # column i is the naive transform of the i-th unit image
    basis = np.eye(n * n).reshape(n * n, n, n)
    return np.stack([dct2_naive(b).ravel() for b in basis], axis=1)


DCT = _dct_matrix()


def block_quantize_naive(pixels, step, block=8):
    h, w = pixels.shape
    padded = np.pad(pixels - 0.5, ((0, -h % block), (0, -w % block)), mode="edge")
    out = np.empty_like(padded)
    for y in range(0, padded.shape[0], block):
        for x in range(0, padded.shape[1], block):
            c = DCT @ padded[y:y + block, x:x + block].ravel()
            out[y:y + block, x:x + block] = np.linalg.solve(DCT, np.round(c / step) * step).reshape(block, block)
    return out[:h, :w] + 0.5


@pytest.mark.parametrize("shape,step", [((8, 8), 0.1), ((13, 19), 0.35), ((16, 24), 1.0)])
def test_block_quantize_matches_naive_transform(shape, step):
    pixels = np.random.default_rng(3).random(shape)
    assert np.allclose(block_quantize(pixels, step), block_quantize_naive(pixels, step), atol=1e-9)


def test_block_quantize_tiny_step_is_identity():
    pixels = np.random.default_rng(4).random((20, 20))
    assert np.allclose(block_quantize(pixels, 1e-9), pixels, atol=1e-8)


@given(st.floats(0.0, 1.0), st.sampled_from(DEGRADATIONS), st.integers(0, 100))
def test_degrade_stays_in_range_and_zero_is_copy(sev, kind, seed):
    patch = np.random.default_rng(seed).random((12, 30))
    out = degrade(patch, sev, kind, np.random.default_rng(seed))
    assert out.shape == patch.shape and out.min() >= 0.0 and out.max() <= 1.0
    same = degrade(patch, 0.0, kind, np.random.default_rng(seed))
    assert np.array_equal(same, patch) and same is not patch


def test_degrade_grows_with_severity():
    patch = generate_clean_scenes(0, 1)[0].image.pixels[:32, :64]
    for kind in DEGRADATIONS:
        errs = [np.mean((degrade(patch, s, kind, np.random.default_rng(0)) - patch) ** 2) for s in (0.1, 0.5, 1.0)]
        assert errs[0] < errs[1] < errs[2], kind


def test_render_scene_boxes_fit_and_do_not_overlap():
    for seed in range(10):
        pixels, regions = render_scene(np.random.default_rng(seed))
        assert pixels.min() >= 0 and pixels.max() <= 1 and regions
        for i, r in enumerate(regions):
            x, y, w, h = r.box
            assert 0 <= x and x + w <= pixels.shape[1] and 0 <= y and y + h <= pixels.shape[0]
            assert r.transcription
            for other in regions[i + 1:]:
                ox, oy, ow, oh = other.box
                assert x + w <= ox or ox + ow <= x or y + h <= oy or oy + oh <= y


def test_clean_scene_matches_its_clean_copy():
    s = generate_scene(5)
    assert np.array_equal(s.image.pixels, s.clean.pixels)
    assert s.severities == [0.0] * len(s.regions)


def test_corpus_is_deterministic_and_sized():
    _, a = generate_synthetic_corpus(7, 25)
    _, b = generate_synthetic_corpus(7, 25)
    assert len(a) == 25
    assert all(np.array_equal(x.image.pixels, y.image.pixels) and x.label == y.label for x, y in zip(a, b))
    for c in a:
        assert c.image.shape == (32, 128)
        assert 0.0 <= c.label <= 1.0
        assert c.severity in DEFAULT_GRID and c.kind in DEGRADATIONS
    _, other = generate_synthetic_corpus(8, 25)
    assert any(x.label != y.label for x, y in zip(a, other))


def test_labels_fall_with_severity():
    _, crops = generate_synthetic_corpus(0, 300)
    by = {s: np.mean([c.label for c in crops if c.severity == s]) for s in (0.0, 0.5, 1.0)}
    assert by[0.0] > by[0.5] > by[1.0]
    assert by[0.0] > 0.95


def test_corpus_rejects_empty_request():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(0, 0)
