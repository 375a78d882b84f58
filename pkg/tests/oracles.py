"""Independent reference implementations used only by the tests."""

from functools import lru_cache

import numpy as np


def levenshtein_recursive(a: str, b: str) -> int:
    """Textbook recursive definition, memoized."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def dct2_naive(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II written out as a quadruple sum."""
    n = block.shape[0]
    out = np.zeros_like(block, dtype=np.float64)
    for u in range(n):
        for v in range(n):
            au = np.sqrt(1 / n) if u == 0 else np.sqrt(2 / n)
            av = np.sqrt(1 / n) if v == 0 else np.sqrt(2 / n)
            s = 0.0
            for x in range(n):
                for y in range(n):
                    s += block[x, y] * np.cos((2 * x + 1) * u * np.pi / (2 * n)) * np.cos((2 * y + 1) * v * np.pi / (2 * n))
            out[u, v] = au * av * s
    return out


def ranks_naive(x):
    """Average ranks (1-based) by counting, no sorting library."""
    x = list(x)
    return [sum(1 for y in x if y < v) + (sum(1 for y in x if y == v) + 1) / 2 for v in x]


def pearson_naive(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / (vx * vy) ** 0.5


def lattice_reconstruct_naive(pixels: np.ndarray, weights: np.ndarray, halvings: int = 5,
                              base: int = 2) -> np.ndarray:
    """Pixel-lattice reconstruction written with explicit loops: each 8x8
    block rounds its mean weight times 5 half-up to a halving count h and
    every pixel rounds to the nearest multiple of 1 / (base * 2**h)."""
    h, w = pixels.shape
    out = np.zeros((h, w))
    for by in range(0, h, 8):
        for bx in range(0, w, 8):
            tile = weights[by:by + 8, bx:bx + 8]
            level = min(halvings, max(0, int(np.floor(tile.mean() * halvings + 0.5))))
            m = base * 2 ** level
            for i in range(by, min(by + 8, h)):
                for j in range(bx, min(bx + 8, w)):
                    out[i, j] = np.round(pixels[i, j] * m) / m
    return out
