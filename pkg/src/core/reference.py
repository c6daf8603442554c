"""Direct loop implementations used as oracles by the selftest and test suites.

These favor obviousness over speed; keep inputs tiny.
"""

import math
from collections import deque

import numpy as np


def conv2d_loop(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, mask: np.ndarray = None) -> np.ndarray:
    """'Same' zero-padded cross-correlation, one output element at a time."""
    b, h, w, cin = x.shape
    kh, kw, _, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((b, h, w, cout))
    for n in range(b):
        for r in range(h):
            for c in range(w):
                for o in range(cout):
                    acc = bias[o] if bias is not None else 0.0
                    for i in range(kh):
                        for j in range(kw):
                            rr, cc = r + i - ph, c + j - pw
                            if not (0 <= rr < h and 0 <= cc < w):
                                continue
                            if mask is not None and mask[i, j] == 0:
                                continue
                            for k in range(cin):
                                acc += x[n, rr, cc, k] * weight[i, j, k, o]
                    out[n, r, c, o] = acc
    return out


def adaptive_pool_loop(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    b, h, w, c = x.shape
    out = np.zeros((b, out_h, out_w, c))
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, ((i + 1) * h) // out_h
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, ((j + 1) * w) // out_w
            out[:, i, j, :] = x[:, r0:r1, c0:c1, :].mean(axis=(1, 2))
    return out


def _source(d: int, n_in: int, n_out: int) -> tuple[int, int, float]:
    src = (d + 0.5) * n_in / n_out - 0.5
    src = min(max(src, 0.0), n_in - 1)
    lo = math.floor(src)
    return lo, min(lo + 1, n_in - 1), src - lo


def bilinear_loop(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    b, h, w, c = x.shape
    out = np.zeros((b, out_h, out_w, c))
    for r in range(out_h):
        r0, r1, fr = _source(r, h, out_h)
        for col in range(out_w):
            c0, c1, fc = _source(col, w, out_w)
            top = (1 - fc) * x[:, r0, c0, :] + fc * x[:, r0, c1, :]
            bottom = (1 - fc) * x[:, r1, c0, :] + fc * x[:, r1, c1, :]
            out[:, r, col, :] = (1 - fr) * top + fr * bottom
    return out


def focal_loop(logits: np.ndarray, targets: np.ndarray, alpha: float, gamma: float) -> float:
    """Per-pixel -alpha_t (1 - p_t)^gamma log p_t, straight from the definition."""
    total = 0.0
    flat_z = logits.reshape(-1)
    flat_y = targets.reshape(-1)
    for z, y in zip(flat_z, flat_y):
        p = 1.0 / (1.0 + math.exp(-z))
        p_t = p if y == 1 else 1.0 - p
        a_t = alpha if y == 1 else 1.0 - alpha
        total += -a_t * (1.0 - p_t) ** gamma * math.log(p_t)
    return total / flat_z.size


def blob_boxes_loop(mask: np.ndarray, min_area: int = 1) -> list[tuple[tuple[int, int, int, int], int]]:
    """4-connected flood fill; returns ((x, y, w, h), area) sorted like extract_blobs."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    found = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            queue = deque([(r, c)])
            seen[r, c] = True
            pixels = []
            while queue:
                y, x = queue.popleft()
                pixels.append((y, x))
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            if len(pixels) < min_area:
                continue
            ys = [p[0] for p in pixels]
            xs = [p[1] for p in pixels]
            box = (min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1)
            found.append((box, len(pixels)))
    found.sort(key=lambda item: (-item[1], item[0][1], item[0][0]))
    return found
