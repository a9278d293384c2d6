"""Desk corpus: synthetic rasters plus crops of the scikit-image sample data.

Every image is a 256x256 uint8 array. Synthetic images lean on flat areas,
saturation and clipping; the sample crops bring natural texture.
"""
from functools import lru_cache

import numpy as np

SIZE = 256

SAMPLES = [
    ("camera", (0, 0)), ("camera", (200, 150)), ("moon", (100, 100)), ("moon", (256, 200)),
    ("brick", (0, 0)), ("brick", (200, 250)), ("grass", (0, 0)), ("grass", (240, 200)),
    ("gravel", (0, 0)), ("gravel", (250, 250)), ("astronaut", (0, 120)), ("astronaut", (200, 200)),
    ("coffee", (50, 100)), ("coffee", (140, 300)), ("chelsea", (0, 0)), ("chelsea", (40, 190)),
    ("rocket", (100, 100)), ("rocket", (150, 150)), ("cell", (0, 0)), ("clock", (0, 0)),
    ("hubble_deep_field", (100, 100)), ("hubble_deep_field", (400, 600)),
    ("immunohistochemistry", (0, 0)), ("retina", (500, 500)), ("retina", (900, 1000)),
    ("coins", (0, 0)), ("cat", (0, 0)), ("logo", (100, 100)), ("page", (0, 0)),
    ("horse", (0, 0)), ("text", (0, 0)),
]


def _gray(name):
    from skimage import data
    from skimage.util import img_as_ubyte

    img = getattr(data, name)()
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
        img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    elif img.dtype != np.uint8:
        img = img_as_ubyte(img)
    return img


def _crop(img, origin):
    # pad small sources by reflection so every crop is SIZE x SIZE
    ph, pw = max(0, SIZE - img.shape[0]), max(0, SIZE - img.shape[1])
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="reflect")
    r = min(origin[0], img.shape[0] - SIZE)
    c = min(origin[1], img.shape[1] - SIZE)
    return np.ascontiguousarray(img[r:r + SIZE, c:c + SIZE])


def synthetic_images():
    rng = np.random.default_rng(2024)
    y, x = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    out = {}

    def put(name, arr):
        out[name] = np.clip(np.round(arr), 0, 255).astype(np.uint8)

    put("flat_128", np.full((SIZE, SIZE), 128))
    put("flat_37", np.full((SIZE, SIZE), 37))
    put("white", np.full((SIZE, SIZE), 255))
    put("black", np.zeros((SIZE, SIZE)))
    put("ramp_h", x)
    put("ramp_v", 255 * y / (SIZE - 1))
    put("ramp_diag_steep", (x + y) * 1.5 - 100)
    put("radial", 255 - np.hypot(x - 128, y - 128) * 2)
    put("noise_uniform", rng.integers(0, 256, (SIZE, SIZE)))
    put("noise_gauss", 128 + 40 * rng.standard_normal((SIZE, SIZE)))
    put("noise_soft", 128 + 60 * rng.standard_normal((SIZE, SIZE)) * np.sin(x / 40) ** 2)
    put("grating_fine", 128 + 127 * np.sin(2 * np.pi * x / 5))
    put("grating_coarse", 128 + 100 * np.sin(2 * np.pi * (x + 0.5 * y) / 37))
    put("checker_8", 255 * (((x // 8) + (y // 8)) % 2))
    put("checker_3", 255 * (((x // 3) + (y // 3)) % 2))
    put("stripes", 255 * ((x // 4) % 2))
    put("saturated_ramp", (x - 64) * 2.5)
    put("clipped_bright", 220 + 80 * np.sin(x / 9) * np.cos(y / 13))
    put("clipped_dark", 20 + 60 * np.sin(x / 7) * np.cos(y / 11))
    blobs = np.full((SIZE, SIZE), 128.0)
    for _ in range(25):
        cy, cx, rad = rng.integers(0, SIZE, 2).tolist() + [rng.integers(5, 30)]
        blobs[np.hypot(x - cx, y - cy) < rad] = rng.choice([0, 255])
    put("blobs_0_255", blobs)
    put("mixed", np.where(x < 128, 128 + 50 * rng.standard_normal((SIZE, SIZE)), 255 * (y > 128)))
    put("text_like", 255 - 255 * ((rng.random((SIZE // 4, SIZE // 4)) < 0.15).repeat(4, 0).repeat(4, 1)))
    return out


@lru_cache(maxsize=None)
def corpus():
    """Ordered ``{name: image}`` of at least 50 images."""
    images = synthetic_images()
    for name, origin in SAMPLES:
        try:
            images[f"{name}_{origin[0]}_{origin[1]}"] = _crop(_gray(name), origin)
        except Exception:  # sample data unavailable offline
            continue
    return images


def smooth_image():
    """Low-contrast smooth image; keeps a usable capacity under filtering."""
    y, x = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    return np.clip(np.round(128 + 40 * np.sin(x / 50) + 30 * np.cos(y / 70)), 0, 255).astype(np.uint8)
