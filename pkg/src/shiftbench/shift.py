"""Controlled covariate shifts for image and tabular datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from ._seeding import derive_seed, splitmix64
from .predio import LabeledDataset

IMAGE_KINDS = ("rotate", "translate", "blur", "pixel_noise")
TABULAR_KINDS = ("categorical_randomize",)
SHIFT_KINDS = IMAGE_KINDS + TABULAR_KINDS
UNITS = {
    "rotate": "degrees",
    "translate": "pixels",
    "blur": "sigma",
    "pixel_noise": "sigma",
    "categorical_randomize": "probability",
}
# out-of-vocabulary ids are vocab_size + offset, offset in [0, OOV_RANGE)
OOV_RANGE = 1 << 20


class ShiftError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftSpec:
    kind: str
    levels: tuple

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ShiftError(f"unknown shift kind {self.kind!r}; expected one of {SHIFT_KINDS}")
        levels = tuple(float(v) for v in self.levels)
        if not levels:
            raise ShiftError("a shift needs at least one level")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ShiftError("levels must be strictly increasing")
        if not all(math.isfinite(v) for v in levels):
            raise ShiftError("levels must be finite")
        if self.kind == "translate" and any(not v.is_integer() for v in levels):
            raise ShiftError("translate levels are whole pixels")
        if self.kind in ("blur", "pixel_noise") and levels[0] < 0:
            raise ShiftError(f"{self.kind} sigma must be >= 0")
        if self.kind == "categorical_randomize" and (levels[0] < 0 or levels[-1] > 1):
            raise ShiftError("randomisation probabilities must lie in [0, 1]")
        object.__setattr__(self, "levels", levels)

    @property
    def unit(self):
        return UNITS[self.kind]


def rotate_image(img, degrees):
    """Rotate counter-clockwise about the image centre.

    Multiples of 90 degrees on square images are exact pixel permutations;
    everything else is bilinear with zero fill outside the source.
    """
    img = np.asarray(img, dtype=np.float64)
    degrees = float(degrees)
    if not math.isfinite(degrees):
        raise ShiftError("rotation angle must be finite")
    h, w = img.shape
    if h < 2 or w < 2:
        raise ShiftError("image must be at least 2x2")
    quarter = degrees / 90.0
    if h == w and quarter.is_integer():
        return np.rot90(img, int(quarter) % 4).copy()
    theta = math.radians(degrees)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    x, y = cols - cc, cr - rows
    cos, sin = math.cos(theta), math.sin(theta)
    # inverse map: output pixel (x, y) samples the input at R(-theta)(x, y)
    xs = cos * x + sin * y
    ys = -sin * x + cos * y
    coords = np.stack([cr - ys, xs + cc])
    return ndimage.map_coordinates(img, coords, order=1, mode="constant", cval=0.0)


def translate_cyclic(img, dx):
    """Shift columns right by ``dx`` with wrap-around."""
    img = np.asarray(img)
    if int(dx) != dx:
        raise ShiftError("translation must be a whole number of pixels")
    return np.roll(img, int(dx), axis=1)


def gaussian_kernel(sigma):
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur, kernel radius ``ceil(3 sigma)``, mirrored borders."""
    img = np.asarray(img, dtype=np.float64)
    sigma = float(sigma)
    if not math.isfinite(sigma):
        raise ShiftError("sigma must be finite")
    if sigma < 0:
        raise ShiftError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    # scipy 'reflect' mirrors about the edge (d c b a | a b c d), which keeps
    # the image mean exactly for a symmetric kernel
    out = ndimage.convolve1d(img, k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def pixel_noise(img, sigma, seed=0):
    """Additive i.i.d. Gaussian noise, clamped back to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if sigma < 0:
        raise ShiftError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)


def _cell_hash(seed, n_rows, n_cols, salt):
    rows = np.arange(n_rows, dtype=np.uint64)[:, None]
    cols = np.arange(n_cols, dtype=np.uint64)[None, :]
    base = splitmix64(np.uint64(derive_seed(seed, salt)))
    with np.errstate(over="ignore"):
        key = base ^ (rows * np.uint64(0x9E3779B97F4A7C15)) ^ (cols * np.uint64(0xC2B2AE3D27D4EB4F))
    return splitmix64(splitmix64(key))


def randomize_categorical(rows, prob, vocab_sizes, seed=0):
    """Replace categorical cells with unseen token ids with probability ``prob``.

    ``rows`` holds numeric columns followed by ``len(vocab_sizes)``
    categorical columns. A replaced cell in column ``j`` becomes
    ``vocab_sizes[j] + offset`` where both the replace decision and the
    offset are hashes of (seed, row, column), so results are reproducible
    cell by cell.
    """
    prob = float(prob)
    if not 0.0 <= prob <= 1.0:
        raise ShiftError("prob must lie in [0, 1]")
    rows = np.array(rows, dtype=np.float64, copy=True)
    vocab = np.asarray(vocab_sizes, dtype=np.int64)
    n_cat = vocab.size
    if n_cat == 0 or prob == 0.0:
        return rows
    cats = rows[:, -n_cat:]
    if np.any(cats < 0) or np.any(cats >= vocab[None, :]):
        raise ShiftError("token ids must lie within their vocabularies")
    u = (_cell_hash(seed, rows.shape[0], n_cat, "decide") >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    offset = (_cell_hash(seed, rows.shape[0], n_cat, "token") % np.uint64(OOV_RANGE)).astype(np.float64)
    replace = u < prob
    cats[replace] = (vocab[None, :] + offset)[replace]
    rows[:, -n_cat:] = cats
    return rows


def _shift_images(images, kind, level, seed):
    if kind == "rotate":
        return np.stack([rotate_image(im, level) for im in images])
    if kind == "translate":
        return np.roll(images, int(level), axis=2)
    if kind == "blur":
        return np.stack([gaussian_blur(im, level) for im in images])
    if kind == "pixel_noise":
        return pixel_noise(images, level, seed=seed)
    raise ShiftError(f"{kind} is not an image shift")


def apply_shift(data: LabeledDataset, kind, level, seed=0) -> LabeledDataset:
    level = float(level)
    if kind in IMAGE_KINDS:
        if data.kind != "image":
            raise ShiftError(f"shift {kind!r} needs image data, got {data.kind}")
        if level == 0:
            x = data.features
        else:
            x = _shift_images(data.images(), kind, level, seed).reshape(data.n, data.d)
    elif kind in TABULAR_KINDS:
        if data.kind != "tabular" or not data.vocab_sizes:
            raise ShiftError(f"shift {kind!r} needs tabular data with categorical columns")
        x = randomize_categorical(data.features, level, data.vocab_sizes, seed=seed)
    else:
        raise ShiftError(f"unknown shift kind {kind!r}")
    return data.replace(features=x, shift_type=kind, shift_level=level)


def apply_shift_series(data: LabeledDataset, spec: ShiftSpec, seed=0) -> List[LabeledDataset]:
    """One shifted copy of ``data`` per level of ``spec``.

    Stochastic shifts draw from a seed derived from (seed, kind, level
    index), so each level is reproducible on its own.
    """
    if spec.kind in IMAGE_KINDS and data.kind != "image":
        raise ShiftError(f"shift {spec.kind!r} is incompatible with {data.kind} data")
    if spec.kind in TABULAR_KINDS and data.kind != "tabular":
        raise ShiftError(f"shift {spec.kind!r} is incompatible with {data.kind} data")
    return [
        apply_shift(data, spec.kind, level, seed=derive_seed(seed, spec.kind, i))
        for i, level in enumerate(spec.levels)
    ]
