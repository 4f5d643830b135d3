"""Core data types, the prediction file format and dataset ingestion.

A :class:`PredictionSet` is the currency passed between every other module:
an ``N x K`` matrix of predicted class probabilities with optional labels,
optional logits and provenance tags. Prediction files are UTF-8 CSV with a
JSON sidecar manifest; floats are written in shortest round-trip form so a
write/read cycle is bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._seeding import rng_for

ROW_SUM_TOL = 1e-9
LOGIT_TOL = 1e-9

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class PredictionSetError(ValueError):
    """Invalid prediction data; ``row`` is the offending row when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class PredictionFormatError(ValueError):
    pass


class IdxFormatError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _validate_prediction_arrays(probs, labels, logits):
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise PredictionSetError(f"probs must be an N x K matrix, got shape {probs.shape}")
    n, k = probs.shape
    finite = np.isfinite(probs).all(axis=1)
    in_range = ((probs >= 0.0) & (probs <= 1.0)).all(axis=1)
    bad = np.flatnonzero(~(finite & in_range))
    if bad.size:
        raise PredictionSetError("probability outside [0, 1]", row=int(bad[0]))
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        r = int(bad[0])
        raise PredictionSetError(f"row sums to {sums[r]!r}, not 1 within {ROW_SUM_TOL}", row=r)
    if labels is not None:
        if labels.shape != (n,):
            raise PredictionSetError(f"labels must have shape ({n},), got {labels.shape}")
        bad = np.flatnonzero((labels < 0) | (labels >= k))
        if bad.size:
            r = int(bad[0])
            raise PredictionSetError(f"label {labels[r]} out of range [0, {k})", row=r)
    if logits is not None:
        if logits.shape != (n, k):
            raise PredictionSetError(f"logits shape {logits.shape} != probs shape {(n, k)}")
        bad = np.flatnonzero(~np.isfinite(logits).all(axis=1))
        if bad.size:
            raise PredictionSetError("non-finite logit", row=int(bad[0]))
        if n:
            err = np.abs(softmax(logits) - probs).max(axis=1)
            bad = np.flatnonzero(err > LOGIT_TOL)
            if bad.size:
                raise PredictionSetError("softmax(logits) does not reproduce probs", row=int(bad[0]))


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Predicted class probabilities for N examples over K classes.

    ``labels`` is ``None`` for label-free (out-of-distribution) inputs.
    ``n_averaged`` records how many member or sample predictions were
    averaged to produce ``probs`` (1 for a single forward pass).
    """

    probs: np.ndarray
    labels: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    method: str = "unknown"
    dataset: str = "unknown"
    shift_type: str = "none"
    shift_intensity: float = 0
    seed: int = 0
    n_averaged: int = 1

    def __post_init__(self):
        probs = _frozen(self.probs, np.float64)
        labels = None if self.labels is None else _frozen(self.labels, np.int64)
        logits = None if self.logits is None else _frozen(self.logits, np.float64)
        _validate_prediction_arrays(probs, labels, logits)
        if not 0 <= int(self.seed) < 2**64:
            raise PredictionSetError(f"seed {self.seed} is not an unsigned 64-bit integer")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self):
        return self.probs.shape[0]

    @property
    def k(self):
        return self.probs.shape[1]

    @property
    def has_labels(self):
        return self.labels is not None

    def replace(self, **changes):
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return PredictionSet(**kwargs)

    def __eq__(self, other):
        if not isinstance(other, PredictionSet):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()

        return (
            same(self.probs, other.probs)
            and same(self.labels, other.labels)
            and same(self.logits, other.logits)
            and (self.method, self.dataset, self.shift_type, self.seed, self.n_averaged)
            == (other.method, other.dataset, other.shift_type, other.seed, other.n_averaged)
            and float(self.shift_intensity) == float(other.shift_intensity)
        )

    __hash__ = None


@dataclass(frozen=True)
class BinningScheme:
    """Bucket edges for ECE and the Brier decomposition grouping.

    Buckets are ``(rho_s, rho_{s+1}]`` with the first bucket also holding 0.
    In ``quantile`` mode the edges are recomputed from the values being
    binned (see :meth:`edges_for`); ``edges`` then only fixes the bucket count.
    """

    edges: tuple
    mode: str = "equal-width"

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if self.mode not in ("equal-width", "quantile"):
            raise ValueError(f"unknown binning mode {self.mode!r}")
        if len(edges) < 2:
            raise ValueError("need at least two edges")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValueError("edges must start at 0 and end at 1")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("edges must be strictly ascending")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def equal_width(cls, n_bins=10):
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        return cls(tuple(np.linspace(0.0, 1.0, n_bins + 1)), "equal-width")

    @classmethod
    def quantile(cls, n_bins=10):
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        return cls(tuple(np.linspace(0.0, 1.0, n_bins + 1)), "quantile")

    @property
    def n_bins(self):
        return len(self.edges) - 1

    def edges_for(self, values):
        """Edges to use for ``values``.

        Quantile edges split the sorted values into ``n_bins`` runs whose
        sizes differ by at most one; each interior edge is the largest value
        of its run. Ties can merge runs, so fewer buckets may result.
        """
        if self.mode == "equal-width":
            return np.asarray(self.edges)
        v = np.sort(np.asarray(values, dtype=np.float64))
        if v.size == 0:
            return np.asarray(self.edges)
        sizes = [len(chunk) for chunk in np.array_split(np.arange(v.size), self.n_bins)]
        ends = np.cumsum(sizes)[:-1]
        interior = v[ends[ends > 0] - 1]
        edges = np.unique(np.concatenate([[0.0], interior, [1.0]]))
        return edges

    def assign(self, values, edges=None):
        """Bucket index of each value under the half-open ``(lo, hi]`` rule."""
        if edges is None:
            edges = self.edges_for(values)
        return bucketize(values, edges)


def bucketize(values, edges):
    values = np.asarray(values, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges, values, side="left") - 1
    return np.clip(idx, 0, len(edges) - 2)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Features plus (optional) labels.

    ``kind`` is ``"image"`` (rows are flattened ``image_shape`` images in
    [0, 1]) or ``"tabular"`` (``numeric_count`` numeric columns followed by
    ``len(vocab_sizes)`` categorical token-id columns). ``labels`` is
    ``None`` only for out-of-distribution sets.
    """

    features: np.ndarray
    labels: Optional[np.ndarray]
    n_classes: int
    kind: str = "image"
    image_shape: Optional[tuple] = None
    numeric_count: int = 0
    vocab_sizes: tuple = ()
    name: str = "data"
    shift_type: str = "none"
    shift_level: float = 0

    def __post_init__(self):
        x = _frozen(self.features, np.float64)
        if x.ndim != 2:
            raise DatasetError(f"features must be N x d, got shape {x.shape}")
        if x.shape[0] == 0:
            raise DatasetError("dataset is empty (N must be > 0)")
        y = None
        if self.labels is not None:
            y = _frozen(self.labels, np.int64)
            if y.shape != (x.shape[0],):
                raise DatasetError(f"labels shape {y.shape} does not match N={x.shape[0]}")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        if self.kind == "image":
            if self.image_shape is None:
                raise DatasetError("image datasets need image_shape")
            h, w = self.image_shape
            if h * w != x.shape[1]:
                raise DatasetError(f"image_shape {h}x{w} does not match d={x.shape[1]}")
            object.__setattr__(self, "image_shape", (int(h), int(w)))
        elif self.kind == "tabular":
            vocab = tuple(int(v) for v in self.vocab_sizes)
            if self.numeric_count + len(vocab) != x.shape[1]:
                raise DatasetError("numeric_count + categorical_count must equal d")
            cats = x[:, self.numeric_count:]
            if cats.size and (np.any(cats != np.round(cats)) or cats.min() < 0):
                raise DatasetError("categorical entries must be non-negative integer token ids")
            object.__setattr__(self, "vocab_sizes", vocab)
        else:
            raise DatasetError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def images(self):
        """Features reshaped to ``(N, h, w)``."""
        if self.kind != "image":
            raise DatasetError("not an image dataset")
        return self.features.reshape((self.n,) + self.image_shape)

    def replace(self, **changes):
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return LabeledDataset(**kwargs)

    def subset(self, index):
        index = np.asarray(index)
        return self.replace(
            features=self.features[index],
            labels=None if self.labels is None else self.labels[index],
        )

    def same_as(self, other):
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return same(self.features, other.features) and same(self.labels, other.labels)


# --- prediction files -------------------------------------------------------

def manifest_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _intensity_json(v):
    v = float(v)
    return int(v) if v.is_integer() else v


def write_predictions(pset: PredictionSet, path) -> None:
    """Write ``pset`` as CSV plus a sidecar ``<name>.manifest.json``."""
    if not isinstance(pset, PredictionSet):
        raise TypeError("write_predictions expects a PredictionSet")
    # re-validate: refuse to serialise anything that slipped past construction
    _validate_prediction_arrays(pset.probs, pset.labels, pset.logits)
    path = Path(path)
    k = pset.k
    header = ["label"] + [f"p{j}" for j in range(k)]
    if pset.logits is not None:
        header += [f"l{j}" for j in range(k)]
    lines = [",".join(header)]
    labels = pset.labels if pset.labels is not None else np.full(pset.n, -1)
    for i in range(pset.n):
        cells = [str(int(labels[i]))]
        cells += [repr(float(v)) for v in pset.probs[i]]
        if pset.logits is not None:
            cells += [repr(float(v)) for v in pset.logits[i]]
        lines.append(",".join(cells))
    manifest = {
        "n": pset.n,
        "k": k,
        "has_logits": pset.logits is not None,
        "method": pset.method,
        "dataset": pset.dataset,
        "shift_type": pset.shift_type,
        "shift_intensity": _intensity_json(pset.shift_intensity),
        "seed": pset.seed,
        "n_averaged": pset.n_averaged,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    with open(manifest_path(path), "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_predictions(path) -> PredictionSet:
    path = Path(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise PredictionFormatError(f"missing manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    for key in ("n", "k", "has_logits"):
        if key not in manifest:
            raise PredictionFormatError(f"manifest missing field {key!r}")
    n, k, has_logits = int(manifest["n"]), int(manifest["k"]), bool(manifest["has_logits"])

    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise PredictionFormatError("empty prediction file")
    expected = ["label"] + [f"p{j}" for j in range(k)]
    if has_logits:
        expected += [f"l{j}" for j in range(k)]
    if lines[0].split(",") != expected:
        raise PredictionFormatError(
            f"header {lines[0]!r} does not match manifest (k={k}, has_logits={has_logits})"
        )
    rows = lines[1:]
    if len(rows) != n:
        raise PredictionFormatError(f"manifest says n={n} but file has {len(rows)} rows")

    width = len(expected)
    labels = np.empty(n, dtype=np.int64)
    probs = np.empty((n, k), dtype=np.float64)
    logits = np.empty((n, k), dtype=np.float64) if has_logits else None
    for i, line in enumerate(rows):
        cells = line.split(",")
        if len(cells) != width:
            raise PredictionSetError(f"expected {width} fields, got {len(cells)}", row=i)
        try:
            labels[i] = int(cells[0])
            probs[i] = [float(c) for c in cells[1:k + 1]]
            if has_logits:
                logits[i] = [float(c) for c in cells[k + 1:]]
        except ValueError as exc:
            raise PredictionSetError(f"malformed field ({exc})", row=i) from None

    absent = labels == -1
    if absent.all() and n > 0:
        label_arr = None
    elif absent.any():
        raise PredictionSetError("label -1 mixed with real labels", row=int(np.flatnonzero(absent)[0]))
    else:
        label_arr = labels
    return PredictionSet(
        probs=probs,
        labels=label_arr,
        logits=logits,
        method=str(manifest.get("method", "unknown")),
        dataset=str(manifest.get("dataset", "unknown")),
        shift_type=str(manifest.get("shift_type", "none")),
        shift_intensity=manifest.get("shift_intensity", 0),
        seed=int(manifest.get("seed", 0)),
        n_averaged=int(manifest.get("n_averaged", 1)),
    )


# --- IDX ingestion ----------------------------------------------------------

def _read_idx_file(path, magic):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, data[4:header_len])
    size = int(np.prod(dims))
    payload = data[header_len:]
    if len(payload) < size:
        raise IdxFormatError(f"{path}: truncated payload ({len(payload)} of {size} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=size).reshape(dims)


def read_idx(images_path, labels_path, limit=None, n_classes=10, name=None) -> LabeledDataset:
    """Load an IDX image/label pair (MNIST layout), pixels scaled to [0, 1]."""
    images = _read_idx_file(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx_file(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    if images.shape[0] == 0:
        raise DatasetError("dataset is empty (N must be > 0)")
    n, h, w = images.shape
    n_classes = max(int(n_classes), int(labels.max()) + 1)
    return LabeledDataset(
        features=images.reshape(n, h * w).astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        n_classes=n_classes,
        kind="image",
        image_shape=(h, w),
        name=name or Path(images_path).stem,
    )


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(N, h, w)`` and labels ``(N,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


# --- synthetic generators ---------------------------------------------------

def bar_template(side, angle_deg, half_width=0.75):
    """Anti-aliased ray from the image centre to the border at ``angle_deg``.

    Angles are counter-clockwise from the +x axis with image rows running
    downwards, matching :func:`shiftbench.shift.rotate_image`.
    """
    c = (side - 1) / 2.0
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    x, y = cols - c, c - rows
    theta = math.radians(angle_deg)
    ux, uy = math.cos(theta), math.sin(theta)
    t = np.clip(x * ux + y * uy, 0.0, c)
    dist = np.hypot(x - t * ux, y - t * uy)
    return np.clip(1.0 + half_width - dist, 0.0, 1.0)


def make_synthetic_bars(n_per_class, classes, side=16, noise_sigma=0.1, seed=0,
                        angle_jitter=0.0, arc=180.0) -> LabeledDataset:
    """Images of a bright bar whose orientation encodes the class.

    Class ``j`` is a ray from the centre at ``j * arc / classes`` degrees,
    offset by a uniform draw from ``+-angle_jitter / 2`` of the class
    spacing (``angle_jitter=1`` fills the whole orientation bucket).
    A full-length line would be symmetric under a half turn and recover its
    class at 180 degrees; a ray keeps rotation harmful over 0-180 degrees.
    With ``arc=180`` the training orientations cover half the circle, so
    large rotations produce rays no class was ever drawn with.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if side < 8:
        raise ValueError("side must be >= 8")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if not 0.0 <= angle_jitter <= 1.0:
        raise ValueError("angle_jitter must lie in [0, 1]")
    if not 0.0 < arc <= 360.0:
        raise ValueError("arc must lie in (0, 360]")
    rng = rng_for(seed, "bars")
    spacing = arc / classes
    labels = np.repeat(np.arange(classes), n_per_class)
    offsets = (rng.random(labels.size) - 0.5) * angle_jitter * spacing
    if angle_jitter > 0:
        x = np.stack([bar_template(side, j * spacing + o).ravel() for j, o in zip(labels, offsets)])
    else:
        templates = np.stack([bar_template(side, j * spacing).ravel() for j in range(classes)])
        x = templates[labels]
    if noise_sigma > 0:
        x = np.clip(x + rng.normal(0.0, noise_sigma, size=x.shape), 0.0, 1.0)
    return LabeledDataset(
        features=x, labels=labels, n_classes=classes, kind="image",
        image_shape=(side, side), name="bars",
    )


def make_noise_images(n, side=16, mean=0.1, sigma=0.3, seed=0, name="noise") -> LabeledDataset:
    """Label-free clipped Gaussian noise images, an out-of-distribution source."""
    rng = rng_for(seed, "noise-images")
    x = np.clip(rng.normal(mean, sigma, size=(n, side * side)), 0.0, 1.0)
    return LabeledDataset(
        features=x, labels=None, n_classes=1, kind="image", image_shape=(side, side), name=name,
    )


def make_synthetic_tabular(
    n,
    numeric_count=4,
    vocab_sizes: Sequence[int] = (20, 20, 20, 20),
    effect_scale=1.5,
    numeric_scale=0.5,
    seed=0,
) -> LabeledDataset:
    """Binary click-style data: numeric columns then categorical token ids.

    Each token carries a random additive effect on the log-odds, so the
    label depends mostly on the categorical columns and randomising them
    destroys signal.
    """
    rng = rng_for(seed, "tabular")
    vocab_sizes = tuple(int(v) for v in vocab_sizes)
    numeric = rng.normal(size=(n, numeric_count))
    w_num = rng.normal(0.0, numeric_scale, size=numeric_count)
    effects = [rng.normal(0.0, effect_scale, size=v) for v in vocab_sizes]
    tokens = np.stack([rng.integers(0, v, size=n) for v in vocab_sizes], axis=1) if vocab_sizes else np.zeros((n, 0))
    logit = numeric @ w_num
    for j, eff in enumerate(effects):
        logit = logit + eff[tokens[:, j].astype(int)]
    logit = logit - np.median(logit)
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)
    return LabeledDataset(
        features=np.hstack([numeric, tokens.astype(np.float64)]),
        labels=labels,
        n_classes=2,
        kind="tabular",
        numeric_count=numeric_count,
        vocab_sizes=vocab_sizes,
        name="tabular",
    )
