"""Reference probabilistic classifiers trained from scratch with numpy.

One fully connected ReLU network covers every method:

* ``vanilla``     point weights, a single deterministic pass
* ``dropout``     inverted dropout before every affine layer, kept at test time
* ``ll_dropout``  dropout only on the activations entering the last layer
* ``svi``         mean-field Gaussian posterior over every weight matrix
* ``ll_svi``      mean-field posterior over the last weight matrix only

Variational layers are sampled with the plain reparameterisation
``W = mu + exp(log_std) * eps`` and trained on the ELBO (mean cross-entropy
plus KL(q || prior) / N). Biases are point estimates throughout.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ._seeding import derive_seed
from .predio import LabeledDataset, PredictionSet, softmax

log = logging.getLogger(__name__)

METHODS = ("vanilla", "dropout", "ll_dropout", "svi", "ll_svi")
STOCHASTIC = ("dropout", "ll_dropout", "svi", "ll_svi")
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
VALIDATION_SAMPLES = 8
SBM_MAGIC = b"SBM1"
SBM_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple = (64,)
    method: str = "vanilla"
    dropout_rate: float = 0.0
    prior_sigma: float = 1.0
    init_posterior_std: float = 1e-3
    mc_samples: int = 1
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.method not in METHODS:
            raise ModelError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if any(w <= 0 for w in self.layer_widths):
            raise ModelError("layer widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout rate must lie in [0, 1)")
        if self.prior_sigma <= 0 or self.init_posterior_std <= 0:
            raise ModelError("prior_sigma and init_posterior_std must be positive")
        if self.mc_samples < 1:
            raise ModelError("mc_samples must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ModelError("epochs, batch_size and learning_rate must be positive")

    @property
    def stochastic(self):
        return self.method in STOCHASTIC

    def to_json(self):
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d

    @classmethod
    def from_json(cls, d):
        return cls(**d)


@dataclass
class ModelParams:
    """Trained weights. ``layers[i]`` maps array names to arrays.

    Point layers hold ``w`` and ``b``; variational layers hold ``w_mu``,
    ``w_logstd`` and ``b``.
    """

    layers: List[Dict[str, np.ndarray]]
    n_classes: int
    encoding: dict
    meta: dict = field(default_factory=dict)

    @property
    def d_in(self):
        first = self.layers[0]
        return (first["w"] if "w" in first else first["w_mu"]).shape[0]

    def copy(self):
        return ModelParams(
            [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
            self.n_classes, dict(self.encoding), copy.deepcopy(self.meta),
        )


# --- feature encoding -------------------------------------------------------

def encoding_for(data: LabeledDataset):
    if data.kind == "image":
        return {"kind": "image", "d": data.d}
    return {"kind": "tabular", "numeric_count": data.numeric_count, "vocab_sizes": list(data.vocab_sizes)}


def encode(data: LabeledDataset, encoding):
    """Network inputs for ``data``.

    Categorical tokens are one-hot encoded after hashing into their
    vocabulary's buckets (``token mod vocab_size``), so unseen tokens
    collide with some in-vocabulary bucket.
    """
    if encoding["kind"] == "image":
        if data.kind != "image" or data.d != encoding["d"]:
            raise ModelError(f"model expects {encoding['d']} image features, data has {data.kind}/{data.d}")
        return data.features
    if data.kind != "tabular" or data.numeric_count != encoding["numeric_count"] or list(
        data.vocab_sizes
    ) != list(encoding["vocab_sizes"]):
        raise ModelError("tabular layout of data does not match the model")
    nc = encoding["numeric_count"]
    parts = [data.features[:, :nc]]
    for j, v in enumerate(encoding["vocab_sizes"]):
        bucket = data.features[:, nc + j].astype(np.int64) % v
        onehot = np.zeros((data.n, v))
        onehot[np.arange(data.n), bucket] = 1.0
        parts.append(onehot)
    return np.hstack(parts)


# --- network ----------------------------------------------------------------

def _dropout_layers(spec, n_layers):
    if spec.method == "dropout":
        return set(range(n_layers))
    if spec.method == "ll_dropout":
        return {n_layers - 1}
    return set()


def _svi_layers(spec, n_layers):
    if spec.method == "svi":
        return set(range(n_layers))
    if spec.method == "ll_svi":
        return {n_layers - 1}
    return set()


def init_params(spec: ModelSpec, d_in, n_classes, encoding=None, seed=None) -> ModelParams:
    """He-scaled normal weights, zero biases; posterior std starts at
    ``min(init_posterior_std, prior_sigma)``."""
    rng = np.random.default_rng(derive_seed(spec.seed if seed is None else seed, "init"))
    sizes = [d_in, *spec.layer_widths, n_classes]
    svi = _svi_layers(spec, len(sizes) - 1)
    log_std0 = math.log(min(spec.init_posterior_std, spec.prior_sigma))
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b))
        if i in svi:
            layers.append({"w_mu": w, "w_logstd": np.full((a, b), log_std0), "b": np.zeros(b)})
        else:
            layers.append({"w": w, "b": np.zeros(b)})
    return ModelParams(layers, n_classes, encoding or {"kind": "image", "d": d_in})


@dataclass
class Noise:
    """Dropout masks (already scaled by 1/(1-p)) and standard-normal weight
    draws per layer; ``None`` entries mean no noise for that layer."""

    masks: List[Optional[np.ndarray]]
    eps: List[Optional[np.ndarray]]


def sample_noise(params, spec, n_rows, rng) -> Noise:
    n_layers = len(params.layers)
    drop = _dropout_layers(spec, n_layers)
    masks, eps = [], []
    keep = 1.0 - spec.dropout_rate
    for i, layer in enumerate(params.layers):
        if i in drop:
            width = (layer["w"] if "w" in layer else layer["w_mu"]).shape[0]
            masks.append((rng.random((n_rows, width)) < keep) / keep)
        else:
            masks.append(None)
        eps.append(rng.standard_normal(layer["w_mu"].shape) if "w_mu" in layer else None)
    return Noise(masks, eps)


def _weight(layer, eps):
    if "w" in layer:
        return layer["w"]
    if eps is None:
        return layer["w_mu"]
    return layer["w_mu"] + np.exp(layer["w_logstd"]) * eps


def forward(params: ModelParams, x, noise: Optional[Noise] = None):
    """Logits and the cache needed by :func:`backward`."""
    h = x
    cache = []
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        mask = noise.masks[i] if noise is not None else None
        eps = noise.eps[i] if noise is not None else None
        h_in = h * mask if mask is not None else h
        w = _weight(layer, eps)
        z = h_in @ w + layer["b"]
        cache.append((h_in, w, z, mask, eps))
        h = z if i == last else np.maximum(z, 0.0)
    return h, cache


def backward(params, cache, dlogits):
    grads = []
    dz = dlogits
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        h_in, w, z, mask, eps = cache[i]
        dw = h_in.T @ dz
        g = {"b": dz.sum(axis=0)}
        if "w" in layer:
            g["w"] = dw
        else:
            g["w_mu"] = dw
            g["w_logstd"] = dw * eps * np.exp(layer["w_logstd"]) if eps is not None else np.zeros_like(dw)
        grads.append(g)
        if i > 0:
            dh = dz @ w.T
            if mask is not None:
                dh = dh * mask
            dz = dh * (cache[i - 1][2] > 0)
    grads.reverse()
    return grads


def kl_divergence(params, prior_sigma):
    """KL(q || N(0, prior_sigma^2)) summed over every variational weight."""
    total = 0.0
    log_prior = math.log(prior_sigma)
    for layer in params.layers:
        if "w_mu" in layer:
            diff = layer["w_logstd"] - log_prior
            mu = layer["w_mu"] / prior_sigma
            total += float(np.sum(-diff + 0.5 * (np.exp(2.0 * diff) + mu * mu) - 0.5))
    return total


def kl_gradients(params, prior_sigma):
    log_prior = math.log(prior_sigma)
    out = []
    for layer in params.layers:
        if "w_mu" in layer:
            diff = layer["w_logstd"] - log_prior
            out.append({"w_mu": layer["w_mu"] / prior_sigma ** 2, "w_logstd": np.exp(2.0 * diff) - 1.0})
        else:
            out.append({})
    return out


def loss_and_grads(params, spec, x, y, n_total, noise=None):
    """Minibatch objective and its gradients.

    Returns ``(loss, grads, parts)`` with ``loss = parts["nll"] +
    parts["kl"] / n_total``; the KL part is zero for non-variational models.
    """
    logits, cache = forward(params, x, noise)
    n = x.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    data_nll = float(np.mean(log_norm - z[np.arange(n), y]))
    dlogits = np.exp(z - log_norm[:, None])
    dlogits[np.arange(n), y] -= 1.0
    grads = backward(params, cache, dlogits / n)
    kl = 0.0
    if any("w_mu" in layer for layer in params.layers):
        kl = kl_divergence(params, spec.prior_sigma)
        for g, gk in zip(grads, kl_gradients(params, spec.prior_sigma)):
            for k, v in gk.items():
                g[k] = g[k] + v / n_total
    return data_nll + kl / n_total, grads, {"nll": data_nll, "kl": kl}


# --- training ---------------------------------------------------------------

class _Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in params.layers]
        self.v = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in params.layers]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for layer, g, m, v in zip(params.layers, grads, self.m, self.v):
            for k in layer:
                m[k] *= ADAM_BETA1
                m[k] += (1.0 - ADAM_BETA1) * g[k]
                v[k] *= ADAM_BETA2
                v[k] += (1.0 - ADAM_BETA2) * g[k] ** 2
                layer[k] -= self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + ADAM_EPS)


def predictive_probs(params, spec, x, samples, seed):
    """Per-sample probability matrices, shape ``(S, N, K)``."""
    if not spec.stochastic:
        return softmax(forward(params, x)[0])[None]
    out = []
    for s in range(samples):
        rng = np.random.default_rng(derive_seed(seed, "sample", s))
        noise = sample_noise(params, spec, x.shape[0], rng)
        out.append(softmax(forward(params, x, noise)[0]))
    return np.stack(out)


def validation_nll(params, spec, data: LabeledDataset, seed=0):
    """NLL of the (sample-averaged) predictive distribution on ``data``."""
    x = encode(data, params.encoding)
    samples = min(spec.mc_samples, VALIDATION_SAMPLES)
    p = predictive_probs(params, spec, x, samples, derive_seed(seed, "validation")).mean(axis=0)
    p_true = p[np.arange(data.n), data.labels]
    return float(-np.mean(np.log(np.maximum(p_true, 1e-12))))


def train(spec: ModelSpec, data: LabeledDataset, validation: LabeledDataset) -> ModelParams:
    """Fit ``spec`` on ``data`` with minibatch Adam.

    The parameters from the epoch with the best validation log-likelihood
    are returned; ``meta`` records that epoch and the per-epoch history.
    """
    if data.labels is None or validation.labels is None:
        raise ModelError("training and validation data need labels")
    if data.n_classes != validation.n_classes or data.d != validation.d:
        raise ModelError("training and validation data disagree on K or d")
    encoding = encoding_for(data)
    x = encode(data, encoding)
    y = data.labels
    params = init_params(spec, x.shape[1], data.n_classes, encoding)
    opt = _Adam(params, spec.learning_rate)
    rng = np.random.default_rng(derive_seed(spec.seed, "train"))
    n = data.n
    best, best_nll, best_epoch = params.copy(), math.inf, -1
    history = []
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            noise = sample_noise(params, spec, idx.size, rng) if spec.stochastic else None
            loss, grads, _ = loss_and_grads(params, spec, x[idx], y[idx], n, noise)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            opt.step(params, grads)
            total += loss * idx.size
        val = validation_nll(params, spec, validation, seed=spec.seed)
        if not math.isfinite(val):
            raise TrainingDivergedError(epoch, val)
        history.append({"epoch": epoch, "train_loss": total / n, "val_nll": val})
        if val < best_nll:
            best, best_nll, best_epoch = params.copy(), val, epoch
    log.debug("trained %s seed=%d: best epoch %d val_nll %.4f", spec.method, spec.seed, best_epoch, best_nll)
    best.meta = {"best_epoch": best_epoch, "val_nll": best_nll, "history": history, "spec": spec.to_json()}
    return best


def member_seed(seed, index):
    return derive_seed(seed, "member", index)


def train_ensemble(spec: ModelSpec, m: int, data, validation) -> List[ModelParams]:
    """``m`` independently initialised members; member ``i`` uses seed
    ``member_seed(spec.seed, i)``."""
    if m < 1:
        raise ModelError("ensemble size must be >= 1")
    return [train(replace(spec, seed=member_seed(spec.seed, i)), data, validation) for i in range(m)]


def predict(params: ModelParams, spec: ModelSpec, data: LabeledDataset, samples=1, seed=0,
            method=None) -> List[PredictionSet]:
    """Per-sample prediction sets (a single set for deterministic methods).

    Stochastic methods draw fresh dropout masks or posterior weights for
    each sample; sample ``s`` uses a seed derived from ``(seed, s)``.
    """
    x = encode(data, params.encoding)
    if x.shape[1] != params.d_in:
        raise ModelError(f"model expects {params.d_in} inputs, data encodes to {x.shape[1]}")
    samples = 1 if not spec.stochastic else int(samples)
    if samples < 1:
        raise ModelError("samples must be >= 1")
    out = []
    for s in range(samples):
        if spec.stochastic:
            rng = np.random.default_rng(derive_seed(seed, "sample", s))
            noise = sample_noise(params, spec, x.shape[0], rng)
        else:
            noise = None
        logits = forward(params, x, noise)[0]
        out.append(PredictionSet(
            probs=softmax(logits),
            labels=data.labels,
            logits=logits,
            method=method or spec.method,
            dataset=data.name,
            shift_type=data.shift_type,
            shift_intensity=data.shift_level,
            seed=seed,
        ))
    return out


# --- hyperparameter search --------------------------------------------------

def tune(template: ModelSpec, space: dict, budget: int, data, validation, seed=0):
    """Random search maximising validation log-likelihood.

    ``space`` may give ``learning_rate`` as ``[lo, hi]`` (log-uniform),
    ``batch_size`` as a list of choices and ``dropout_rate`` as ``[lo, hi]``
    (uniform). Returns ``(best_spec, trials)``; ``trials`` is the full log.
    """
    if budget < 1:
        raise ModelError("budget must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "tune"))
    trials = []
    best_spec, best_nll = None, math.inf
    for t in range(budget):
        changes = {}
        if "learning_rate" in space:
            lo, hi = space["learning_rate"]
            changes["learning_rate"] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        if "batch_size" in space:
            changes["batch_size"] = int(space["batch_size"][rng.integers(len(space["batch_size"]))])
        if "dropout_rate" in space:
            lo, hi = space["dropout_rate"]
            changes["dropout_rate"] = float(rng.uniform(lo, hi))
        spec = replace(template, **changes)
        record = {"trial": t, **changes}
        try:
            params = train(spec, data, validation)
            record["val_nll"] = params.meta["val_nll"]
            record["diverged"] = False
        except TrainingDivergedError as exc:
            record["val_nll"] = math.inf
            record["diverged"] = True
            log.info("tune trial %d diverged at epoch %d", t, exc.epoch)
        trials.append(record)
        if record["val_nll"] < best_nll:
            best_spec, best_nll = spec, record["val_nll"]
    if best_spec is None:
        raise ModelError("every tuning trial diverged")
    return best_spec, trials


# --- serialisation ----------------------------------------------------------

def save_params(params: ModelParams, path):
    """Write ``SBM1`` binary: little-endian header, JSON metadata, then
    named shape-prefixed float64 arrays."""
    header = json.dumps(
        {"n_classes": params.n_classes, "encoding": params.encoding, "meta": params.meta},
        sort_keys=True, allow_nan=True,
    ).encode("utf-8")
    arrays = []
    for i, layer in enumerate(params.layers):
        for name in sorted(layer):
            arrays.append((f"{i}/{name}", np.ascontiguousarray(layer[name], dtype="<f8")))
    buf = io.BytesIO()
    buf.write(SBM_MAGIC)
    buf.write(struct.pack("<II", SBM_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(arrays)))
    for name, a in arrays:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack("<" + "Q" * a.ndim, *a.shape))
        buf.write(a.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != SBM_MAGIC:
        raise ModelError(f"{path}: not an SBM1 parameter file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != SBM_VERSION:
        raise ModelError(f"{path}: unsupported version {version}")
    pos = 12
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    layers: Dict[int, dict] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from("<" + "Q" * ndim, data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) * 8
        if pos + size > len(data):
            raise ModelError(f"{path}: truncated array {name}")
        arr = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += size
        idx, key = name.split("/", 1)
        layers.setdefault(int(idx), {})[key] = arr
    return ModelParams([layers[i] for i in sorted(layers)], header["n_classes"], header["encoding"], header["meta"])
