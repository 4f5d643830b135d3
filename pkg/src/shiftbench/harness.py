"""End-to-end experiments: train methods, shift the test split, score, report.

A run is a pure function of its :class:`RunConfig`. Every random choice
(split, initialisation, dropout masks, shift noise) draws from a seed derived
from the master seed and a fixed key, and every file is written in a fixed
order with shortest round-trip floats, so reruns are byte-identical.

Output layout under ``output_dir``::

    report.csv          method,shift_type,level,intensity,metric,value
    summary.csv         method,metric,level,n,q25,median,q75,min,max
    report_meta.json    temperature, per-method training notes, tuning logs
    predictions/*.csv   one prediction file (plus manifest) per evaluation point
    curves/*.csv        confidence/entropy diagnostics per prediction file
    models/*.sbm        trained parameters (``train`` only)
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import aggregate, calibrate
from . import metrics as M
from . import models, predio, shift
from ._seeding import derive_seed
from .predio import BinningScheme, LabeledDataset, PredictionSet

log = logging.getLogger(__name__)

METHOD_KINDS = ("vanilla", "temp_scaling", "ensemble", "dropout", "ll_dropout", "svi", "ll_svi")
DATA_SOURCES = ("bars", "tabular", "idx")
OOD_SOURCES = ("noise", "idx")
SPLIT = (0.8, 0.1, 0.1)
OOD_SHIFT = "ood"
REPORT_COLUMNS = ["method", "shift_type", "level", "intensity", "metric", "value"]
SUMMARY_COLUMNS = ["method", "metric", "level", "n", "q25", "median", "q75", "min", "max"]


class ConfigError(ValueError):
    pass


class HarnessError(RuntimeError):
    """A failure inside a run, tagged with where it happened."""

    def __init__(self, message, method=None, shift_type=None, intensity=None):
        self.coordinate = {"method": method, "shift_type": shift_type, "intensity": intensity}
        where = ", ".join(f"{k}={v}" for k, v in self.coordinate.items() if v is not None)
        super().__init__(f"{message} [{where}]" if where else message)


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class MethodConfig:
    name: str
    kind: str
    model: Optional[models.ModelSpec] = None
    ensemble_size: int = 5
    base: Optional[str] = None
    tune: Optional[dict] = None


@dataclass(frozen=True)
class RunConfig:
    dataset: dict
    methods: tuple
    shifts: tuple
    metrics: tuple
    seed: int = 0
    ood: Optional[dict] = None
    bins: BinningScheme = field(default_factory=lambda: M.DEFAULT_BINS)
    thresholds: tuple = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))
    hist_bins: int = 10
    output_dir: str = "out"
    size_study: Optional[dict] = None

    def method(self, name) -> MethodConfig:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)


def _check_source(d, sources, what, base_dir):
    if not isinstance(d, dict) or d.get("source") not in sources:
        raise ConfigError(f"{what}.source must be one of {sources}")
    if d["source"] == "idx":
        for key in ("images", "labels"):
            if key not in d:
                raise ConfigError(f"{what} idx source needs {key!r}")
            p = Path(d[key])
            if not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"{what}.{key}: no such file {p}")
            d[key] = str(p)
    return d


def _model_spec(d, name, seed):
    d = dict(d or {})
    d.setdefault("seed", derive_seed(seed, "model", name))
    try:
        return models.ModelSpec.from_json(d)
    except TypeError as exc:
        raise ConfigError(f"method {name!r}: {exc}") from None


def config_from_dict(raw: dict, base_dir=".", seed=None) -> RunConfig:
    """Validate a parsed JSON config. ``seed`` overrides the master seed.

    Relative paths (idx files, output directory) resolve against
    ``base_dir``, normally the directory holding the config file.
    """
    raw = json.loads(json.dumps(raw))
    base_dir = Path(base_dir)
    master = int(raw.get("seed", 0) if seed is None else seed)
    dataset = _check_source(raw.get("dataset"), DATA_SOURCES, "dataset", base_dir)
    ood = raw.get("ood")
    if ood is not None:
        ood = _check_source(ood, OOD_SOURCES, "ood", base_dir)

    method_list = raw.get("methods") or []
    if not method_list:
        raise ConfigError("config needs at least one method")
    methods = []
    for m in method_list:
        kind = m.get("kind")
        name = m.get("name", kind)
        if kind not in METHOD_KINDS:
            raise ConfigError(f"method {name!r}: kind must be one of {METHOD_KINDS}")
        model = None
        if kind != "temp_scaling":
            spec = dict(m.get("model") or {})
            spec["method"] = "vanilla" if kind == "ensemble" else kind
            model = _model_spec(spec, name, master)
        methods.append(MethodConfig(
            name=name, kind=kind, model=model,
            ensemble_size=int(m.get("ensemble_size", 5)),
            base=m.get("base"), tune=m.get("tune"),
        ))
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError("method names must be unique")
    for i, m in enumerate(methods):
        if m.kind == "temp_scaling":
            base = m.base or next((n.name for n in methods if n.kind == "vanilla"), None)
            if base is None or base not in names or methods[names.index(base)].kind != "vanilla":
                raise ConfigError(f"method {m.name!r}: temperature scaling needs a vanilla base method")
            methods[i] = replace(m, base=base)
        if m.kind == "ensemble" and m.ensemble_size < 1:
            raise ConfigError(f"method {m.name!r}: ensemble_size must be >= 1")

    shifts = tuple(shift.ShiftSpec(s["kind"], tuple(s["levels"])) for s in raw.get("shifts", []))
    if not shifts:
        shifts = (shift.ShiftSpec("rotate" if dataset["source"] != "tabular" else "categorical_randomize", (0,)),)

    metric_names = tuple(raw.get("metrics") or ())
    if not metric_names:
        raise ConfigError("config needs at least one metric")
    known = set(M.LABELED_METRICS) | set(M.LABEL_FREE_METRICS)
    for name in metric_names:
        if name not in known:
            raise ConfigError(f"unknown metric {name!r}")

    b = raw.get("bins", {})
    n_bins = int(b.get("n_bins", 10))
    bins = BinningScheme.quantile(n_bins) if b.get("mode") == "quantile" else BinningScheme.equal_width(n_bins)
    curves = raw.get("curves", {})
    n_tau = int(curves.get("thresholds", 11))
    out = Path(raw.get("output_dir", "out"))
    if not out.is_absolute():
        out = base_dir / out
    return RunConfig(
        dataset=dataset, methods=tuple(methods), shifts=shifts, metrics=metric_names,
        seed=master, ood=ood, bins=bins,
        thresholds=tuple(float(v) for v in np.round(np.linspace(0.0, 1.0, n_tau), 10)),
        hist_bins=int(curves.get("hist_bins", 10)),
        output_dir=str(out), size_study=raw.get("size_study"),
    )


def load_config(path, seed=None, output_dir=None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if output_dir is not None:
        raw["output_dir"] = str(Path(output_dir).resolve())
    return config_from_dict(raw, base_dir=path.parent, seed=seed)


# --- data -------------------------------------------------------------------

_BARS_KEYS = ("n_per_class", "classes", "side", "noise_sigma", "angle_jitter", "arc")
_TABULAR_KEYS = ("n", "numeric_count", "vocab_sizes", "effect_scale", "numeric_scale")


def _pick(d, keys):
    return {k: d[k] for k in keys if k in d}


def load_dataset(cfg: RunConfig) -> LabeledDataset:
    d = cfg.dataset
    seed = derive_seed(cfg.seed, "data")
    if d["source"] == "bars":
        return predio.make_synthetic_bars(seed=seed, **_pick(d, _BARS_KEYS))
    if d["source"] == "tabular":
        return predio.make_synthetic_tabular(seed=seed, **_pick(d, _TABULAR_KEYS))
    return predio.read_idx(d["images"], d["labels"], limit=d.get("limit"),
                           n_classes=int(d.get("n_classes", 10)), name=d.get("name", "idx"))


def load_ood(cfg: RunConfig, data: LabeledDataset) -> Optional[LabeledDataset]:
    d = cfg.ood
    if d is None:
        return None
    if data.kind != "image":
        raise ConfigError("OOD sources are images; the dataset is tabular")
    if d["source"] == "noise":
        ood = predio.make_noise_images(
            int(d.get("n", 1000)), side=data.image_shape[0], mean=float(d.get("mean", 0.1)),
            sigma=float(d.get("sigma", 0.3)), seed=derive_seed(cfg.seed, "ood"),
        )
    else:
        # labels of an OOD idx pair are read for validation, then dropped
        ood = predio.read_idx(d["images"], d["labels"], limit=d.get("limit"),
                              n_classes=data.n_classes, name=d.get("name", "ood"))
        ood = ood.replace(labels=None)
    if ood.d != data.d:
        raise ConfigError(f"OOD images have {ood.d} pixels, the dataset has {data.d}")
    return ood


def split(data: LabeledDataset, seed):
    """80/10/10 train/validation/test split by a seeded shuffle."""
    perm = np.random.default_rng(derive_seed(seed, "split")).permutation(data.n)
    a = int(round(SPLIT[0] * data.n))
    b = a + int(round(SPLIT[1] * data.n))
    if a == 0 or b == a or b == data.n:
        raise ConfigError(f"{data.n} examples are too few for an 80/10/10 split")
    return data.subset(perm[:a]), data.subset(perm[a:b]), data.subset(perm[b:])


# --- training ---------------------------------------------------------------

@dataclass
class Trained:
    """Fitted state of one configured method."""

    config: MethodConfig
    spec: Optional[models.ModelSpec] = None
    params: List[models.ModelParams] = field(default_factory=list)
    temperature: Optional[calibrate.Temperature] = None
    trials: Optional[list] = None


def _train_one(m: MethodConfig, train, val, seed):
    spec, trials = m.model, None
    if m.tune:
        space = dict(m.tune.get("space", {}))
        if m.kind in ("dropout", "ll_dropout"):
            space.setdefault("dropout_rate", [0.05, 0.5])
        spec, trials = models.tune(spec, space, int(m.tune.get("budget", 4)), train, val,
                                   seed=derive_seed(seed, "tune", m.name))
    if m.kind == "ensemble":
        params = models.train_ensemble(spec, m.ensemble_size, train, val)
    else:
        params = [models.train(spec, train, val)]
    return Trained(m, spec, params, trials=trials)


def train_methods(cfg: RunConfig, train, val) -> Dict[str, Trained]:
    out: Dict[str, Trained] = {}
    for m in cfg.methods:
        if m.kind == "temp_scaling":
            continue
        try:
            out[m.name] = _train_one(m, train, val, cfg.seed)
        except (ValueError, RuntimeError) as exc:
            raise HarnessError(f"training failed: {exc}", method=m.name) from exc
    for m in cfg.methods:
        if m.kind != "temp_scaling":
            continue
        base = out[m.base]
        pset = models.predict(base.params[0], base.spec, val)[0]
        try:
            temp = calibrate.fit_temperature(pset.logits, pset.labels)
        except ValueError as exc:
            raise HarnessError(f"temperature fit failed: {exc}", method=m.name) from exc
        out[m.name] = Trained(m, base.spec, base.params, temperature=temp)
    return {m.name: out[m.name] for m in cfg.methods}


# --- prediction -------------------------------------------------------------

def predict_method(t: Trained, data: LabeledDataset, seed) -> PredictionSet:
    """The method's predictive distribution on ``data``.

    Stochastic methods average ``mc_samples`` draws; ensembles average their
    members; temperature scaling rescales its base model's logits.
    """
    name = t.config.name
    if t.config.kind == "ensemble":
        members = [models.predict(p, t.spec, data, method=name)[0] for p in t.params]
        return aggregate.ensemble_mean(members, method=name)
    sets = models.predict(t.params[0], t.spec, data, samples=t.spec.mc_samples, seed=seed, method=name)
    if t.spec.stochastic:
        return aggregate.mc_average(sets, method=name)
    pset = sets[0]
    if t.temperature is not None:
        pset = calibrate.apply_temperature(pset, t.temperature, suffix="")
    return pset


def shift_points(cfg: RunConfig, test: LabeledDataset):
    """``(shift_type, level_index, dataset)`` for every configured level."""
    points = []
    for spec in cfg.shifts:
        try:
            series = shift.apply_shift_series(test, spec, seed=derive_seed(cfg.seed, "shift", spec.kind))
        except ValueError as exc:
            raise HarnessError(f"shift failed: {exc}", shift_type=spec.kind) from exc
        points.extend((spec.kind, i, ds) for i, ds in enumerate(series))
    return points


def _stem(method, shift_type, level):
    return f"{method}__{shift_type}__{level:02d}"


def predict_all(cfg: RunConfig, trained, points, ood=None):
    """``{stem: (shift_type, level, PredictionSet)}`` in canonical order."""
    preds = {}
    for name, t in trained.items():
        for kind, level, ds in points:
            try:
                pset = predict_method(t, ds, derive_seed(cfg.seed, "predict", name, kind, level))
            except ValueError as exc:
                raise HarnessError(f"prediction failed: {exc}", name, kind, ds.shift_level) from exc
            preds[_stem(name, kind, level)] = (kind, level, pset)
        if ood is not None:
            pset = predict_method(t, ood.replace(shift_type=OOD_SHIFT), derive_seed(cfg.seed, "predict", name, OOD_SHIFT))
            preds[_stem(name, OOD_SHIFT, 0)] = (OOD_SHIFT, 0, pset)
    return preds


# --- reporting --------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    method: str
    shift_type: str
    level: int
    intensity: float
    metric: str
    value: float


@dataclass(frozen=True)
class SummaryRow:
    method: str
    metric: str
    level: int
    n: int
    q25: float
    median: float
    q75: float
    min: float
    max: float


@dataclass
class MetricReport:
    rows: List[ReportRow]
    summary: List[SummaryRow]
    meta: dict
    predictions: List[str] = field(default_factory=list)

    def value(self, method, shift_type, intensity, metric):
        for r in self.rows:
            if (r.method, r.shift_type, r.metric) == (method, shift_type, metric) and r.intensity == float(intensity):
                return r.value
        raise KeyError((method, shift_type, intensity, metric))

    def series(self, method, shift_type, metric):
        """``(intensities, values)`` for one method/shift/metric, in level order."""
        rows = sorted((r for r in self.rows if (r.method, r.shift_type, r.metric) == (method, shift_type, metric)),
                      key=lambda r: r.level)
        return np.array([r.intensity for r in rows]), np.array([r.value for r in rows])


def evaluate_predictions(cfg: RunConfig, preds) -> List[ReportRow]:
    rows = []
    for kind, level, pset in preds.values():
        names = M.LABEL_FREE_METRICS if kind == OOD_SHIFT else cfg.metrics
        for metric in names:
            try:
                value = M.evaluate(pset, metric, cfg.bins)
            except ValueError as exc:
                raise HarnessError(f"metric {metric!r} failed: {exc}", pset.method, kind,
                                   pset.shift_intensity) from exc
            rows.append(ReportRow(pset.method, kind, level, float(pset.shift_intensity), metric, float(value)))
    return rows


def summarize(rows) -> List[SummaryRow]:
    """Quartiles, min and max across shift types for each (method, metric, level).

    Quantiles use linear interpolation between order statistics. OOD rows
    are not shifts and are left out.
    """
    groups: Dict[tuple, list] = {}
    for r in rows:
        if r.shift_type == OOD_SHIFT:
            continue
        groups.setdefault((r.method, r.metric, r.level), []).append(r.value)
    out = []
    for (method, metric, level), values in groups.items():
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise HarnessError("empty summary group", method=method)
        q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
        out.append(SummaryRow(method, metric, level, int(v.size), float(q25), float(med), float(q75),
                              float(v.min()), float(v.max())))
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_report(report: MetricReport, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "report.csv", REPORT_COLUMNS,
               ([r.method, r.shift_type, r.level, r.intensity, r.metric, r.value] for r in report.rows))
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS,
               ([s.method, s.metric, s.level, s.n, s.q25, s.median, s.q75, s.min, s.max] for s in report.summary))
    (out_dir / "report_meta.json").write_text(
        json.dumps(report.meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_report(out_dir) -> MetricReport:
    out_dir = Path(out_dir)
    rows, summary = [], []
    with open(out_dir / "report.csv", encoding="utf-8") as f:
        for r in csv.DictReader(f):
            rows.append(ReportRow(r["method"], r["shift_type"], int(r["level"]), float(r["intensity"]),
                                  r["metric"], float(r["value"])))
    with open(out_dir / "summary.csv", encoding="utf-8") as f:
        for r in csv.DictReader(f):
            summary.append(SummaryRow(r["method"], r["metric"], int(r["level"]), int(r["n"]),
                                      *(float(r[k]) for k in ("q25", "median", "q75", "min", "max"))))
    meta = json.loads((out_dir / "report_meta.json").read_text(encoding="utf-8"))
    return MetricReport(rows, summary, meta, list(meta.get("predictions", [])))


def write_predictions(preds, out_dir) -> List[str]:
    pdir = Path(out_dir) / "predictions"
    pdir.mkdir(parents=True, exist_ok=True)
    names = []
    for stem, (_, _, pset) in preds.items():
        predio.write_predictions(pset, pdir / f"{stem}.csv")
        names.append(f"predictions/{stem}.csv")
    return names


def emit_curves(cfg: RunConfig, report: MetricReport, out_dir=None) -> List[Path]:
    """Confidence/entropy diagnostics for every stored prediction file.

    Each prediction file ``<stem>.csv`` yields ``curves/<stem>.conf_count.csv``
    and the two histograms; labelled sets also get
    ``curves/<stem>.conf_acc.csv``.
    """
    out_dir = Path(out_dir or cfg.output_dir)
    cdir = out_dir / "curves"
    cdir.mkdir(parents=True, exist_ok=True)
    written = []
    for rel in report.predictions:
        path = out_dir / rel
        if not path.exists():
            raise HarnessError(f"missing prediction file {path}")
        pset = predio.read_predictions(path)
        stem = path.stem
        conf = M.confidence(pset)
        counts = [int(np.count_nonzero(conf >= tau)) for tau in cfg.thresholds]
        _write_csv(cdir / f"{stem}.conf_count.csv", ["threshold", "count"], zip(cfg.thresholds, counts))
        written.append(cdir / f"{stem}.conf_count.csv")
        if pset.has_labels:
            pts = M.confidence_accuracy_curve(pset, cfg.thresholds)
            _write_csv(cdir / f"{stem}.conf_acc.csv", ["threshold", "count", "accuracy"],
                       ([p.threshold, p.count, "" if p.accuracy is None else p.accuracy] for p in pts))
            written.append(cdir / f"{stem}.conf_acc.csv")
        for kind, hist in (("entropy_hist", M.entropy_histogram(pset, cfg.hist_bins)),
                           ("conf_hist", M.confidence_histogram(pset, cfg.hist_bins))):
            e = hist.edges
            _write_csv(cdir / f"{stem}.{kind}.csv", ["lo", "hi", "count"],
                       ([float(e[i]), float(e[i + 1]), int(c)] for i, c in enumerate(hist.counts)))
            written.append(cdir / f"{stem}.{kind}.csv")
    return written


def _meta(cfg: RunConfig, trained, data: LabeledDataset, sizes):
    meta = {
        "seed": cfg.seed,
        "dataset": data.name,
        "n_classes": data.n_classes,
        "split_sizes": list(sizes),
        "methods": {},
    }
    for name, t in trained.items():
        info = {"kind": t.config.kind}
        if t.spec is not None and t.config.kind != "temp_scaling":
            info["spec"] = t.spec.to_json()
            info["best_epochs"] = [int(p.meta.get("best_epoch", -1)) for p in t.params]
        if t.trials is not None:
            info["tuning"] = t.trials
        if t.temperature is not None:
            info["base"] = t.config.base
            meta["temperature"] = t.temperature.to_json()
        meta["methods"][name] = info
    return meta


def run(cfg: RunConfig, write=True) -> MetricReport:
    """Train every method, score it on every shift point, write all artifacts."""
    data = load_dataset(cfg)
    train, val, test = split(data, cfg.seed)
    ood = load_ood(cfg, data)
    trained = train_methods(cfg, train, val)
    points = shift_points(cfg, test)
    preds = predict_all(cfg, trained, points, ood)
    rows = evaluate_predictions(cfg, preds)
    report = MetricReport(rows, summarize(rows), _meta(cfg, trained, data, (train.n, val.n, test.n)))
    if write:
        out = Path(cfg.output_dir)
        report.predictions = write_predictions(preds, out)
        report.meta["predictions"] = report.predictions
        write_report(report, out)
        emit_curves(cfg, report, out)
    return report


# --- pieces used by the CLI ---------------------------------------------------

def _params_name(name, i, count):
    return f"{name}.sbm" if count == 1 else f"{name}.{i:02d}.sbm"


def save_trained(trained, out_dir):
    mdir = Path(out_dir) / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, t in trained.items():
        entry = {"kind": t.config.kind}
        if t.config.kind == "temp_scaling":
            entry["base"] = t.config.base
            entry.update(t.temperature.to_json())
        else:
            entry["spec"] = t.spec.to_json()
            entry["files"] = [_params_name(name, i, len(t.params)) for i in range(len(t.params))]
            for f, p in zip(entry["files"], t.params):
                models.save_params(p, mdir / f)
        if t.trials is not None:
            entry["tuning"] = t.trials
        index[name] = entry
    (mdir / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_trained(cfg: RunConfig, model_dir) -> Dict[str, Trained]:
    mdir = Path(model_dir)
    if not (mdir / "index.json").exists():
        raise HarnessError(f"no trained models in {mdir} (run `train` first)")
    index = json.loads((mdir / "index.json").read_text(encoding="utf-8"))
    out = {}
    for m in cfg.methods:
        if m.name not in index:
            raise HarnessError("method missing from trained models", method=m.name)
        e = index[m.name]
        if m.kind == "temp_scaling":
            continue
        spec = models.ModelSpec.from_json(e["spec"])
        out[m.name] = Trained(m, spec, [models.load_params(mdir / f) for f in e["files"]], trials=e.get("tuning"))
    for m in cfg.methods:
        if m.kind == "temp_scaling":
            e = index[m.name]
            base = out[m.base]
            # at_bound is a derived flag; keep the stored value
            temp = calibrate.Temperature(float(e["temperature"]), bool(e["at_bound"]))
            out[m.name] = Trained(m, base.spec, base.params, temperature=temp)
    return {m.name: out[m.name] for m in cfg.methods}


def evaluate_dir(cfg: RunConfig, pred_dir, out_dir) -> MetricReport:
    """Score prediction files already on disk (the ``eval`` subcommand)."""
    pred_dir = Path(pred_dir)
    files = sorted(pred_dir.glob("*.csv"))
    if not files:
        raise HarnessError(f"no prediction files in {pred_dir}")
    preds = {}
    for f in files:
        pset = predio.read_predictions(f)
        parts = f.stem.split("__")
        level = int(parts[2]) if len(parts) == 3 and parts[2].isdigit() else 0
        preds[f.stem] = (pset.shift_type, level, pset)
    # same order as a full run: config method order, then shift order, OOD last
    methods = [m.name for m in cfg.methods]
    kinds = [sh.kind for sh in cfg.shifts] + [OOD_SHIFT]

    def order(item):
        stem, (kind, level, _) = item
        name = stem.split("__")[0]
        return (methods.index(name) if name in methods else len(methods), name,
                kinds.index(kind) if kind in kinds else len(kinds), kind, level)

    preds = dict(sorted(preds.items(), key=order))
    rows = evaluate_predictions(cfg, preds)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = MetricReport(rows, summarize(rows), {"seed": cfg.seed})
    copied = write_predictions(preds, out) if pred_dir.resolve() != (out / "predictions").resolve() else \
        [f"predictions/{f.name}" for f in files]
    report.predictions = copied
    report.meta["predictions"] = copied
    write_report(report, out)
    return report


def write_dataset_csv(data: LabeledDataset, path):
    """Features as CSV, label first (``-1`` when absent)."""
    labels = data.labels if data.labels is not None else np.full(data.n, -1)
    _write_csv(path, ["label"] + [f"x{j}" for j in range(data.d)],
               ([int(y)] + [float(v) for v in row] for y, row in zip(labels, data.features)))


def run_size_study(cfg: RunConfig, write=True):
    """Ensemble-size study on the test split at one shift point.

    ``cfg.size_study`` holds ``members``, ``sizes``, ``metric``, ``shift``
    (``{"kind", "level"}``) and optionally ``resamples``. Members use the
    model of the first ensemble (or vanilla) method in the config.
    """
    ss = cfg.size_study or {}
    try:
        members_n = int(ss.get("members", 10))
        sizes = [int(s) for s in ss.get("sizes", [1, 5, 10])]
        metric = ss.get("metric", "brier")
        sh = ss.get("shift", {"kind": "rotate", "level": 0})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad size_study block: {exc}") from None
    base = next((m for m in cfg.methods if m.kind == "ensemble"), None) or \
        next((m for m in cfg.methods if m.kind == "vanilla"), None)
    if base is None:
        raise ConfigError("size study needs an ensemble or vanilla method for the member model")
    data = load_dataset(cfg)
    train, val, test = split(data, cfg.seed)
    spec = replace(base.model, method="vanilla")
    params = models.train_ensemble(spec, members_n, train, val)
    ds = shift.apply_shift(test, sh["kind"], sh["level"], seed=derive_seed(cfg.seed, "shift", sh["kind"]))
    sets = [models.predict(p, spec, ds, method="member")[0] for p in params]
    try:
        rows = aggregate.size_study(sets, sizes, metric=metric, seed=derive_seed(cfg.seed, "size-study"),
                                    resamples=int(ss.get("resamples", aggregate.SIZE_STUDY_RESAMPLES)))
    except ValueError as exc:
        raise HarnessError(f"size study failed: {exc}", base.name, sh["kind"], sh["level"]) from exc
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        aggregate.write_size_study(rows, out / "size_study.csv")
    return rows
