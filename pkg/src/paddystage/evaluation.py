"""Experiment pipeline, confusion matrices and report files.

A run goes: cloud removal -> class balancing -> stratified split ->
featurization -> standardization (fit on train) -> training -> prediction ->
confusion matrix -> report. Failures are re-raised as :class:`PipelineError`
tagged with the step that failed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fastdropout, features, ingest, nn
from .stages import N_STAGES, STAGES

REPORT_VERSION = 1
SUMMARY_COLUMNS = ("method", "accuracy", "seed", "train_accuracy", "n_train", "n_test", "report_version")

METHODS = (
    "lr", "lr+fastdropout",
    "dnn", "dnn+dropout", "dnn+bn", "dnn+bn+dropout",
    "cnn", "cnn+dropout", "cnn+bn", "cnn+bn+dropout",
)


class PipelineError(RuntimeError):
    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"[{step}] {cause}")


# ------------------------------------------------------------ confusion

@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = actual stage, columns = predicted stage."""

    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def trace(self):
        return int(np.trace(self.counts))

    def row_sums(self):
        return self.counts.sum(axis=1)

    def format(self, labels=STAGES):
        width = max(6, len(str(self.counts.max())) + 1 if self.counts.size else 6)
        head = "actual\\pred".ljust(12) + "".join(l.rjust(width) for l in labels)
        rows = [head] + [labels[i].ljust(12) + "".join(str(int(v)).rjust(width) for v in row)
                         for i, row in enumerate(self.counts)]
        return "\n".join(rows)


def confusion(actual, predicted, n_classes=N_STAGES) -> ConfusionMatrix:
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise ValueError(f"length mismatch: {actual.size} actual vs {predicted.size} predicted")
    if actual.size == 0:
        raise ValueError("confusion matrix needs at least one pair")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    return ConfusionMatrix(counts)


def accuracy(m: ConfusionMatrix) -> float:
    if m.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return m.trace / m.total


# -------------------------------------------------------------- methods

@dataclass(frozen=True)
class MethodSpec:
    """Parsed method token plus the architecture knobs used to build it."""

    name: str
    family: str
    batch_norm: bool = False
    dropout: bool = False
    dropout_rate: float = 0.5
    keep_prob: float = 0.8
    hidden: tuple = (64, 32)
    filters: tuple = (16, 16)
    kernel_width: int = 3

    def describe(self):
        out = {"method": self.name, "family": self.family}
        if self.family == "lr+fastdropout":
            out["keep_prob"] = self.keep_prob
        if self.family in ("dnn", "cnn"):
            out["batch_norm"] = self.batch_norm
            out["bn_placement"] = "linear -> BN -> activation (linear bias removed)" if self.batch_norm else "none"
            out["dropout"] = self.dropout
            out["dropout_rate"] = self.dropout_rate if self.dropout else 0.0
            out["dropout_placement"] = "after activation" if self.dropout else "none"
            if self.family == "dnn":
                out["hidden"] = list(self.hidden)
            else:
                out["filters"] = list(self.filters)
                out["kernel_width"] = self.kernel_width
        return out


def parse_method(token, **knobs) -> MethodSpec:
    token = token.strip().lower()
    if token not in METHODS:
        raise ValueError(f"unknown method {token!r}; valid methods: {', '.join(METHODS)}")
    if token.startswith("lr"):
        return MethodSpec(token, token, **knobs)
    family, *regs = token.split("+")
    return MethodSpec(token, family, batch_norm="bn" in regs, dropout="dropout" in regs, **knobs)


def build_network(spec: MethodSpec, n_features, seed):
    rate = spec.dropout_rate if spec.dropout else 0.0
    if spec.family == "dnn":
        return nn.build_dnn(n_features, N_STAGES, spec.hidden, spec.batch_norm, rate, seed=seed)
    if spec.family == "cnn":
        return nn.build_cnn(n_features, N_STAGES, spec.filters, spec.kernel_width, spec.batch_norm, rate, seed=seed)
    raise ValueError(f"{spec.name} is not a network method")


# -------------------------------------------------------------- reports

@dataclass
class ExperimentReport:
    method: str
    accuracy: float
    confusion: ConfusionMatrix
    config: dict
    seed: int
    train_accuracy: float = float("nan")
    n_train: int = 0
    n_test: int = 0
    wall_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must be in [0, 1]")

    def summary_row(self):
        vals = (self.method, repr(self.accuracy), str(self.seed), repr(self.train_accuracy),
                str(self.n_train), str(self.n_test), str(REPORT_VERSION))
        return ",".join(vals)

    def to_text(self):
        """Stable text form. Wall time is left out so reruns are byte-identical."""
        lines = [
            f"# paddystage experiment report v{REPORT_VERSION}",
            f"method = {self.method}",
            f"accuracy = {self.accuracy!r}",
            f"train_accuracy = {self.train_accuracy!r}",
            f"seed = {self.seed}",
            f"n_train = {self.n_train}",
            f"n_test = {self.n_test}",
            "",
            "[config]",
        ]
        lines += [f"{k} = {_fmt(v)}" for k, v in sorted(self.config.items())]
        lines += ["", "[confusion] rows=actual cols=predicted", self.confusion.format(), ""]
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def parse_report_text(text) -> ExperimentReport:
    """Inverse of :meth:`ExperimentReport.to_text` (config values stay strings)."""
    fields, config, conf_rows = {}, {}, []
    section = None
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("["):
            section = line.split("]")[0][1:]
            continue
        if section == "confusion":
            if line.startswith("actual"):
                continue
            conf_rows.append([int(v) for v in line.split()[1:]])
        elif "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            (config if section == "config" else fields)[k] = v
    return ExperimentReport(
        method=fields["method"], accuracy=float(fields["accuracy"]),
        confusion=ConfusionMatrix(np.array(conf_rows, dtype=np.int64)), config=config,
        seed=int(fields["seed"]), train_accuracy=float(fields["train_accuracy"]),
        n_train=int(fields["n_train"]), n_test=int(fields["n_test"]),
    )


def write_report(report: ExperimentReport, text_path, summary_path=None):
    Path(text_path).write_text(report.to_text(), encoding="utf-8")
    if summary_path is not None:
        Path(summary_path).write_text(",".join(SUMMARY_COLUMNS) + "\n" + report.summary_row() + "\n", encoding="utf-8")


def read_summaries(paths):
    """Collect summary rows (dicts) from one or more summary CSV files."""
    rows = []
    for path in paths:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or tuple(lines[0].split(",")) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: not a report summary file")
        rows += [dict(zip(SUMMARY_COLUMNS, line.split(","))) for line in lines[1:] if line.strip()]
    return rows


def format_accuracy_table(rows):
    """Two-column ``Method | Accuracy (%)`` table from summary rows or reports."""
    items = []
    for r in rows:
        if isinstance(r, ExperimentReport):
            items.append((r.method, r.accuracy))
        else:
            items.append((r["method"], float(r["accuracy"])))
    width = max([len("Method")] + [len(m) for m, _ in items])
    out = [f"{'Method'.ljust(width)} | Accuracy (%)", "-" * (width + 15)]
    out += [f"{m.ljust(width)} | {100.0 * a:.2f}" for m, a in items]
    return "\n".join(out)


# ------------------------------------------------------------- pipeline

@dataclass
class ExperimentResult:
    report: ExperimentReport
    model: object
    standardizer: features.Standardizer
    train: ingest.Dataset
    test: ingest.Dataset
    trace: list = field(default_factory=list)


def _step(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-tagged with the failing step
        raise PipelineError(name, exc) from exc


def fit_model(spec: MethodSpec, X, y, cfg: nn.TrainConfig):
    """Train the model for ``spec``; returns ``(model, trace)``."""
    if spec.family == "lr":
        return fastdropout.train_logistic(X, y, cfg)
    if spec.family == "lr+fastdropout":
        return fastdropout.fd_train(X, y, spec.keep_prob, cfg)
    net = build_network(spec, X.shape[1], cfg.seed)
    return nn.train(net, X, y, cfg)


def predict_model(model, X):
    """Stage indices and per-class scores for either model type."""
    if isinstance(model, fastdropout.FastDropoutModel):
        return fastdropout.fd_predict(model, X)
    return nn.predict(model, X)


def fit_pipeline(method, dataset: ingest.Dataset, split: ingest.SplitSpec, cfg: nn.TrainConfig,
                 **knobs) -> ExperimentResult:
    spec = method if isinstance(method, MethodSpec) else _step("config", parse_method, method, **knobs)
    t0 = time.perf_counter()
    clean = _step("clean", ingest.remove_cloud, dataset)
    balanced = _step("balance", ingest.balance_classes, clean, split.seed)
    train_set, test_set = _step("split", ingest.split_train_test, balanced, split)
    if len(test_set) == 0:
        raise PipelineError("split", "test partition is empty")
    X_train = _step("featurize", features.featurize_dataset, train_set)
    X_test = _step("featurize", features.featurize_dataset, test_set)
    y_train, y_test = train_set.labels(), test_set.labels()
    z = _step("standardize", features.fit_standardizer, X_train)
    X_train = features.apply_standardizer(z, X_train)
    X_test = features.apply_standardizer(z, X_test)
    model, trace = _step("train", fit_model, spec, X_train, y_train, cfg)
    train_pred, _ = _step("predict", predict_model, model, X_train)
    test_pred, _ = _step("predict", predict_model, model, X_test)
    cm = _step("evaluate", confusion, y_test, test_pred)
    train_acc = accuracy(confusion(y_train, train_pred))

    config = dict(spec.describe())
    config.update({f"train.{k}": v for k, v in cfg.to_dict().items()})
    config.update({
        "split.train_fraction": split.train_fraction,
        "split.seed": split.seed,
        "data.provenance": dataset.provenance,
        "data.n_samples": len(dataset),
        "data.n_balanced": len(balanced),
        "features": list(features.FEATURE_NAMES),
        "standardize": "train-fitted z-score",
    })
    if isinstance(model, nn.Network):
        config["architecture"] = _architecture(model)
    report = ExperimentReport(
        method=spec.name, accuracy=accuracy(cm), confusion=cm, config=config, seed=cfg.seed,
        train_accuracy=train_acc, n_train=len(train_set), n_test=len(test_set),
        wall_time=time.perf_counter() - t0,
    )
    return ExperimentResult(report, model, z, train_set, test_set, trace)


def _architecture(net):
    parts = []
    for layer in net.layers:
        cfg = layer.config()
        if layer.kind == "dense":
            parts.append(f"dense({cfg['n_in']}->{cfg['n_out']}{'' if cfg['bias'] else ',nobias'})")
        elif layer.kind == "conv1d":
            parts.append(f"conv1d({cfg['in_channels']}->{cfg['filters']},w{cfg['width']})")
        elif layer.kind == "dropout":
            parts.append(f"dropout({cfg['rate']})")
        else:
            parts.append(layer.kind)
    return " > ".join(parts)


def run_experiment(method, dataset, split: ingest.SplitSpec, cfg: nn.TrainConfig, **knobs) -> ExperimentReport:
    """Run one method end to end and return its report."""
    return fit_pipeline(method, dataset, split, cfg, **knobs).report


def cross_validate(method, dataset, k, cfg: nn.TrainConfig, seed=0, **knobs):
    """Stratified k-fold variant of the holdout protocol; one report per fold."""
    spec = method if isinstance(method, MethodSpec) else parse_method(method, **knobs)
    balanced = ingest.balance_classes(ingest.remove_cloud(dataset), seed)
    folds = ingest.stratified_folds(balanced, k, seed)
    X_all = features.featurize_dataset(balanced)
    y_all = balanced.labels()
    reports = []
    for i, test_ix in enumerate(folds):
        mask = np.ones(len(balanced), dtype=bool)
        mask[test_ix] = False
        z = features.fit_standardizer(X_all[mask])
        Xtr, Xte = features.apply_standardizer(z, X_all[mask]), features.apply_standardizer(z, X_all[~mask])
        model, _ = fit_model(spec, Xtr, y_all[mask], cfg)
        cm = confusion(y_all[~mask], predict_model(model, Xte)[0])
        tr_cm = confusion(y_all[mask], predict_model(model, Xtr)[0])
        reports.append(ExperimentReport(
            spec.name, accuracy(cm), cm, dict(spec.describe(), fold=i, k=k), cfg.seed,
            accuracy(tr_cm), int(mask.sum()), int((~mask).sum()),
        ))
    return reports
