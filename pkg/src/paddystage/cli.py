"""``paddystage`` command line: synth, train, predict, phenology, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import container, evaluation, fastdropout, features, ingest, nn, phenology
from .stages import STAGES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("paddystage")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config

# Defaults per command; the keys double as the accepted config-file keys.
DEFAULTS = {
    "synth": {"out": "samples.csv", "per_class": 1000, "noise": 0.02, "seed": 0, "profile_out": None},
    "train": {
        "data": None, "out": ".", "method": "dnn", "seed": 0, "train_fraction": 2.0 / 3.0,
        "learning_rate": 0.01, "momentum": 0.9, "batch_size": 128, "epochs": 100,
        "dropout_rate": 0.5, "keep_prob": 0.8, "hidden": "64,32", "filters": "16,16", "kernel_width": 3,
        "write_splits": False,
    },
}
_TYPES = {
    "per_class": int, "noise": float, "seed": int, "train_fraction": float, "learning_rate": float,
    "momentum": float, "batch_size": int, "epochs": int, "dropout_rate": float, "keep_prob": float,
    "kernel_width": int, "write_splits": lambda v: str(v).strip().lower() in ("1", "true", "yes", "on"),
}


def read_config_file(path, allowed):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r} (allowed: {', '.join(sorted(allowed))})")
        values[key] = value
    return values


def resolve_config(command, args):
    """Defaults < config file < explicit flags, with values coerced to their types."""
    defaults = DEFAULTS[command]
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config, set(defaults)))
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key, value in cfg.items():
        if key in _TYPES and value is not None and isinstance(value, str):
            try:
                cfg[key] = _TYPES[key](value)
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {value!r}") from None
    log.info("resolved config: %s", " ".join(f"{k}={cfg[k]}" for k in sorted(cfg)))
    return cfg


def _int_tuple(text, key):
    try:
        out = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{key} must be a comma-separated list of integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise UsageError(f"{key} needs at least one positive width")
    return out


# -------------------------------------------------------------- commands

def cmd_synth(args):
    cfg = resolve_config("synth", args)
    if cfg["per_class"] < 1:
        raise UsageError("--per-class must be >= 1")
    if cfg["noise"] < 0:
        raise UsageError("--noise must be >= 0")
    if cfg["seed"] < 0:
        raise UsageError("--seed must be non-negative")
    d = ingest.synthesize_dataset(cfg["per_class"], cfg["noise"], cfg["seed"])
    ingest.write_samples(d, cfg["out"])
    for stage, count in d.class_counts().items():
        print(f"{stage}\t{count}")
    print(f"wrote {len(d)} samples to {cfg['out']}")
    if cfg["profile_out"]:
        phenology.write_series(phenology.canonical_profile().series, cfg["profile_out"])
        print(f"wrote canonical profile to {cfg['profile_out']}")
    return EXIT_OK


def _methods(token):
    if token.strip().lower() == "all":
        return list(evaluation.METHODS)
    names = [t.strip().lower() for t in token.split(",") if t.strip()]
    bad = [n for n in names if n not in evaluation.METHODS]
    if bad or not names:
        raise UsageError(f"invalid method {', '.join(bad) or token!r}; valid methods: {', '.join(evaluation.METHODS)}, all")
    return names


def _standardizer_section(z):
    return ("standardizer", {"means": container.encode_array(z.means), "sds": container.encode_array(z.sds)})


def save_model(path, model, z, metadata):
    extra = [_standardizer_section(z), ("metadata", metadata)]
    if isinstance(model, fastdropout.FastDropoutModel):
        return fastdropout.save_model(path, model, extra)
    return nn.save_network(path, model, extra)


def load_model(path):
    """Load either model kind plus its standardizer and metadata."""
    kind, sections = container.read(path)
    if kind == nn.serialize.KIND:
        model = nn.network_from_sections(sections)
    elif kind == fastdropout.KIND:
        model = fastdropout.model_from_sections(sections)
    else:
        raise container.ContainerError("header", f"unknown model kind {kind!r}")
    if "standardizer" not in sections:
        raise container.ContainerError("standardizer", "missing")
    try:
        st = sections["standardizer"]
        z = features.Standardizer(container.decode_array(st["means"], "standardizer"),
                                  container.decode_array(st["sds"], "standardizer"))
    except (KeyError, TypeError) as exc:
        raise container.ContainerError("standardizer", f"malformed ({exc})") from None
    if z.means.shape != (features.N_FEATURES,) or z.sds.shape != z.means.shape:
        raise container.ContainerError("standardizer", f"expected {features.N_FEATURES} features")
    return model, z, sections.get("metadata", {})


def cmd_train(args):
    cfg = resolve_config("train", args)
    if not cfg["data"]:
        raise UsageError("--data is required")
    methods = _methods(cfg["method"])
    hidden = _int_tuple(cfg["hidden"], "hidden")
    filters = _int_tuple(cfg["filters"], "filters")
    try:
        train_cfg = nn.TrainConfig(cfg["learning_rate"], cfg["momentum"], cfg["batch_size"], cfg["epochs"], cfg["seed"])
        split = ingest.SplitSpec(cfg["train_fraction"], cfg["seed"])
        knobs = dict(dropout_rate=cfg["dropout_rate"], keep_prob=cfg["keep_prob"], hidden=hidden,
                     filters=filters, kernel_width=cfg["kernel_width"])
        specs = [evaluation.parse_method(m, **knobs) for m in methods]
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    dataset = ingest.parse_samples(cfg["data"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for spec in specs:
        result = evaluation.fit_pipeline(spec, dataset, split, train_cfg)
        r = result.report
        stem = out / spec.name
        meta = {"method": spec.name, "seed": cfg["seed"], "train_accuracy": r.train_accuracy,
                "accuracy": r.accuracy, "features": list(features.FEATURE_NAMES)}
        save_model(f"{stem}.model", result.model, result.standardizer, meta)
        evaluation.write_report(r, f"{stem}.report.txt", f"{stem}.summary.csv")
        if cfg["write_splits"]:
            ingest.write_samples(result.train, out / "train.csv")
            ingest.write_samples(result.test, out / "test.csv")
        print(f"{r.summary_row()}  ({r.wall_time:.1f}s)")
        reports.append(r)
    lines = [",".join(evaluation.SUMMARY_COLUMNS)] + [r.summary_row() for r in reports]
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(evaluation.format_accuracy_table(reports))
    return EXIT_OK


def predict_dataset(model, z, dataset):
    X = features.featurize_dataset(dataset)
    if X.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, len(STAGES)))
    n_in = model.n_features
    if n_in != X.shape[1]:
        raise ValueError(f"model expects {n_in} features, samples provide {X.shape[1]}")
    return evaluation.predict_model(model, features.apply_standardizer(z, X))


def cmd_predict(args):
    model, z, _ = load_model(args.model)
    dataset = ingest.parse_samples(args.data)
    stages, proba = predict_dataset(model, z, dataset)
    header = "row_index,stage," + ",".join(f"p_{s}" for s in STAGES)
    rows = [header] + [f"{i},{STAGES[k]}," + ",".join(repr(float(p)) for p in proba[i])
                       for i, k in enumerate(stages.tolist())]
    Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    labelled = [i for i, s in enumerate(dataset) if s.stage is not None]
    if labelled:
        truth = np.array([STAGES.index(dataset[i].stage) for i in labelled])
        print(f"accuracy vs labels: {float(np.mean(stages[labelled] == truth))!r} on {len(labelled)} rows")
    print(f"wrote {len(stages)} predictions to {args.out}")
    return EXIT_OK


def cmd_phenology(args):
    if args.smooth < 1 or args.smooth % 2 == 0:
        raise UsageError("--smooth must be a positive odd integer")
    series = phenology.read_series(args.series)
    w = phenology.detect_windows(series, args.smooth)
    if w.flooding_date is None:
        log.warning("no flooding detected; every date labelled GS5")
    phenology.write_stages(series.dates, w.stages, args.out)

    def fmt(d):
        return d.isoformat() if d is not None else "none"

    print(f"flooding {fmt(w.flooding_date)}")
    print(f"heading {fmt(w.heading_date)}")
    print(f"harvest {fmt(w.harvest_date)}")
    return EXIT_OK


def cmd_report(args):
    rows = evaluation.read_summaries(args.summaries)
    table = evaluation.format_accuracy_table(rows)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="paddystage", description="Paddy growth stage classification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic labelled sample file")
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--out", help="output sample file (default samples.csv)")
    s.add_argument("--per-class", dest="per_class", type=int, help="samples per stage (default 1000)")
    s.add_argument("--noise", type=float, help="reflectance noise SD (default 0.02)")
    s.add_argument("--seed", type=int, help="random seed (default 0)")
    s.add_argument("--profile-out", dest="profile_out", help="also write the canonical date,evi,lswi series")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="run the experiment pipeline and save model + report")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--data", help="labelled sample file")
    t.add_argument("--out", help="output directory (default .)")
    t.add_argument("--method", help=f"comma list of {', '.join(evaluation.METHODS)} or 'all'")
    t.add_argument("--seed", type=int, help="seed for balancing, split, init and training")
    t.add_argument("--train-fraction", dest="train_fraction", type=float)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--dropout-rate", dest="dropout_rate", type=float, help="drop probability (default 0.5)")
    t.add_argument("--keep-prob", dest="keep_prob", type=float, help="fast-dropout keep probability (default 0.8)")
    t.add_argument("--hidden", help="dense hidden widths, e.g. 64,32")
    t.add_argument("--filters", help="conv filter counts, e.g. 16,16")
    t.add_argument("--kernel-width", dest="kernel_width", type=int)
    t.add_argument("--write-splits", dest="write_splits", action="store_true", default=None,
                   help="also write train.csv and test.csv")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="classify a sample file with a saved model")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True, help="sample file (stage column may be empty)")
    r.add_argument("--out", default="predictions.csv")
    r.set_defaults(func=cmd_predict)

    ph = sub.add_parser("phenology", help="detect flooding/heading/harvest on a date,evi,lswi series")
    ph.add_argument("--series", required=True)
    ph.add_argument("--out", default="stages.csv")
    ph.add_argument("--smooth", type=int, default=phenology.DEFAULT_SMOOTH_WINDOW, help="odd moving-average window")
    ph.set_defaults(func=cmd_phenology)

    rep = sub.add_parser("report", help="accuracy table from summary CSV files")
    rep.add_argument("summaries", nargs="+")
    rep.add_argument("--out")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except evaluation.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, FloatingPointError) else EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except container.ContainerError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
