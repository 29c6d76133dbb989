"""``bwpipe`` command line: eda, impute, select, train, predict, grid, synth, report.

Option precedence is flag > config file (INI) > built-in default. Each run
writes ``manifest.json`` next to its outputs; ``bwpipe --replay MANIFEST``
re-executes the recorded, fully resolved options.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DataMatrix, eda_report, load_csv, save_csv, summarize
from .errors import DataError, MetricError, NumericalError
from .evaluation import (
    LEADERBOARD_HEADER,
    CVConfig,
    feature_importance_report,
    leaderboard_rows,
    run_grid,
    sex_gap,
)
from .evaluation.grid import IMPUTER_LABEL
from .imputation import ImputationConfig, hybrid_impute
from .models import (
    DEFAULT_MODEL_ENTRIES,
    TREE_FAMILIES,
    ModelSpec,
    TrainedModel,
    fit,
    predict,
)
from .selectors import SELECTOR_NAMES, SelectorConfig, SelectorReport, consensus_rank, frequency_table, run_selector
from .synthgen import CohortSpec, generate_cohort

ENV_OUTPUT = "BWPIPE_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

# option -> (type, default); "list" values are comma separated
OPTIONS = {
    "input": (str, None),
    "target": (str, "fl_bw"),
    "selectors": ("list", list(SELECTOR_NAMES)),
    "models": ("list", [e.name for e in DEFAULT_MODEL_ENTRIES]),
    "mode": (str, "paper"),
    "extra_columns": ("list", []),
    "seed": (int, 0),
    "workers": (int, 1),
    "top_k": (int, 20),
    "folds": (int, 5),
    "holdout_fraction": (float, 0.2),
    "mice_cycles": (int, 10),
    "pmm_donors": (int, 5),
    "knn_k": (int, 5),
    "n": (int, 791),
    "p": (int, 109),
    "missing_rate": (float, 0.0678),
    "mechanism": (str, "mcar"),
    "noise_scale": (float, None),
    "target_r2": (float, 0.62),
    "model": (str, "gradient_boosting"),
    "params": (str, ""),
    "features": ("list", []),
    "report": (str, None),
    "model_file": (str, None),
    "run_dir": (str, None),
    "sex_column": (str, None),
}

COMMAND_OPTIONS = {
    "eda": ["input"],
    "impute": ["input", "target", "seed", "mice_cycles", "pmm_donors", "knn_k"],
    "select": ["input", "target", "selectors", "top_k", "seed"],
    "train": ["input", "target", "model", "params", "features", "report", "top_k", "extra_columns",
              "seed"],
    "predict": ["input", "model_file"],
    "grid": ["input", "target", "selectors", "models", "mode", "extra_columns", "seed", "workers",
             "top_k", "folds", "holdout_fraction", "mice_cycles", "pmm_donors", "knn_k"],
    "synth": ["n", "p", "seed", "missing_rate", "mechanism", "noise_scale", "target_r2"],
    "report": ["run_dir", "input", "target", "sex_column"],
}
POSITIONAL = {"eda": "input", "impute": "input", "select": "input", "train": "input",
              "predict": "input", "grid": "input", "report": "run_dir"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _convert(name, raw):
    kind, _ = OPTIONS[name]
    if raw is None:
        return None
    if kind == "list":
        if isinstance(raw, list):
            return [str(v) for v in raw]
        return [v.strip() for v in str(raw).split(",") if v.strip()]
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise UsageError(f"option {name!r}: cannot parse {raw!r} as {kind.__name__}") from None


def build_parser():
    parser = _Parser(prog="bwpipe", description="Birth-weight prediction pipeline toolkit.")
    parser.add_argument("--version", action="version", version=f"bwpipe {__version__}")
    parser.add_argument("--config", help="INI file; keys from [run] (and [<command>]) sections")
    parser.add_argument("--output-dir", help=f"output directory (default: ${ENV_OUTPUT} or ./bwpipe_out)")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for cmd, opts in COMMAND_OPTIONS.items():
        sp = sub.add_parser(cmd)
        pos = POSITIONAL.get(cmd)
        if pos:
            sp.add_argument(pos, nargs="?", default=None)
        for o in opts:
            if o == pos:
                continue
            sp.add_argument("--" + o.replace("_", "-"), dest=o, default=None)
    return parser


def _read_config(path, command):
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise DataError(f"config file not found: {path}")
    values = {}
    for section in ("run", command):
        if cp.has_section(section):
            for k, v in cp.items(section):
                key = k.replace("-", "_")
                if key == "output_dir":
                    values[key] = v
                elif key in OPTIONS:
                    values[key] = v
                else:
                    raise UsageError(f"unknown config key {k!r} in [{section}]")
    return values


def resolve(command, flags: dict, config: dict):
    """Merge defaults < config < flags into a plain dict of typed values."""
    out = {}
    for name in COMMAND_OPTIONS[command]:
        value = OPTIONS[name][1]
        if name in config:
            value = _convert(name, config[name])
        if flags.get(name) is not None:
            value = _convert(name, flags[name])
        out[name] = value
    return out


# -- io helpers ----------------------------------------------------------------------

def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _need(opts, key):
    if opts.get(key) in (None, ""):
        raise UsageError(f"missing required option: {key}")
    return opts[key]


def _load(opts):
    path = _need(opts, "input")
    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")
    return load_csv(path)


def _features_and_target(data: DataMatrix, target):
    if target not in data.column_names:
        raise DataError(f"target column {target!r} not found")
    feats = data.drop_columns([target])
    return feats, data.filled(np.nan)[:, data.index(target)]


def _imputation_config(opts):
    return ImputationConfig(mice_cycles=opts["mice_cycles"], pmm_donors=opts["pmm_donors"],
                            knn_k=opts["knn_k"], seed=opts["seed"])


# -- commands -------------------------------------------------------------------------

def cmd_eda(opts, out):
    data = _load(opts)
    rep = eda_report(data)
    _write_json(out / "eda.json", rep)
    summ = summarize(data)
    _write_csv(out / "summary_stats.csv",
               ("column", "count", "mean", "std", "min", "q25", "median", "q75", "max"),
               [(name, c.count, c.mean, c.std, c.min, c.q25, c.median, c.q75, c.max)
                for name, c in summ.columns.items()])
    _write_csv(out / "distribution_table.csv", ("distribution", "count"),
               [(r["distribution"], r["count"]) for r in rep["distribution_table"]])
    m = rep["mcar_test"]
    print(f"rows={data.n_rows} cols={data.n_cols} missing={rep['missingness']['overall_rate']:.4%} "
          f"mcar applicable={m['applicable']} d2={m['d2']:.4f} df={m['df']} p={m['p_value']:.4g}")
    return ["eda.json", "summary_stats.csv", "distribution_table.csv"]


def cmd_impute(opts, out):
    data = _load(opts)
    target = opts["target"]
    cfg = _imputation_config(opts)
    if target and target in data.column_names:
        feats, y = _features_and_target(data, target)
        res = hybrid_impute(feats, cfg)
        vals = data.filled(np.nan).copy()
        others = [data.index(c) for c in feats.column_names]
        vals[:, others] = res.completed.to_array()
        if not data.mask[:, data.index(target)].all():
            raise DataError(f"target column {target!r} has missing values; drop those rows first")
        completed = data.replace(values=vals, mask=np.ones(data.shape, dtype=bool))
    else:
        res = hybrid_impute(data, cfg)
        completed = res.completed
    save_csv(completed, out / "completed.csv")
    _write_json(out / "imputation.json", {"per_column_method": res.per_column_method,
                                          "trace": res.trace, "diagnostics": res.diagnostics_dict()})
    print(f"imputed {int((~data.mask).sum())} cells; methods: "
          f"{sorted(set(res.per_column_method.values()))}")
    return ["completed.csv", "imputation.json"]


def cmd_select(opts, out):
    data = _load(opts)
    feats, y = _features_and_target(data, opts["target"])
    if not feats.is_complete:
        raise DataError("select needs a complete file; run `impute` first")
    cfg = SelectorConfig(top_k=opts["top_k"], seed=opts["seed"])
    X, names = feats.to_array(), list(feats.column_names)
    reports, written = [], []
    for name in opts["selectors"]:
        rep = run_selector(name, X, y, cfg, names)
        reports.append(rep)
        _write_json(out / f"selector_{name}.json", rep.to_dict())
        written.append(f"selector_{name}.json")
    cons = consensus_rank(reports, opts["top_k"])
    _write_json(out / "consensus.json", cons.to_dict())
    header, rows = frequency_table(reports, top_k=opts["top_k"])
    _write_csv(out / "selector_frequency.csv", header, rows)
    print("consensus top:", ", ".join(cons.top()[:10]))
    return written + ["consensus.json", "selector_frequency.csv"]


def _parse_params(text):
    params = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise UsageError(f"bad --params item {item!r}; expected key=value")
        k, v = item.split("=", 1)
        try:
            params[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            params[k.strip()] = v.strip()
    return params


def _report_features(path, top_k):
    """Feature list from a selector report or a consensus file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "entries" in doc:
        return [e["feature"] for e in doc["entries"][:top_k]]
    try:
        return SelectorReport.from_dict(doc).names[:top_k]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path} is neither a selector report nor a consensus file") from exc


def cmd_train(opts, out):
    data = _load(opts)
    feats, y = _features_and_target(data, opts["target"])
    names = list(opts["features"])
    if opts.get("report"):
        names = _report_features(opts["report"], opts["top_k"])
    if not names:
        names = list(feats.column_names)
    for c in opts["extra_columns"]:
        if c not in names:
            names.append(c)
    unknown = [c for c in names if c not in feats.column_names]
    if unknown:
        raise DataError(f"unknown feature columns: {unknown}")
    sub = feats.select_columns(names)
    if not sub.is_complete:
        raise DataError("training features contain missing values; run `impute` first")
    spec = ModelSpec(opts["model"], _parse_params(opts["params"]), opts["seed"])
    model = fit(spec, sub.to_array(), y, names)
    model.save(out / "model.json")
    print(f"trained {model.family} on {len(names)} features, n={len(y)}")
    return ["model.json"]


def cmd_predict(opts, out):
    data = _load(opts)
    model = TrainedModel.load(_need(opts, "model_file"))
    missing = [f for f in model.feature_names if f not in data.column_names]
    if missing:
        raise DataError(f"input lacks model features: {missing}")
    sub = data.select_columns(list(model.feature_names))
    if not sub.is_complete:
        raise DataError("prediction features contain missing values")
    pred = predict(model, sub.to_array(), list(model.feature_names))
    _write_csv(out / "predictions.csv", ("row", "prediction"),
               [(i, repr(float(v))) for i, v in enumerate(pred)])
    return ["predictions.csv"]


def cmd_grid(opts, out):
    data = _load(opts)
    cv = CVConfig(opts["folds"], opts["holdout_fraction"], opts["seed"])
    run = run_grid(opts["selectors"], opts["models"], data, opts["target"], cv, opts["mode"],
                   opts["workers"], opts["extra_columns"], SelectorConfig(top_k=opts["top_k"],
                                                                          seed=opts["seed"]),
                   _imputation_config(opts))
    _write_csv(out / "leaderboard.csv", LEADERBOARD_HEADER, leaderboard_rows(run.leaderboard))
    rec_dir = out / "records"
    rec_dir.mkdir(exist_ok=True)
    written = ["leaderboard.csv"]
    for r in run.records:
        fname = f"records/{r.selector}__{r.model}.json"
        _write_json(out / fname, r.to_dict())
        written.append(fname)
    _write_csv(out / "selector_frequency.csv", ("selector", "top_rows_count"), run.frequency)
    _write_csv(out / "failures.csv", ("selector", "model", "error"), run.failures)
    written += ["selector_frequency.csv", "failures.csv"]
    if run.leaderboard:
        best = run.leaderboard[0]
        if best.residuals is not None:
            _write_csv(out / "residual_bins.csv", ("bin", "count", "percent"),
                       [(lab, c, repr(p)) for lab, c, p in best.residuals.rows()]
                       + [("mean_abs_error", "", repr(best.residuals.mean_abs_error))])
            written.append("residual_bins.csv")
        # importance of the best tree-based combo, refit on the training part
        tree = next((r for r in run.leaderboard if r.family in TREE_FAMILIES), None)
        if tree is not None:
            imp = _refit_importance(run, tree, data, opts, cv)
            _write_csv(out / "feature_importance.csv", ("feature", "share", "selector", "model"),
                       [(f, repr(s), tree.selector, tree.model) for f, s in imp.items()])
            written.append("feature_importance.csv")
        m = best.holdout_metrics or best.cv_metrics
        print(f"{len(run.records)} records ({len(run.failures)} failures), mode={run.mode}; "
              f"best {best.selector} + {best.model} ({IMPUTER_LABEL}): r2={m.r2:.4f} rmse={m.rmse:.2f}")
    return written


def _refit_importance(run, rec, data, opts, cv):
    from .evaluation.grid import _impute_features, holdout_split

    feats, y = _features_and_target(data, opts["target"])
    names = list(feats.column_names)
    train, _ = holdout_split(len(y), cv.holdout_fraction, cv.seed)
    fit_rows = train if run.mode == "leak-free" else None
    X = _impute_features(feats, _imputation_config(opts), fit_rows)
    cols = [names.index(f) for f in rec.features]
    model = fit(ModelSpec(rec.family, rec.hyperparameters, rec.seed), X[np.ix_(train, cols)],
                y[train], rec.features)
    return feature_importance_report(model)


def cmd_synth(opts, out):
    spec = CohortSpec(n=opts["n"], p=opts["p"], seed=opts["seed"], missing_rate=opts["missing_rate"],
                      mechanism=opts["mechanism"], noise_scale=opts["noise_scale"],
                      target_r2=opts["target_r2"])
    data, truth = generate_cohort(spec)
    save_csv(data, out / "cohort.csv")
    _write_json(out / "ground_truth.json", {"spec": spec.to_dict(), **truth.to_dict()})
    print(f"cohort {data.n_rows}x{data.n_cols}, noise scale {truth.noise_scale:.3f}")
    generator = {**spec.to_dict(), "noise_scale": truth.noise_scale}
    return ["cohort.csv", "ground_truth.json"], {"generator": generator}


def cmd_report(opts, out):
    run_dir = Path(_need(opts, "run_dir"))
    board = run_dir / "leaderboard.csv"
    if not board.is_file():
        raise DataError(f"no leaderboard.csv in {run_dir}")
    with open(board, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    report = {"run_dir": str(run_dir), "n_records": len(rows), "top10": rows[:10]}
    if rows:
        report["best"] = rows[0]
    freq = run_dir / "selector_frequency.csv"
    if freq.is_file():
        with open(freq, encoding="utf-8") as fh:
            report["selector_frequency"] = list(csv.DictReader(fh))
    bins = run_dir / "residual_bins.csv"
    if bins.is_file():
        with open(bins, encoding="utf-8") as fh:
            report["residual_bins"] = list(csv.DictReader(fh))
    if opts.get("input") and opts.get("sex_column"):
        gap = sex_gap(_load(opts), opts["target"], opts["sex_column"])
        report["sex_gap"] = gap.to_dict()
    _write_json(out / "report.json", report)
    lines = [f"{len(rows)} combinations"]
    for r in rows[:10]:
        lines.append(f"  {r['selector']:>14} + {r['model']:<20} r2={float(r['r2']):.4f} "
                     f"rmse={float(r['rmse']):.2f}")
    if "sex_gap" in report:
        g = report["sex_gap"]
        lines.append(f"sex gap {g['gap']:.1f} g (95% CI {g['ci_low']:.1f} to {g['ci_high']:.1f})")
    print("\n".join(lines))
    return ["report.json"]


COMMANDS = {"eda": cmd_eda, "impute": cmd_impute, "select": cmd_select, "train": cmd_train,
            "predict": cmd_predict, "grid": cmd_grid, "synth": cmd_synth, "report": cmd_report}
INPUT_KEYS = ("input", "report", "model_file")


def execute(command, opts, out_dir: Path, argv=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {}
    for key in INPUT_KEYS:
        if opts.get(key) and Path(opts[key]).is_file():
            inputs[key] = {"path": str(opts[key]), "sha256": file_hash(opts[key])}
    written, extra = COMMANDS[command](opts, out_dir), {}
    if isinstance(written, tuple):
        written, extra = written
    manifest = {
        "bwpipe_version": __version__,
        "command": command,
        "argv": list(argv) if argv is not None else None,
        "options": opts,
        "seed": opts.get("seed"),
        "mode": opts.get("mode"),
        "config_hash": hashlib.sha256(json.dumps(opts, sort_keys=True).encode()).hexdigest(),
        "inputs": inputs,
        "outputs": {f: file_hash(out_dir / f) for f in written},
        **extra,
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def replay(manifest_path, out_dir=None):
    with open(manifest_path, encoding="utf-8") as fh:
        man = json.load(fh)
    for key, info in man.get("inputs", {}).items():
        if not Path(info["path"]).is_file():
            raise DataError(f"replay input missing: {info['path']}")
        if file_hash(info["path"]) != info["sha256"]:
            raise DataError(f"replay input changed since the manifest was written: {info['path']}")
    out = Path(out_dir) if out_dir else Path(manifest_path).resolve().parent
    return execute(man["command"], man["options"], out, man.get("argv"))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.replay:
            replay(args.replay, args.output_dir)
            return EXIT_OK
        if not args.command:
            raise UsageError(parser.format_usage() + "bwpipe: error: a subcommand is required")
        config = _read_config(args.config, args.command) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k in OPTIONS}
        opts = resolve(args.command, flags, config)
        out = args.output_dir or config.get("output_dir") or os.environ.get(ENV_OUTPUT) or "bwpipe_out"
        execute(args.command, opts, Path(out), argv)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, MetricError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"bwpipe: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, KeyError, ValueError) as exc:
        print(f"bwpipe: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
