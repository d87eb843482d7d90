"""Command-line interface.

Subcommands::

    simulate   write a synthetic dataset CSV
    run        run a pipeline config on a dataset, score file or synthetic data
    metrics    recompute power / FDP / variance from a rejections CSV
    sweep      grid over config fields, one report per cell plus a tidy CSV
"""
import argparse
import csv
import dataclasses
import itertools
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .data_synth import DatasetError, Subsample, SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .harness import PipelineConfig, evaluate, run_experiment, run_from_scores
from .scoring import ScoreFileError, ingest_scores

logger = logging.getLogger("conformal_evalues")

SYNTH_FIELDS = {f.name for f in dataclasses.fields(SyntheticConfig)}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(doc, key, value):
    parts = key.split(".")
    target = doc
    for p in parts[:-1]:
        target = target.setdefault(p, {})
    target[parts[-1]] = value


def _overrides(pairs):
    out = []
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out.append((key.strip(), _parse_value(value)))
    return out


def _load_config(path, overrides):
    doc = {}
    if path:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key, value in overrides:
        _apply_override(doc, key, value)
    synthetic = doc.pop("synthetic", None)
    return doc, synthetic


def write_rejections_csv(path, rejections):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["analysis", "test_index", "rejected"])
        for m, row in enumerate(np.asarray(rejections, dtype=bool)):
            for j, r in enumerate(row):
                w.writerow([m, j, int(r)])


def read_rejections_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"analysis", "test_index", "rejected"}:
            raise ValueError(f"{path}: header must be analysis,test_index,rejected")
        entries = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                entries.append((int(rec["analysis"]), int(rec["test_index"]), int(rec["rejected"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: line {lineno}: malformed row") from None
    if not entries:
        raise ValueError(f"{path}: no rows")
    arr = np.array(entries)
    out = np.zeros((arr[:, 0].max() + 1, arr[:, 1].max() + 1), dtype=bool)
    out[arr[:, 0], arr[:, 1]] = arr[:, 2] == 1
    return out


def _synthetic_from(args_doc, flags):
    doc = dict(args_doc or {})
    for name in SYNTH_FIELDS:
        v = getattr(flags, name, None)
        if v is not None:
            doc[name] = v
    return SyntheticConfig(**doc)


def _add_synth_flags(p):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--d", type=int)
    g.add_argument("--n-ref", dest="n_ref", type=int)
    g.add_argument("--n-test", dest="n_test", type=int)
    g.add_argument("--outlier-prop", dest="outlier_prop", type=float)
    g.add_argument("--amplitude", type=float)
    g.add_argument("--signal-dims", dest="signal_dims", type=int)
    g.add_argument("--seed", type=int)


def cmd_simulate(args):
    cfg = _synthetic_from(json.loads(Path(args.config).read_text()) if args.config else None, args)
    save_dataset(generate_synthetic(cfg), args.out)
    logger.info("wrote %s", args.out)
    return 0


def _subsample(args):
    if args.subsample is None:
        return None
    n_ref, n_test, prop, *rest = args.subsample.split(",")
    return Subsample(int(n_ref), int(n_test), float(prop), int(rest[0]) if rest else 0)


def _report_summary(report):
    return {
        "power_hat": None if math.isnan(report.power_hat) else report.power_hat,
        "fdr_hat": None if math.isnan(report.fdr_hat) else report.fdr_hat,
        "variance_hat": report.variance_hat,
        "M": int(report.rejections.shape[0]),
        "warnings": report.warnings,
    }


def cmd_run(args):
    doc, synth_doc = _load_config(args.config, _overrides(args.set))
    cfg = PipelineConfig.from_dict(doc)
    if args.scores:
        sets = ingest_scores(args.scores)
        rej, evalues = run_from_scores(sets, cfg)
        result = {
            "config": cfg.to_dict(),
            "n_test": rej.n_test,
            "rejections": rej.indices.tolist(),
            "evalues": None if evalues is None else evalues.tolist(),
        }
        Path(args.out).write_text(json.dumps(result, indent=2), encoding="utf-8")
        if args.rejections:
            write_rejections_csv(args.rejections, rej.mask()[None, :])
        print(json.dumps({"n_rejections": len(rej)}))
        return 0
    if args.data:
        source = load_dataset(args.data, _subsample(args))
    else:
        source = _synthetic_from(synth_doc, args)
    report = run_experiment(cfg, source)
    Path(args.out).write_text(report.to_json(indent=2), encoding="utf-8")
    if args.rejections:
        write_rejections_csv(args.rejections, report.rejections)
    print(json.dumps(_report_summary(report)))
    return 0


def cmd_metrics(args):
    rejections = read_rejections_csv(args.rejections)
    data = load_dataset(args.labels)
    if data.test_labels is None:
        raise DatasetError(f"{args.labels}: no is_outlier column")
    metrics = evaluate(rejections, data.test_labels)
    out = {
        "power_hat": None if math.isnan(metrics.power) else metrics.power,
        "fdr_hat": metrics.fdr,
        "variance_hat": metrics.variance,
        "power_se": metrics.power_se,
        "fdr_se": metrics.fdr_se,
        "variance_se": metrics.variance_se,
        "warnings": list(metrics.warnings),
    }
    print(json.dumps(out))
    return 0


def _parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"grid entry must look like name=v1,v2, got {item!r}")
        name, values = item.split("=", 1)
        grid[name.strip()] = [_parse_value(v) for v in values.split(",")]
    return grid


def sweep(base_doc, synth_doc, grid, out_dir):
    """Run every grid cell and write one report per cell plus ``tidy.csv``.

    Grid keys are PipelineConfig fields (dotted for nested ones) or
    SyntheticConfig fields (``amplitude``, ``seed``, ...).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(grid)
    rows = []
    for i, values in enumerate(itertools.product(*(grid[n] for n in names))):
        doc = json.loads(json.dumps(base_doc))
        sdoc = dict(synth_doc or {})
        for name, value in zip(names, values):
            if name in SYNTH_FIELDS:
                sdoc[name] = value
            else:
                _apply_override(doc, name, value)
        cfg = PipelineConfig.from_dict(doc)
        report = run_experiment(cfg, SyntheticConfig(**sdoc))
        (out_dir / f"cell_{i:03d}.json").write_text(report.to_json(indent=2), encoding="utf-8")
        param = "|".join(names)
        value = "|".join(str(v) for v in values)
        for metric, est, se in (
            ("power", report.power_hat, report.power_se),
            ("fdr", report.fdr_hat, report.fdr_se),
            ("variance", report.variance_hat, report.variance_se),
        ):
            rows.append([param, value, metric, est, se])
        logger.info("cell %d %s=%s done", i, param, value)
    with open(out_dir / "tidy.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "metric", "estimate", "stderr"])
        w.writerows(rows)
    return rows


def cmd_sweep(args):
    doc, synth_doc = _load_config(args.config, _overrides(args.set))
    synth = dataclasses.asdict(_synthetic_from(synth_doc, args))
    sweep(doc, synth, _parse_grid(args.grid), args.out_dir)
    print(json.dumps({"out_dir": str(args.out_dir)}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="conformal-evalues", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset CSV")
    p.add_argument("--config", help="JSON with SyntheticConfig fields")
    _add_synth_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run a pipeline config")
    p.add_argument("--config", help="PipelineConfig JSON (optional 'synthetic' section)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field; dotted keys for nested fields")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="dataset CSV")
    src.add_argument("--scores", help="score CSV (repetition,role,score)")
    p.add_argument("--subsample", metavar="N_REF,N_TEST,PROP[,SEED]")
    _add_synth_flags(p)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--rejections", help="rejections CSV path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="recompute metrics from a rejections CSV")
    p.add_argument("--rejections", required=True)
    p.add_argument("--labels", required=True, help="dataset CSV with role and is_outlier columns")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="grid sweep with tidy CSV output")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--grid", action="append", required=True, metavar="NAME=V1,V2,...")
    _add_synth_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError, DatasetError, ScoreFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
