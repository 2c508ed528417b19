"""Command-line interface.

Exit codes: 0 success, 1 unexpected library error, 2 configuration error,
3 data error, 4 numeric failure (NaN loss, shape mismatch).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import statistics
import sys
import tempfile
from pathlib import Path

from . import __version__
from .data import (
    DATA_DIR_ENV, UJI_SITE, SitePlan, SyntheticConfig, fit_scaler, generate_synthetic, infer_site_plan,
    load_cache, load_ujiindoorloc_csv, records_to_dataset, resolve_data_dir, save_cache,
)
from .errors import ConfigError, DataError, HstError
from .evaluation import ERROR_MODELS, ErrorModelConfig, EvalReport, evaluate, format_table
from .experiment import load_bundle, load_config, train_run
from .models import predict

log = logging.getLogger("hstloc")

UJI_SOURCE = "https://archive.ics.uci.edu/dataset/310/ujiindoorloc"
UJI_FILES = ("trainingData.csv", "validationData.csv")


def _write_atomically(out: Path, force: bool, writer) -> None:
    """Run ``writer(tmp_dir)`` and move the result to ``out`` only on success."""
    if out.exists() and not force:
        raise ConfigError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=out.parent))
    try:
        writer(tmp)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def cmd_prepare_data(args) -> int:
    train_recs = load_ujiindoorloc_csv(args.train_csv, "train")
    test_recs = load_ujiindoorloc_csv(args.test_csv, "test")
    if not train_recs or not test_recs:
        raise DataError("empty CSV file")
    site = infer_site_plan(train_recs)
    if site.n_aps == UJI_SITE.n_aps and site.n_buildings <= UJI_SITE.n_buildings:
        site = UJI_SITE
    scaler = fit_scaler([[r.longitude, r.latitude] for r in train_recs])
    train = records_to_dataset(train_recs, site, scaler, "train")
    test = records_to_dataset(test_recs, site, scaler, "test")
    source = {"kind": "ujiindoorloc", "train_csv": Path(args.train_csv).name, "test_csv": Path(args.test_csv).name}
    _write_atomically(Path(args.out), args.force, lambda d: save_cache(d, {"train": train, "test": test}, source))
    print(f"train={len(train)} test={len(test)}")
    return 0


def cmd_synth(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.site:
        doc["site"] = {"floors_per_building": [int(f) for f in args.site.split(",")], "n_aps": args.aps}
    for key, value in (("train_records", args.train), ("test_records", args.test),
                       ("noise_sigma", args.sigma), ("threshold", args.threshold)):
        if value is not None:
            doc[key] = value
    try:
        cfg = SyntheticConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(f"synthetic config: {exc}") from None
    train, test, site = generate_synthetic(cfg, args.seed)
    source = {"kind": "synthetic", "seed": args.seed, "config": cfg.to_dict()}
    _write_atomically(Path(args.out), args.force, lambda d: save_cache(d, {"train": train, "test": test}, source))
    print(f"train={len(train)} test={len(test)}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.mode, args.seed)
    if args.data:
        cfg.data = {"cache": args.data}
    out = Path(args.out or cfg.output_dir)
    result = train_run(cfg, out_dir=out)
    for name, seconds in result.timing.items():
        print(f"{name}: {seconds / 60:.3f} min")
    print(f"wrote {len(result.results)} stage archive(s) to {out}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_bundle(args.weights, args.model)
    data_dir = resolve_data_dir(args.data) if args.data else None
    if data_dir is None:
        raise ConfigError("--data (or $%s) is required" % DATA_DIR_ENV)
    splits = load_cache(data_dir)
    if args.split not in splits:
        raise DataError(f"{data_dir}: no {args.split!r} split")
    ds = splits[args.split]
    if ds.site != bundle.site:
        raise ConfigError(f"site plan of {data_dir} does not match the trained model")
    error_model = ErrorModelConfig(args.error_model, args.building_penalty, args.floor_penalty, args.floor_height)
    pred = predict(bundle, ds.features)
    report = evaluate(pred, (ds.building, ds.floor, ds.coords), error_model, bundle.kind, ds.digest())
    out = Path(args.out) if args.out else Path(args.weights)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    table = format_table([report])
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return 0


def _mean_std(values):
    mean = statistics.fmean(values)
    return mean, (statistics.stdev(values) if len(values) > 1 else None)


def cmd_report(args) -> int:
    groups: dict[str, list[tuple[EvalReport, dict]]] = {}
    error_models = set()
    for run in args.runs:
        run = Path(run)
        rpath = run / "report.json"
        if not rpath.is_file():
            raise DataError(f"{run}: no report.json (run `evaluate` first)")
        report = EvalReport.from_dict(json.loads(rpath.read_text()))
        tpath = run / "timing.json"
        timing = json.loads(tpath.read_text()) if tpath.is_file() else {}
        error_models.add(json.dumps(report.error_model, sort_keys=True))
        groups.setdefault(report.model, []).append((report, timing))
    if len(error_models) > 1:
        raise ConfigError("runs were evaluated with different error models; refusing to aggregate")

    perf_rows, time_rows, summary = [], [], {}
    for kind, items in groups.items():
        reports = [r for r, _ in items]
        agg = EvalReport(**{
            **reports[0].to_dict(),
            **{f: statistics.fmean(getattr(r, f) for r in reports)
               for f in ("building_hit", "floor_hit", "mean", "std", "min", "median", "max")},
            "model": f"{kind} (n={len(reports)})",
        })
        perf_rows.append(agg)
        minutes = [t["seconds"]["total"] / 60 for _, t in items if t]
        t_mean, t_std = _mean_std(minutes) if minutes else (float("nan"), None)
        err_mean, err_std = _mean_std([r.mean for r in reports])
        time_rows.append((kind, len(minutes), t_mean, t_std))
        summary[kind] = {"runs": len(reports), "mean_error": err_mean, "mean_error_std": err_std,
                         "floor_hit": agg.floor_hit, "building_hit": agg.building_hit,
                         "train_minutes": t_mean, "train_minutes_std": t_std}

    print(format_table(perf_rows))
    print()
    print(f"{'Model':>20}  {'Runs':>4}  {'Average time [min]':>18}  {'Std.':>8}")
    for kind, n, mean, std in time_rows:
        print(f"{kind:>20}  {n:>4}  {mean:>18.3f}  {'-' if std is None else f'{std:.3f}':>8}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_fetch_data(args) -> int:
    print(f"UJIIndoorLoc source: {UJI_SOURCE}")
    print(f"expected files: {', '.join(UJI_FILES)}")
    if not args.checksums:
        return 0
    expected = json.loads(Path(args.checksums).read_text())
    root = resolve_data_dir(args.dir)
    bad = 0
    for name, digest in expected.items():
        path = root / name
        if not path.is_file():
            print(f"MISSING  {path}")
            bad += 1
            continue
        actual = hashlib.sha256(path.read_bytes()).hexdigest()
        ok = actual == digest
        bad += not ok
        print(f"{'OK' if ok else 'MISMATCH':8} {path}")
    if bad:
        raise DataError(f"{bad} file(s) missing or corrupted")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hstloc", description="Stage-wise training of linked networks for Wi-Fi fingerprint localization.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare-data", help="parse UJIIndoorLoc CSVs into a dataset cache")
    s.add_argument("--train-csv", required=True)
    s.add_argument("--test-csv", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("synth", help="generate a synthetic multi-building site as a dataset cache")
    s.add_argument("--site", help="floors per building, e.g. 3,3")
    s.add_argument("--aps", type=int, default=50)
    s.add_argument("--train", type=int)
    s.add_argument("--test", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--threshold", type=float)
    s.add_argument("--config", help="JSON file with SyntheticConfig fields")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model from a JSON run config")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=("hst", "reference"))
    s.add_argument("--seed", type=int)
    s.add_argument("--data", help="dataset cache directory (overrides the config)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="hit rates and 3-D error of a trained run")
    s.add_argument("--weights", required=True, help="run directory written by `train`")
    s.add_argument("--data", help=f"dataset cache directory (or ${DATA_DIR_ENV})")
    s.add_argument("--split", default="test")
    s.add_argument("--model", help="expected model kind")
    s.add_argument("--error-model", choices=ERROR_MODELS, default="penalty")
    s.add_argument("--building-penalty", type=float, default=50.0)
    s.add_argument("--floor-penalty", type=float, default=4.0)
    s.add_argument("--floor-height", type=float, default=4.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="aggregate evaluated runs into comparison tables")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("fetch-data", help="print the dataset source and verify local file checksums")
    s.add_argument("--dir", default=".")
    s.add_argument("--checksums", help="JSON mapping file name -> sha256")
    s.set_defaults(func=cmd_fetch_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
