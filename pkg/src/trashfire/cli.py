"""Command-line front end: simulate -> fit -> validate -> trash -> report.

Exit codes: 0 success, 2 schema/contract error, 3 convergence error,
4 identifiability or empty-subset error.  Diagnostics go to stderr as
``level=... code=... msg=...`` lines.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import report as rpt
from .cost import EmptySubsetError, trash_analysis
from .fitting import ConvergenceError, FitConfig, IdentifiabilityError, _worker_count, fit_aft, fit_cox
from .ingest import EncodingMeta, apply_encoding, encode, parse_log, split_indices, write_csv
from .models import AftFamily, model_from_dict
from .synthetic import GeneratorSpec, generate
from .validation import validate

FAMILIES = [f.value for f in AftFamily] + ["cox"]


class UsageError(Exception):
    pass


def _emit(level: str, code: int, msg: str) -> None:
    print(f"level={level} code={code} msg={json.dumps(str(msg))}", file=sys.stderr)


# ---------------------------------------------------------------------------
# canonical JSON: sorted keys, floats at 17 significant digits


def _encode(obj, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return "null"
        text = format(value, ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(obj[k], indent + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_canonical(obj) -> str:
    return _encode(obj, 0) + "\n"


def _write_json(path, obj) -> None:
    Path(path).write_text(dumps_canonical(obj))


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg})") from None


def _nulls_to_nan(doc):
    if isinstance(doc, dict):
        return {k: _nulls_to_nan(v) if k == "covariance" else v for k, v in doc.items()}
    if isinstance(doc, list):
        return [_nulls_to_nan(v) for v in doc]
    return math.nan if doc is None else doc


def _load_model(path):
    doc = _read_json(path)
    model_doc = doc.get("model", doc)
    if model_doc.get("covariance") is not None:
        model_doc = dict(model_doc, covariance=_nulls_to_nan(model_doc["covariance"]))
    return doc, model_from_dict(model_doc)


def _log_format(path: str, declared: str | None) -> str:
    if declared:
        return declared
    return "jsonl" if path.endswith((".jsonl", ".ndjson")) else "csv"


def _read_records(path: str, fmt: str | None):
    with open(path, "rb") as fh:
        return parse_log(fh, _log_format(path, fmt))


def _splits_from_model(doc: dict, records):
    meta = EncodingMeta.from_dict(doc["encoding"])
    split = doc["split"]
    train_idx, test_idx = split_indices(len(records), split["seed"], split["test_fraction"])
    train = apply_encoding([records[i] for i in train_idx], meta, "train")
    test = apply_encoding([records[i] for i in test_idx], meta, "test")
    return meta, train, test


# ---------------------------------------------------------------------------
# sub-commands


def cmd_fit(args) -> None:
    if args.family not in FAMILIES:
        raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(FAMILIES)}")
    records = _read_records(args.input, args.format)
    train, _ = encode(records, seed=args.seed, test_fraction=args.test_fraction)
    config = FitConfig(max_iterations=args.max_iterations, ridge_penalty=args.ridge)
    model = fit_cox(train, config) if args.family == "cox" else fit_aft(args.family, train, config)
    _write_json(
        args.out,
        {
            "model": model.to_dict(),
            "encoding": train.encoding_meta.to_dict(),
            "split": {"seed": args.seed, "test_fraction": args.test_fraction},
            "n_records": len(records),
        },
    )


def cmd_validate(args) -> None:
    doc, model = _load_model(args.model)
    records = _read_records(args.input, args.format)
    _, train, test = _splits_from_model(doc, records)
    horizon = None if args.horizon == "median" else float(args.horizon)
    rep = validate(model, train, test, horizon=horizon, knots=args.knots)
    lo, hi = (float(v) for v in args.qq_window.split(","))
    qq = rpt.qq_calibration_data(model, train, test, grid=args.qq_grid, window=(lo, hi))
    out = rep.to_dict()
    out["family"] = doc["model"]["family"]
    out["qq"] = qq
    _write_json(args.out, out)


def _parse_profile(text: str, feature_names):
    if text == "mean":
        return None
    value = json.loads(text)
    if isinstance(value, dict):
        unknown = set(value) - set(feature_names)
        if unknown:
            raise UsageError(f"profile names unknown features {sorted(unknown)}")
        return np.array([float(value.get(name, 0.0)) for name in feature_names])
    profile = np.asarray(value, dtype=float)
    if profile.shape != (len(feature_names),):
        raise UsageError(f"profile needs {len(feature_names)} values")
    return profile


def cmd_trash(args) -> None:
    doc, model = _load_model(args.model)
    records = _read_records(args.input, args.format)
    meta = EncodingMeta.from_dict(doc["encoding"])
    data = apply_encoding(records, meta, "all")
    t_train = None if args.t_train == "from-data" else float(args.t_train)
    profile = _parse_profile(args.profile, model.feature_names)
    epsilon_max = float(args.epsilon_max)
    result = trash_analysis(model, data, epsilon_max=epsilon_max, t_train=t_train, profile=profile, t_star=args.t_star)
    out = result.to_dict()
    out["epsilon_max"] = epsilon_max if math.isfinite(epsilon_max) else "inf"
    out["family"] = doc["model"]["family"]
    _write_json(args.out, out)


def cmd_simulate(args) -> None:
    spec = GeneratorSpec.from_dict(_read_json(args.spec))
    records = generate(spec)
    if _log_format(args.out, args.format) == "jsonl":
        with open(args.out, "w") as fh:
            for r in records:
                fh.write(json.dumps(r.to_row()) + "\n")
    else:
        with open(args.out, "w", newline="") as fh:
            write_csv(records, fh)


def _split_list(text: str | None) -> list[str]:
    return [p for p in (text or "").split(",") if p]


def cmd_report(args) -> None:
    model_paths = _split_list(args.models)
    report_paths = _split_list(args.reports)
    if len(model_paths) != len(report_paths):
        raise UsageError("--models and --reports must list the same number of files")
    names = [Path(p).stem for p in model_paths]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def load(i):
        return _load_model(model_paths[i])[1], _read_json(report_paths[i])

    with ThreadPoolExecutor(max_workers=_worker_count(None)) as pool:
        loaded = list(pool.map(load, range(len(model_paths))))
    models = [(name, m) for name, (m, _) in zip(names, loaded)]
    reports = [r for _, r in loaded]
    table = rpt.model_comparison_table(models, reports)
    rpt.write_csv(table, out_dir / "comparison.csv", rpt.TABLE_COLUMNS)

    coef = {name: rpt.coefficient_plot_data(m) for name, m in models}
    coef_rows = [
        {"model": name, "feature": r.feature, "coefficient": r.coefficient, "lower": r.lower, "upper": r.upper}
        for name, rows in coef.items()
        for r in rows
    ]
    rpt.write_csv(coef_rows, out_dir / "coefficients.csv", ["model", "feature", "coefficient", "lower", "upper"])
    rpt.coefficient_svg(coef, out_dir / "coefficients.svg")

    qq = {name: rep.get("qq", {}) for name, rep in zip(names, reports)}
    qq_rows = [
        {"model": name, "split": split, "observed": o, "theoretical": t}
        for name, data in qq.items()
        for split in ("train", "test")
        for o, t in data.get(split, [])
    ]
    rpt.write_csv(qq_rows, out_dir / "qq.csv", ["model", "split", "observed", "theoretical"])
    rpt.qq_svg(qq, out_dir / "qq.svg")

    trash_paths = _split_list(args.trash)
    if trash_paths:
        entries = []
        for path in trash_paths:
            doc = _read_json(path)
            fields = {k: doc[k] for k in ("t_train", "expected_survival", "trash_score", "verdict", "horizon")}
            entries.append((Path(path).stem, fields))
        rows = rpt.trash_table(entries)
        rpt.write_csv(rows, out_dir / "trash.csv")
        rpt.trash_svg(rows, out_dir / "trash.svg")
    else:
        _emit("info", 0, "no --trash files given; trash.csv/trash.svg skipped")


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trashfire", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a survival model to an experiment log")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--family", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--ridge", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate", help="AIC/BIC, concordance and calibration on train and test splits")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--horizon", default="median")
    p.add_argument("--knots", type=int, default=5)
    p.add_argument("--qq-grid", type=int, default=50)
    p.add_argument("--qq-window", default="0,10", help="time window 'start,end' in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("trash", help="TRASH score for an attack-strength budget")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--epsilon-max", default="inf")
    p.add_argument("--t-train", default="from-data")
    p.add_argument("--profile", default="mean")
    p.add_argument("--t-star", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trash)

    p = sub.add_parser("simulate", help="generate a synthetic experiment log")
    p.add_argument("--spec", required=True)
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="comparison table, coefficient, QQ and TRASH plots")
    p.add_argument("--models", required=True)
    p.add_argument("--reports", required=True)
    p.add_argument("--trash")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (IdentifiabilityError, EmptySubsetError)):
        return 4
    if isinstance(exc, ConvergenceError):
        return 3
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _emit("error", 2, exc)
        return 2
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            args.func(args)
            code = 0
        except (UsageError, ValueError, KeyError, OSError, ConvergenceError, IdentifiabilityError) as exc:
            code = _exit_code(exc)
            detail = f"missing field {exc}" if isinstance(exc, KeyError) else exc
            _emit("error", code, f"{type(exc).__name__}: {detail}")
    for w in caught:
        _emit("warning", 0, w.message)
    return code


if __name__ == "__main__":
    sys.exit(main())
