"""Console entry point: ``edmri <command> [options]``.

Exit codes are 0 on success, 1 on runtime failure and 2 on usage errors.
Failures also print one JSON object to stderr::

    {"error": "<ExceptionType>", "message": "...", "exit_code": 1}

Every command writes ``manifest.json`` next to its results. Result files
depend only on inputs and ``--seed``; the manifest carries timestamps.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from edmri import __version__
from edmri.errors import EdmriError
from edmri.features import FEATURE_MODES, extract_features, feature_names
from edmri.ingest import (
    clinical_feature_names, encode_clinical, impute_clinical, read_clinical_csv,
    read_labels_csv, read_mvol, write_mvol,
)
from edmri.phantom import FASCIA_SHAPES, RADIUS_PROFILES, SIGNALS, PhantomSpec, generate_cohort
from edmri.preprocess import PreprocessConfig, preprocess_mask, preprocess_volume
from edmri.volume import MaskVolume

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"


class UsageError(Exception):
    """Invalid arguments detected after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------- helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _hash_inputs(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = _sha256(f)
        elif p.is_file():
            out[str(p)] = _sha256(p)
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: Path, args, inputs, artifacts, started, extra=None):
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k != "handler"}
    doc = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs_sha256": _hash_inputs(inputs),
        "artifacts": sorted(str(Path(a).relative_to(out_dir)) if Path(a).is_relative_to(out_dir) else str(a)
                            for a in artifacts),
        "version": __version__,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    _write_json(out_dir / MANIFEST, doc)


def _require_file(path: Path, what: str):
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def _write_table(path: Path, header, ids, matrix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for pid, row in zip(ids, matrix):
            writer.writerow([pid] + [repr(float(v)) for v in row])


def read_table(path):
    """Read a ``patient_id,<numeric columns...>`` CSV into (ids, names, matrix)."""
    path = Path(path)
    _require_file(path, "table")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "patient_id":
        raise EdmriError(f"{path}: first column must be patient_id")
    names = rows[0][1:]
    ids, values = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(names) + 1:
            raise EdmriError(f"{path}:{i}: expected {len(names) + 1} fields, got {len(row)}")
        ids.append(row[0])
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise EdmriError(f"{path}:{i}: {exc}") from None
    return ids, names, np.asarray(values, dtype=float).reshape(len(ids), len(names))


# --------------------------------------------------------------------------- commands


def _parse_dims(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must be three comma-separated integers, got {text!r}")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must be three positive integers, got {text!r}")
    return dims


def _non_negative(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _at_least(minimum):
    def parse(text):
        value = int(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value
    return parse


def cmd_phantom(args):
    started = time.time()
    spec = PhantomSpec(
        n_patients=args.n, dims=args.dims, signal=args.signal, fascia_shape=args.fascia_shape,
        radius_profile=args.radius_profile, taper=args.taper, missing_rate=args.missing_rate,
        with_image=not args.no_image, seed=args.seed,
    )
    out = generate_cohort(spec, args.out)
    artifacts = sorted(str(p) for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    _write_manifest(out, args, [], artifacts, started)


def cmd_features(args):
    started = time.time()
    mask_dir = Path(args.masks)
    if not mask_dir.is_dir():
        raise FileNotFoundError(f"mask directory not found: {mask_dir}")
    files = sorted(mask_dir.glob("*.mvol"))
    if not files:
        raise EdmriError(f"no .mvol files in {mask_dir}")
    ids, rows = [], []
    for f in files:
        mask = read_mvol(f)
        if not isinstance(mask, MaskVolume):
            raise EdmriError(f"{f}: expected a label mask, found an image volume")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rows.append(extract_features(mask, args.mode))
        ids.append(f.stem)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_table(out, ["patient_id"] + feature_names(args.mode), ids, rows)
    _write_manifest(out.parent, args, [mask_dir], [out], started)


def _load_config(path):
    if path is None:
        return PreprocessConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a JSON object")
    try:
        return PreprocessConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid preprocess config: {exc}") from None


def cmd_preprocess(args):
    started = time.time()
    src = Path(args.input)
    _require_file(src, "input volume")
    if args.config is not None:
        _require_file(Path(args.config), "config")
    config = _load_config(args.config)
    volume = read_mvol(src)
    result = preprocess_mask(volume, config) if isinstance(volume, MaskVolume) else preprocess_volume(volume, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mvol(result, out)
    inputs = [src] + ([args.config] if args.config else [])
    _write_manifest(out.parent, args, inputs, [out], started,
                    extra={"preprocess_config": config.to_dict()})


def _assemble_design(args):
    """Join imaging features, clinical variables and labels on patient_id."""
    labels_path = Path(args.labels)
    _require_file(labels_path, "labels file")
    labels = {o.patient_id: o.binary for o in read_labels_csv(labels_path)}
    blocks, names, n_imaging = [], [], 0
    ids = None
    if args.features:
        f_ids, f_names, f_matrix = read_table(args.features)
        ids = f_ids
        blocks.append(dict(zip(f_ids, f_matrix)))
        names += f_names
        n_imaging = len(f_names)
    ages, exclude = None, None
    if args.clinical:
        clinical_path = Path(args.clinical)
        _require_file(clinical_path, "clinical file")
        records = read_clinical_csv(clinical_path)
        by_id = {r.patient_id: r for r in records}
        ids = ids if ids is not None else [r.patient_id for r in records]
        incomplete = {r.patient_id for r in records if r.missing()}
        completed, _ = impute_clinical(records)
        encoded = encode_clinical(completed)
        c_names = clinical_feature_names()
        ages = {r.patient_id: r.age for r in completed}
        keep_cols = [i for i, n in enumerate(c_names) if not (args.model == "mtl" and n == "age")]
        blocks.append({r.patient_id: encoded[i, keep_cols] for i, r in enumerate(completed)})
        names += [c_names[i] for i in keep_cols]
        missing_ids = [pid for pid in ids if pid not in by_id]
        if missing_ids:
            raise EdmriError(f"{clinical_path}: no clinical record for {missing_ids[:5]}")
        if args.strict:
            exclude = np.array([pid in incomplete for pid in ids])
    if ids is None:
        raise UsageError("provide --features, --clinical or both")
    missing = [pid for pid in ids if pid not in labels]
    if missing:
        raise EdmriError(f"{labels_path}: no label for {missing[:5]}")
    for block in blocks:
        absent = [pid for pid in ids if pid not in block]
        if absent:
            raise EdmriError(f"no feature row for {absent[:5]}")
    X = np.column_stack([np.stack([block[pid] for pid in ids]) for block in blocks])
    y = np.array([labels[pid] for pid in ids])
    fit_params = {}
    if args.model == "mtl":
        if ages is None:
            raise UsageError("the mtl model needs --clinical for its age target")
        fit_params["age"] = np.array([ages[pid] for pid in ids], dtype=float)
    return ids, names, X, y, n_imaging, fit_params, exclude


def cmd_train_eval(args):
    from edmri.cv import CVPlan, default_space, nested_cv
    from edmri.models.checkpoint import save_checkpoint

    started = time.time()
    if args.model == "fusion" and not (args.features and args.clinical):
        raise UsageError("the fusion model needs both --features and --clinical")
    ids, names, X, y, n_imaging, fit_params, exclude = _assemble_design(args)
    fixed = {"max_epochs": args.max_epochs, "patience": args.patience}
    if args.model == "fusion":
        fixed["n_imaging"] = n_imaging
    space = default_space(args.model, **fixed)
    plan = CVPlan(outer_k=args.outer, inner_k=args.inner, trials=args.trials, seed=args.seed)
    result = nested_cv(X, y, space, plan, fit_params=fit_params, exclude=exclude)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    metrics = result.metrics_document()
    metrics["n_samples"] = int(y.size)
    metrics["n_excluded"] = int(exclude.sum()) if exclude is not None else 0
    metrics["feature_names"] = names
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "chosen_configs.json", result.chosen_configs())
    artifacts += [out / "metrics.json", out / "chosen_configs.json"]
    for fold in result.folds:
        roc_path = out / f"roc_fold{fold.fold}.csv"
        with open(roc_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fpr", "tpr", "threshold"])
            for row in zip(fold.roc["fpr"], fold.roc["tpr"], fold.roc["threshold"]):
                writer.writerow([repr(float(v)) for v in row])
        model_path = out / f"model_fold{fold.fold}.json"
        save_checkpoint(fold.model, model_path, feature_names=names)
        artifacts += [roc_path, model_path]
    design = out / "design.csv"
    with open(design, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id"] + names + ["label"])
        for pid, row, label in zip(ids, X, y):
            writer.writerow([pid] + [repr(float(v)) for v in row] + [int(label)])
    artifacts.append(design)
    inputs = [p for p in (args.features, args.clinical, args.labels) if p]
    _write_manifest(out, args, inputs, artifacts, started)


def _columns(path, wanted):
    ids, names, matrix = read_table(path)
    index = {n: i for i, n in enumerate(names)}
    absent = [n for n in wanted if n not in index]
    if absent:
        raise EdmriError(f"{path}: missing model columns {absent[:5]}")
    return ids, matrix[:, [index[n] for n in wanted]]


def _load_partition(path, names):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"partition {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not doc:
        raise UsageError("partition must be a non-empty JSON object of group -> feature list")
    index = {n: i for i, n in enumerate(names)}
    partition = {}
    for group, members in doc.items():
        idx = []
        for m in members:
            if isinstance(m, int) and 0 <= m < len(names):
                idx.append(m)
            elif isinstance(m, str) and m in index:
                idx.append(index[m])
            else:
                raise UsageError(f"partition group {group!r}: unknown feature {m!r}")
        partition[group] = idx
    return partition


def cmd_explain(args):
    from edmri.explain import MAX_EXACT_FEATURES, shapley_exact, shapley_sampled, summarize
    from edmri.models.checkpoint import load_checkpoint

    started = time.time()
    for p, what in ((args.model, "model checkpoint"), (args.features, "features"), (args.background, "background")):
        _require_file(Path(p), what)
    model = load_checkpoint(args.model)
    names = [str(n) for n in model.feature_names_in_]
    d = len(names)
    if d > MAX_EXACT_FEATURES and not args.sampled:
        raise UsageError(f"{d} features exceeds the exact-enumeration limit of {MAX_EXACT_FEATURES}; "
                         "rerun with --sampled")
    partition = _load_partition(args.partition, names) if args.partition else None
    if partition is not None:
        from edmri.explain import _check_partition
        try:
            _check_partition(partition, d)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    ids, X = _columns(args.features, names)
    _, background = _columns(args.background, names)
    if args.max_background and background.shape[0] > args.max_background:
        pick = np.random.default_rng(args.seed).choice(background.shape[0], args.max_background, replace=False)
        background = background[np.sort(pick)]
    if args.limit:
        ids, X = ids[: args.limit], X[: args.limit]

    def predict(Z):
        if args.output == "logit":
            return model.decision_function(Z)
        return model.predict_proba(Z)[:, 1]

    reports = []
    for i, x in enumerate(X):
        if args.sampled:
            rng = np.random.default_rng([args.seed, i])
            reports.append(shapley_sampled(predict, x, background, args.permutations, rng, feature_names=names))
        else:
            reports.append(shapley_exact(predict, x, background, feature_names=names))
    summary = summarize(reports, partition, names, signed=args.signed)
    doc = {
        "method": "sampled" if args.sampled else "exact",
        "output": args.output,
        "n_features": d,
        "n_background": int(background.shape[0]),
        "feature_names": names,
        "summary": summary.to_dict(),
        "instances": [{"patient_id": pid, **r.to_dict()} for pid, r in zip(ids, reports)],
    }
    if partition is None:
        del doc["summary"]["modality_share"]
    else:
        doc["partition"] = {g: [names[i] for i in idx] for g, idx in partition.items()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, doc)
    inputs = [args.model, args.features, args.background] + ([args.partition] if args.partition else [])
    _write_manifest(out.parent, args, inputs, [out], started)


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edmri", description="Prostate-fascia feature extraction and outcome modelling.")
    parser.add_argument("--version", action="version", version=f"edmri {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic cohort with ground truth")
    p.add_argument("--n", type=_non_negative, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", choices=SIGNALS, default="strong")
    p.add_argument("--dims", type=_parse_dims, default=(512, 512, 24))
    p.add_argument("--fascia-shape", choices=FASCIA_SHAPES, default="asymmetric")
    p.add_argument("--radius-profile", choices=RADIUS_PROFILES, default="cylinder")
    p.add_argument("--taper", type=float, default=0.0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--no-image", action="store_true", help="write masks only")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("features", help="extract thickness and volume features from masks")
    p.add_argument("--masks", type=Path, required=True)
    p.add_argument("--mode", choices=FEATURE_MODES, default="all")
    p.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity; unused")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("preprocess", help="resample, clip, normalize and crop one volume")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0, help="accepted for interface uniformity; unused")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("train-eval", help="nested cross-validation of one model kind")
    p.add_argument("--features", type=Path)
    p.add_argument("--clinical", type=Path)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--model", choices=("logreg", "svm", "mlp", "fusion", "mtl"), default="logreg")
    p.add_argument("--trials", type=_at_least(1), default=50)
    p.add_argument("--outer", type=_at_least(2), default=5)
    p.add_argument("--inner", type=_at_least(2), default=3)
    p.add_argument("--max-epochs", type=_at_least(1), default=400)
    p.add_argument("--patience", type=_at_least(1), default=50)
    p.add_argument("--strict", action="store_true", help="drop rows with missing clinical values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_train_eval)

    p = sub.add_parser("explain", help="Shapley attributions for a saved model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--background", type=Path, required=True)
    p.add_argument("--partition", type=Path)
    p.add_argument("--sampled", action="store_true")
    p.add_argument("--permutations", type=_at_least(1), default=2000)
    p.add_argument("--max-background", type=_non_negative, default=0)
    p.add_argument("--limit", type=_non_negative, default=0)
    p.add_argument("--signed", action="store_true", help="signed rather than absolute modality shares")
    p.add_argument("--output", choices=("probability", "logit"), default="probability",
                   help="model output to attribute")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_explain)
    return parser


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        args.handler(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except (EdmriError, OSError, ValueError) as exc:
        return _fail(exc, EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
