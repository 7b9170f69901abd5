"""``maldicom`` command line.

Exit codes: 0 success / all clean, 1 operational error, 2 something
Suspicious was found, 3 a Polyglot was found.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import polyglot
from .detector import DetectorConfig, ScanReport, Verdict, classify_file
from .dicom import Tag
from .errors import MalDicomError, SchemaMismatch
from .polyglot import InjectionRecord

EXIT_OK, EXIT_ERROR, EXIT_SUSPICIOUS, EXIT_POLYGLOT = 0, 1, 2, 3
INJECT_FLAG_ENV = "MALDICOM_ENABLE_INJECT"
SEED_ENV = "MALDICOM_SEED"
DEFAULT_SEED = 42


class CliError(Exception):
    """Operational problem reported to the user as ``error: ...`` with exit 1."""


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_ERROR


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise CliError(f"{SEED_ENV}={env!r} is not an integer")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}")


def _check_writable(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")


# --- scan --------------------------------------------------------------------

def collect_dicom_paths(paths: Sequence[str]) -> list[str]:
    """Files named explicitly are always scanned; directories contribute ``*.dcm`` recursively."""
    found = set()
    for p in paths:
        if os.path.isdir(p):
            for root, _, files in os.walk(p):
                found.update(os.path.join(root, f) for f in files if f.lower().endswith(".dcm"))
        elif os.path.lexists(p):
            found.add(p)
        else:
            raise CliError(f"no such file or directory: {p}")
    return sorted(found)


def scan_exit_code(reports: Sequence[ScanReport]) -> int:
    verdicts = {r.verdict for r in reports}
    if Verdict.POLYGLOT in verdicts:
        return EXIT_POLYGLOT
    if Verdict.SUSPICIOUS in verdicts:
        return EXIT_SUSPICIOUS
    return EXIT_OK


def run_scan(paths: Sequence[str], config: DetectorConfig, as_json: bool = False, workers: Optional[int] = None) -> int:
    files = collect_dicom_paths(paths)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda p: classify_file(p, config), files))
    reports.sort(key=lambda r: r.path)
    for r in reports:
        if as_json:
            print(r.to_json())
        else:
            print(f"{r.verdict.value:<10} H={r.entropy_bits:5.3f}  read={r.bytes_read:<10} {r.path}")
            for e in r.evidence:
                print(f"    {e.kind.value} @ {e.offset}: {e.detail}")
    if not as_json:
        counts = {v: sum(r.verdict is v for r in reports) for v in Verdict}
        print(f"{len(reports)} file(s): " + ", ".join(f"{n} {v.value}" for v, n in counts.items()))
    return scan_exit_code(reports)


# --- inject / extract ----------------------------------------------------------

def record_path_for(out_path: str) -> str:
    return out_path + ".record.json"


def run_inject(
    pe_path: str,
    dicom_path: str,
    out_path: str,
    payload_tag: Tag,
    research_ack: bool,
    force: bool = False,
    dump_intermediate: Optional[str] = None,
    as_json: bool = False,
) -> int:
    if os.environ.get(INJECT_FLAG_ENV) != "1":
        raise CliError(f"inject is disabled in this build; set {INJECT_FLAG_ENV}=1 to enable it")
    if not research_ack:
        raise CliError("inject builds weaponisable files; it requires --i-understand-research-use")
    pe_bytes, dicom_bytes = _read(pe_path), _read(dicom_path)
    sidecar = record_path_for(out_path)
    _check_writable(out_path, force)
    _check_writable(sidecar, force)

    data, record = polyglot.create_pe_dicom(pe_bytes, dicom_bytes, payload_tag, dump_intermediate)
    Path(out_path).write_bytes(data)
    Path(sidecar).write_text(record.to_json() + "\n")
    check = polyglot.verify_polyglot(data)

    if as_json:
        print(json.dumps({"out": out_path, "record": json.loads(record.to_json()), "verified": check.all_true}))
    else:
        print(f"wrote {out_path} ({len(data)} bytes) and {sidecar}")
        print(f"  payload tag       {record.payload_tag}")
        print(f"  e_lfanew          {record.original_e_lfanew} -> {record.new_e_lfanew}")
        print(f"  rebase delta      {record.rebase_delta:+d}  (padding {record.padding_len})")
        print(f"  stub truncated    {record.stub_truncated_bytes} byte(s)")
        print(f"  verify            dicom={check.is_dicom} pe={check.is_pe} "
              f"e_lfanew->PE={check.e_lfanew_target_is_pe_sig}")
    return EXIT_OK if check.all_true else EXIT_ERROR


def run_extract(polyglot_path: str, record_path: str, out_path: str, force: bool = False, as_json: bool = False) -> int:
    data = _read(polyglot_path)
    record = InjectionRecord.from_json(_read(record_path).decode("utf-8", errors="replace"))
    _check_writable(out_path, force)
    pe_bytes = polyglot.extract_pe(data, record)
    Path(out_path).write_bytes(pe_bytes)
    lost = record.stub_truncated_bytes
    if as_json:
        print(json.dumps({"out": out_path, "bytes": len(pe_bytes), "lost_stub_bytes": lost}))
    else:
        print(f"wrote {out_path} ({len(pe_bytes)} bytes)")
        if lost:
            print(f"  {lost} DOS stub byte(s) were lost at injection and are zero-filled")
    return EXIT_OK


# --- triage ----------------------------------------------------------------------

def _load_csv(path: str):
    from .triage import load_malmem_csv

    if not os.path.exists(path):
        raise CliError(f"no such file: {path}")
    return load_malmem_csv(path)


def _check_columns(expected: Optional[list], got: list) -> None:
    if expected is None or list(expected) == list(got):
        return
    missing = [c for c in expected if c not in got]
    extra = [c for c in got if c not in expected]
    detail = f"missing {missing}, unexpected {extra}" if missing or extra else "same columns in a different order"
    raise SchemaMismatch(f"CSV columns do not match the model: {detail}")


def _load_model(path: str):
    from .triage import load_model

    if not os.path.exists(path):
        raise CliError(f"no such file: {path}")
    try:
        return load_model(path)
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"{path} is not a readable model file: {exc}")


def _split_from_header(header: dict):
    from .triage import SplitSpec

    split = header.get("split") or {}
    known = SplitSpec.__dataclass_fields__
    return SplitSpec(**{k: v for k, v in split.items() if k in known})


def _emit_metrics(payload: dict, confusion_csv: Optional[str], confusion_out: Optional[str]) -> None:
    print(json.dumps(payload, sort_keys=True))
    if confusion_out:
        Path(confusion_out).write_text(confusion_csv)


def run_train(
    csv_path: str,
    kind: str,
    seed: int,
    n_estimators: int = 100,
    k: int = 5,
    task: str = "family",
    max_depth: Optional[int] = None,
    smote: bool = True,
    test_size: float = 0.2,
    out: Optional[str] = None,
    confusion_out: Optional[str] = None,
    n_jobs: Optional[int] = None,
) -> int:
    from .triage import SplitSpec, save_model, train_and_evaluate

    d = _load_csv(csv_path)
    spec = SplitSpec(task=task, test_size=test_size, seed=seed, smote=smote)
    hp = {"n_estimators": n_estimators, "k": k, "max_depth": max_depth, "n_jobs": n_jobs}
    model, metrics, prepared = train_and_evaluate(d, kind, spec, **hp)
    if out:
        save_model(model, out, feature_names=d.feature_names, split=spec.to_dict())
    payload = metrics.to_dict(kind)
    payload.update(n_train=len(prepared.X_train), n_synthetic=prepared.n_synthetic, n_test=len(prepared.X_test),
                   n_classes=len(metrics.labels), split=spec.to_dict())
    _emit_metrics(payload, metrics.confusion_csv(), confusion_out)
    return EXIT_OK


def run_eval(model_path: str, csv_path: str, confusion_out: Optional[str] = None) -> int:
    from .triage import evaluate, stratified_split

    model, header = _load_model(model_path)
    d = _load_csv(csv_path)
    _check_columns(header.get("feature_names"), d.feature_names)
    spec = _split_from_header(header)
    _, test = stratified_split(d, spec.task, spec.test_size, spec.seed)
    metrics = evaluate(model, test.X, test.labels(spec.task))
    payload = metrics.to_dict(header["kind"])
    payload.update(n_test=len(test), n_classes=len(metrics.labels), split=spec.to_dict())
    _emit_metrics(payload, metrics.confusion_csv(), confusion_out)
    return EXIT_OK


def _players(model, x, background, k: int, seed: int) -> np.ndarray:
    """Top-``k`` features by impurity importance, or by a sampled pre-pass for models without one."""
    from .triage import shapley_values

    scores = getattr(model, "feature_importances_", None)
    if scores is None:
        scores = np.abs(shapley_values(model, x, background, mode="sampled", n_permutations=256, seed=seed).phi)
    scores = np.asarray(scores)
    return np.sort(np.lexsort((np.arange(scores.size), -scores))[:k])


def run_explain(
    model_path: str,
    csv_path: str,
    row: int,
    seed: int,
    exact_features: Optional[int] = None,
    n_permutations: int = 2048,
    background_size: int = 100,
    top: int = 10,
    out: Optional[str] = None,
    as_json: bool = False,
) -> int:
    from .triage import select_background, shapley_values, stratified_split
    from .triage.shapley import MAX_EXACT_PLAYERS

    model, header = _load_model(model_path)
    d = _load_csv(csv_path)
    _check_columns(header.get("feature_names"), d.feature_names)
    if not 0 <= row < len(d):
        raise CliError(f"row {row} out of range; the CSV has {len(d)} data rows")
    if exact_features is not None and not 1 <= exact_features <= MAX_EXACT_PLAYERS:
        raise CliError(f"--exact-features must be between 1 and {MAX_EXACT_PLAYERS}")

    spec = _split_from_header(header)
    train, _ = stratified_split(d, spec.task, spec.test_size, spec.seed)
    background = select_background(train.X, background_size, seed)
    x = d.X[row]
    if exact_features is not None:
        players = _players(model, x, background, exact_features, seed)
        expl = shapley_values(model, x, background, mode="exact", features=players)
    else:
        expl = shapley_values(model, x, background, mode="sampled", n_permutations=n_permutations, seed=seed)

    names = d.feature_names
    rows = [(names[j], float(expl.phi[j])) for j in range(len(names))]
    ranked = sorted(expl.players.tolist(), key=lambda j: (-abs(expl.phi[j]), j))[:top]
    target = str(model.classes_[expl.target])

    if out:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "phi"])
            w.writerows((n, repr(p)) for n, p in rows)
    if as_json:
        print(json.dumps({
            "row": row, "target": target, "mode": expl.mode, "base_value": expl.base_value, "fx": expl.fx,
            "efficiency_gap": expl.efficiency_gap,
            "top": [{"feature": names[j], "phi": float(expl.phi[j])} for j in ranked],
        }))
    else:
        if not out:
            w = csv.writer(sys.stdout)
            w.writerow(["feature", "phi"])
            w.writerows((n, repr(p)) for n, p in rows)
        summary = sys.stdout if out else sys.stderr
        print(f"row {row}: target {target}, f(x)={expl.fx:.6f}, base={expl.base_value:.6f}, "
              f"mode={expl.mode}, efficiency gap={expl.efficiency_gap:.3e}", file=summary)
        for rank, j in enumerate(ranked, 1):
            print(f"  {rank:>2}. {names[j]:<45} {expl.phi[j]:+.6f}", file=summary)
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------

def _tag(text: str) -> Tag:
    try:
        return Tag.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maldicom", description="DICOM/PE polyglot scanner and memory-dump triage.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scan", help="scan DICOM files or directories for PE payloads")
    s.add_argument("paths", nargs="+")
    s.add_argument("--json", action="store_true", help="one JSON report per line")
    s.add_argument("--entropy-threshold", type=float, default=DetectorConfig.entropy_threshold)
    s.add_argument("--fast", action="store_true", help="preamble-only scan with a constant read budget")
    s.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("inject", help="build a PE/DICOM polyglot (research use, gated)")
    s.add_argument("pe")
    s.add_argument("dicom")
    s.add_argument("out")
    s.add_argument("--payload-tag", type=_tag, default=polyglot.DEFAULT_PAYLOAD_TAG, metavar="GGGG,EEEE")
    s.add_argument("--force", action="store_true")
    s.add_argument("--i-understand-research-use", dest="research_ack", action="store_true")
    s.add_argument("--dump-intermediate", metavar="PATH")
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("extract", help="recover the PE from a polyglot and its record")
    s.add_argument("polyglot")
    s.add_argument("record")
    s.add_argument("out")
    s.add_argument("--force", action="store_true")
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("train", help="train a triage model and report held-out metrics")
    s.add_argument("csv")
    s.add_argument("--model", choices=("dt", "rf", "knn", "gnb"), default="rf")
    s.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or {DEFAULT_SEED}")
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--max-depth", type=int, default=None)
    s.add_argument("--task", choices=("family", "category"), default="family")
    s.add_argument("--test-size", type=float, default=0.2)
    s.add_argument("--no-smote", action="store_true")
    s.add_argument("--jobs", type=int, default=None, help="parallel workers for forest training")
    s.add_argument("--out", help="save the fitted model as JSON")
    s.add_argument("--confusion-out", help="write the confusion matrix as CSV")

    s = sub.add_parser("eval", help="re-evaluate a saved model on its held-out split")
    s.add_argument("model")
    s.add_argument("csv")
    s.add_argument("--confusion-out")

    s = sub.add_parser("explain", help="Shapley attribution for one CSV row")
    s.add_argument("model")
    s.add_argument("csv")
    s.add_argument("--row", type=int, default=0)
    s.add_argument("--exact-features", type=int, default=None, metavar="K",
                   help="exact enumeration over the K most important features")
    s.add_argument("--permutations", type=int, default=2048)
    s.add_argument("--background", type=int, default=100)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", help="write the feature,phi CSV here")
    s.add_argument("--json", action="store_true")
    return p


def _dispatch(a: argparse.Namespace) -> int:
    if a.command == "scan":
        cfg = DetectorConfig(entropy_threshold=a.entropy_threshold, mode="fast" if a.fast else "full")
        return run_scan(a.paths, cfg, a.json, a.workers)
    if a.command == "inject":
        return run_inject(a.pe, a.dicom, a.out, a.payload_tag, a.research_ack, a.force, a.dump_intermediate, a.json)
    if a.command == "extract":
        return run_extract(a.polyglot, a.record, a.out, a.force, a.json)
    if a.command == "train":
        return run_train(a.csv, a.model, resolve_seed(a.seed), a.trees, a.k, a.task, a.max_depth,
                         not a.no_smote, a.test_size, a.out, a.confusion_out, a.jobs)
    if a.command == "eval":
        return run_eval(a.model, a.csv, a.confusion_out)
    if a.command == "explain":
        return run_explain(a.model, a.csv, a.row, resolve_seed(a.seed), a.exact_features, a.permutations,
                           a.background, a.top, a.out, a.json)
    raise AssertionError(a.command)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except CliError as exc:
        return _fail(str(exc))
    except MalDicomError as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    except (OSError, ValueError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
